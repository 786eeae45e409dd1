#include "binorm/serialize.hpp"

#include <fstream>
#include <sstream>

#include "binorm/error.hpp"

namespace binorm {

json tensor_to_json(const Tensor4& t) {
  return json{{"shape", {t.n(), t.c(), t.h(), t.w()}}, {"data", t.values()}};
}

Tensor4 tensor_from_json(const json& j) {
  try {
    const auto dims = j.at("shape").get<std::vector<std::size_t>>();
    if (dims.size() != 4) throw InvalidShape("tensor JSON shape must have four entries");
    return Tensor4(Shape{dims[0], dims[1], dims[2], dims[3]},
                   j.at("data").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw InvalidShape(std::string("malformed tensor JSON: ") + e.what());
  }
}

json norm_layer_to_json(NormKind kind, const NormParams& p) {
  json j{{"type", kind == NormKind::BN ? "bn" : kind == NormKind::IN ? "in" : "bin"},
         {"rho", p.rho.data},
         {"gamma", p.gamma.data},
         {"beta", p.beta.data},
         {"running_mean", p.running_mean.data},
         {"running_var", p.running_var.data},
         {"eps", p.eps},
         {"momentum", p.running_momentum}};
  if (kind == NormKind::BnPlusIn) j["rho_frozen"] = true;
  return j;
}

NormLayerRecord norm_layer_from_json(const json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    NormKind kind;
    if (type == "bn") {
      kind = NormKind::BN;
    } else if (type == "in") {
      kind = NormKind::IN;
    } else if (type == "bin") {
      kind = j.value("rho_frozen", false) ? NormKind::BnPlusIn : NormKind::BIN;
    } else {
      throw InvalidShape("unknown normalization layer type '" + type + "'");
    }
    NormParams p;
    p.rho = ChannelVec(j.at("rho").get<std::vector<double>>());
    p.gamma = ChannelVec(j.at("gamma").get<std::vector<double>>());
    p.beta = ChannelVec(j.at("beta").get<std::vector<double>>());
    p.running_mean = ChannelVec(j.at("running_mean").get<std::vector<double>>());
    p.running_var = ChannelVec(j.at("running_var").get<std::vector<double>>());
    p.eps = j.at("eps").get<double>();
    p.running_momentum = j.at("momentum").get<double>();
    p.validate();
    return NormLayerRecord{kind, std::move(p)};
  } catch (const json::exception& e) {
    throw InvalidShape(std::string("malformed normalization layer JSON: ") + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << contents;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace binorm
