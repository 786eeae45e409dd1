#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "binorm/norm.hpp"
#include "binorm/tensor.hpp"

namespace binorm {

using json = nlohmann::json;

/// {"shape": [n, c, h, w], "data": [row-major values]}
json tensor_to_json(const Tensor4& t);
Tensor4 tensor_from_json(const json& j);

/// {"type": "bin"|"bn"|"in", "rho", "gamma", "beta", "running_mean",
///  "running_var", "eps", "momentum"}. A BN+IN layer is stored as "bin" with
/// "rho_frozen": true.
json norm_layer_to_json(NormKind kind, const NormParams& p);

struct NormLayerRecord {
  NormKind kind;
  NormParams params;
};
NormLayerRecord norm_layer_from_json(const json& j);

/// Throws IoError naming the path on failure.
void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);
json read_json_file(const std::filesystem::path& path);

}  // namespace binorm
