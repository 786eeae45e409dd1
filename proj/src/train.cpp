#include "binorm/train.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "binorm/error.hpp"
#include "binorm/rng.hpp"

namespace binorm {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Tensor4 gather_images(const Split& split, std::span<const std::size_t> idx) {
  const Shape& s = split.images.shape();
  Tensor4 batch(Shape{idx.size(), s.c, s.h, s.w});
  const std::size_t vol = s.c * s.h * s.w;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto src = split.images.data().subspan(idx[b] * vol, vol);
    std::copy(src.begin(), src.end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * vol));
  }
  return batch;
}

template <typename T>
void read_if(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

json layer_to_json(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const ConvLayer& l) {
            return json{{"type", "conv"},
                        {"in_channels", l.spec.in_channels},
                        {"out_channels", l.spec.out_channels},
                        {"kernel", l.spec.kernel},
                        {"padding", l.spec.padding},
                        {"weight", tensor_to_json(l.weight)},
                        {"bias", l.bias.data}};
          },
          [](const NormLayer& l) { return norm_layer_to_json(l.spec.kind, l.params); },
          [](const ReluLayer&) { return json{{"type", "relu"}}; },
          [](const AvgPoolLayer& l) { return json{{"type", "avgpool"}, {"window", l.spec.window}}; },
          [](const FcLayer& l) {
            return json{{"type", "fc"},
                        {"in_features", l.spec.in_features},
                        {"out_features", l.spec.out_features},
                        {"weight", l.weight},
                        {"bias", l.bias}};
          },
      },
      layer);
}

Layer layer_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "conv") {
    ConvLayer l;
    l.spec = ConvSpec{j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                      j.at("kernel").get<std::size_t>(), j.at("padding").get<std::size_t>()};
    l.weight = tensor_from_json(j.at("weight"));
    l.bias = ChannelVec(j.at("bias").get<std::vector<double>>());
    if (l.weight.shape() != Shape{l.spec.out_channels, l.spec.in_channels, l.spec.kernel, l.spec.kernel} ||
        l.bias.size() != l.spec.out_channels) {
      throw InvalidShape("conv layer weights do not match its declared shape");
    }
    return l;
  }
  if (type == "bn" || type == "in" || type == "bin") {
    auto rec = norm_layer_from_json(j);
    NormLayer l;
    l.spec = NormSpec{rec.kind, rec.params.channels(), rec.params.eps, rec.params.running_momentum};
    l.params = std::move(rec.params);
    return l;
  }
  if (type == "relu") return ReluLayer{};
  if (type == "avgpool") return AvgPoolLayer{AvgPoolSpec{j.at("window").get<std::size_t>()}, {}};
  if (type == "fc") {
    FcLayer l;
    l.spec = FcSpec{j.at("in_features").get<std::size_t>(), j.at("out_features").get<std::size_t>()};
    l.weight = j.at("weight").get<std::vector<double>>();
    l.bias = j.at("bias").get<std::vector<double>>();
    if (l.weight.size() != l.spec.in_features * l.spec.out_features ||
        l.bias.size() != l.spec.out_features) {
      throw InvalidShape("fc layer weights do not match its declared shape");
    }
    return l;
  }
  throw InvalidShape("unknown layer type '" + type + "' in checkpoint");
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (n_train == 0 || n_test == 0) throw ConfigError("n_train and n_test must be >= 1");
  if (net.channels == 0) throw ConfigError("channels must be >= 1");
  if (!(net.eps > 0.0)) throw ConfigError("eps must be positive");
  if (data.height < 16 || data.width < 16) throw ConfigError("image size must be >= 16");
  if (net.height != data.height || net.width != data.width) {
    throw ConfigError("network input size does not match the image size");
  }
  const int labels = task == Task::Shape ? kNumShapeClasses : data.num_style_buckets;
  if (net.num_classes != static_cast<std::size_t>(labels)) {
    throw ConfigError("network class count does not match the task's label count");
  }
  build_toy_net(net);
}

json run_config_to_json(const RunConfig& cfg) {
  json schedule = json::array();
  for (const auto& [epoch, divisor] : cfg.train.lr_schedule) schedule.push_back({epoch, divisor});
  return json{{"norm", std::string(to_string(cfg.net.norm_kind))},
              {"task", std::string(to_string(cfg.task))},
              {"seed", cfg.train.seed},
              {"epochs", cfg.train.epochs},
              {"batch_size", cfg.train.batch_size},
              {"lr", cfg.train.base_lr},
              {"momentum", cfg.train.momentum},
              {"weight_decay", cfg.train.weight_decay},
              {"gate_lr_mult", cfg.train.gate_lr_multiplier},
              {"lr_schedule", schedule},
              {"eps", cfg.net.eps},
              {"running_momentum", cfg.net.momentum},
              {"channels", cfg.net.channels},
              {"norm_layers", cfg.net.num_norm_layers},
              {"padding", cfg.net.padding},
              {"n_train", cfg.n_train},
              {"n_test", cfg.n_test},
              {"size", cfg.data.height},
              {"clamp", cfg.data.clamp},
              {"out", cfg.out_dir.string()}};
}

RunConfig run_config_from_json(const json& j, RunConfig cfg) {
  static const std::set<std::string> known = {
      "norm",     "task",          "seed",        "epochs", "batch_size", "lr",
      "momentum", "weight_decay",  "gate_lr_mult", "lr_schedule", "eps",  "running_momentum",
      "channels", "norm_layers",   "padding",     "n_train", "n_test",    "size",
      "clamp",    "out"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("norm")) cfg.net.norm_kind = parse_norm_kind(j.at("norm").get<std::string>());
    if (j.contains("task")) cfg.task = parse_task(j.at("task").get<std::string>());
    read_if(j, "seed", cfg.train.seed);
    read_if(j, "epochs", cfg.train.epochs);
    read_if(j, "batch_size", cfg.train.batch_size);
    read_if(j, "lr", cfg.train.base_lr);
    read_if(j, "momentum", cfg.train.momentum);
    read_if(j, "weight_decay", cfg.train.weight_decay);
    read_if(j, "gate_lr_mult", cfg.train.gate_lr_multiplier);
    if (j.contains("lr_schedule")) {
      cfg.train.lr_schedule.clear();
      for (const auto& item : j.at("lr_schedule")) {
        cfg.train.lr_schedule.emplace_back(item.at(0).get<std::size_t>(), item.at(1).get<double>());
      }
    }
    read_if(j, "eps", cfg.net.eps);
    read_if(j, "running_momentum", cfg.net.momentum);
    read_if(j, "channels", cfg.net.channels);
    read_if(j, "norm_layers", cfg.net.num_norm_layers);
    read_if(j, "padding", cfg.net.padding);
    read_if(j, "n_train", cfg.n_train);
    read_if(j, "n_test", cfg.n_test);
    if (j.contains("size")) {
      cfg.data.height = cfg.data.width = j.at("size").get<std::size_t>();
    }
    read_if(j, "clamp", cfg.data.clamp);
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  cfg.net.height = cfg.data.height;
  cfg.net.width = cfg.data.width;
  cfg.net.num_classes =
      cfg.task == Task::Shape ? kNumShapeClasses : static_cast<std::size_t>(cfg.data.num_style_buckets);
  return cfg;
}

std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,split,loss,accuracy\n";
  char buf[128];
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f\n", r.step, r.split.c_str(), r.loss, r.accuracy);
    out += buf;
  }
  return out;
}

EvalResult evaluate(Network& net, const Split& split, std::size_t batch_size) {
  const std::size_t n = split.labels.size();
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Tensor4 logits = net.forward(gather_images(split, idx), Mode::Eval);
    const auto labels = std::span<const int>(split.labels).subspan(start, end - start);
    const XentResult r = softmax_xent(logits, labels);
    loss += r.loss * static_cast<double>(end - start);
    correct += r.correct;
  }
  return EvalResult{loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

Dataset make_run_dataset(const RunConfig& cfg) {
  return make_dataset(cfg.task, cfg.n_train, cfg.n_test, cfg.train.seed, cfg.data);
}

TrainResult run_training(const RunConfig& cfg) { return run_training(cfg, make_run_dataset(cfg)); }

TrainResult run_training(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  TrainResult result{Network(build_toy_net(cfg.net), tc.seed), {}, {}};
  Network& net = result.net;
  Velocity velocity;

  const std::size_t n = data.train.labels.size();
  std::vector<std::size_t> order(n);
  std::vector<int> labels;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(tc.seed, "batches/epoch" + std::to_string(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const double lr = tc.lr_at_epoch(epoch);

    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t end = std::min(n, start + tc.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(start, end - start);
      labels.resize(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = data.train.labels[idx[b]];

      const Tensor4 logits = net.forward(gather_images(data.train, idx), Mode::Train);
      const XentResult r = softmax_xent(logits, labels);
      net.backward(r.d_logits);
      const auto params = net.parameters();
      sgd_step(params, velocity, tc, lr);
      ++step;
      result.metrics.push_back(
          {step, "train", r.loss, static_cast<double>(r.correct) / static_cast<double>(idx.size())});
    }
    const EvalResult test = evaluate(net, data.test);
    result.metrics.push_back({step, "test", test.loss, test.accuracy});
    result.final_test = test;
  }
  return result;
}

json checkpoint_to_json(const Network& net, const RunConfig& cfg) {
  json layers = json::array();
  for (const Layer& l : net.layers()) layers.push_back(layer_to_json(l));
  return json{{"format", "binorm-checkpoint"}, {"version", 1}, {"config", run_config_to_json(cfg)},
              {"layers", layers}};
}

namespace {

void check_checkpoint_format(const json& j) {
  if (!j.is_object() || j.value("format", "") != "binorm-checkpoint")
    throw ConfigError("not a binorm checkpoint");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported checkpoint version");
}

}  // namespace

Network network_from_checkpoint(const json& j) {
  check_checkpoint_format(j);
  try {
    std::vector<Layer> layers;
    for (const auto& item : j.at("layers")) layers.push_back(layer_from_json(item));
    return Network(std::move(layers));
  } catch (const json::exception& e) {
    throw InvalidShape(std::string("malformed checkpoint: ") + e.what());
  }
}

RunConfig config_from_checkpoint(const json& j) {
  check_checkpoint_format(j);
  if (!j.contains("config")) throw ConfigError("checkpoint has no config section");
  return run_config_from_json(j.at("config"));
}

}  // namespace binorm
