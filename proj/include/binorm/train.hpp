#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "binorm/nn.hpp"
#include "binorm/optim.hpp"
#include "binorm/serialize.hpp"
#include "binorm/styledata.hpp"

namespace binorm {

/// Everything a training run depends on. Serialized with the same key names
/// the CLI flags use.
struct RunConfig {
  TrainConfig train{};
  NetConfig net{};
  Task task = Task::Shape;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  DataOptions data{};
  std::filesystem::path out_dir = "out";

  /// Throws ConfigError.
  void validate() const;
};

json run_config_to_json(const RunConfig& cfg);
/// Overlays the keys present in j onto base; unknown keys are a ConfigError.
RunConfig run_config_from_json(const json& j, RunConfig base = {});

struct MetricRow {
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// `step,split,loss,accuracy` with fixed formatting, so equal runs give equal bytes.
std::string metrics_to_csv(const std::vector<MetricRow>& rows);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  ///< fraction in [0, 1]
};

/// Eval-mode pass over a split.
EvalResult evaluate(Network& net, const Split& split, std::size_t batch_size = 250);

struct TrainResult {
  Network net;
  std::vector<MetricRow> metrics;
  EvalResult final_test;
};

/// Deterministic single-threaded training: the dataset, initialization and
/// batch order all derive from cfg.train.seed. Logs a train row per step and a
/// test row after every epoch.
TrainResult run_training(const RunConfig& cfg, const Dataset& data);
TrainResult run_training(const RunConfig& cfg);

Dataset make_run_dataset(const RunConfig& cfg);

json checkpoint_to_json(const Network& net, const RunConfig& cfg);
Network network_from_checkpoint(const json& j);
RunConfig config_from_checkpoint(const json& j);

}  // namespace binorm
