#pragma once

#include <string>
#include <vector>

#include "binorm/serialize.hpp"

namespace binorm {

struct GateLayerSummary {
  std::size_t layer = 0;  ///< ordinal among gated layers, shallowest first
  std::vector<double> rho;
  double mean = 0.0;
  std::vector<std::size_t> counts;  ///< histogram over [0, 1] in equal bins
};

/// Histograms of every gated (bin or bn+in) layer in a checkpoint. Bin i
/// covers [i/bins, (i+1)/bins); the last bin also holds rho = 1.
/// Throws ContractViolation("no gates ...") when the checkpoint has none.
std::vector<GateLayerSummary> summarize_gates(const json& checkpoint, std::size_t bins);

/// `layer,bin_lo,bin_hi,count`
std::string gate_histogram_csv(const std::vector<GateLayerSummary>& layers, std::size_t bins);
/// `layer_index,channel_index,rho`
std::string gate_values_csv(const std::vector<GateLayerSummary>& layers);
/// One line: "gates: layer0 mean_rho=... layer1 mean_rho=..."
std::string gate_summary_line(const std::vector<GateLayerSummary>& layers);

}  // namespace binorm
