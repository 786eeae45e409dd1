#include "binorm/gates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "binorm/error.hpp"

namespace binorm {

std::vector<GateLayerSummary> summarize_gates(const json& checkpoint, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  if (!checkpoint.contains("layers")) throw InvalidShape("checkpoint has no layers");
  std::vector<GateLayerSummary> out;
  for (const auto& layer : checkpoint.at("layers")) {
    if (layer.value("type", "") != "bin") continue;
    const NormLayerRecord rec = norm_layer_from_json(layer);
    GateLayerSummary s;
    s.layer = out.size();
    s.rho = rec.params.rho.data;
    s.counts.assign(bins, 0);
    double sum = 0.0;
    for (double r : s.rho) {
      sum += r;
      const auto b = static_cast<std::size_t>(std::floor(r * static_cast<double>(bins)));
      ++s.counts[std::min(b, bins - 1)];
    }
    s.mean = sum / static_cast<double>(s.rho.size());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ContractViolation("no gates: checkpoint contains no BIN layers");
  return out;
}

std::string gate_histogram_csv(const std::vector<GateLayerSummary>& layers, std::size_t bins) {
  std::string out = "layer,bin_lo,bin_hi,count\n";
  char buf[96];
  for (const auto& l : layers) {
    for (std::size_t i = 0; i < bins; ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%zu\n", l.layer,
                    static_cast<double>(i) / static_cast<double>(bins),
                    static_cast<double>(i + 1) / static_cast<double>(bins), l.counts[i]);
      out += buf;
    }
  }
  return out;
}

std::string gate_values_csv(const std::vector<GateLayerSummary>& layers) {
  std::string out = "layer_index,channel_index,rho\n";
  char buf[96];
  for (const auto& l : layers) {
    for (std::size_t c = 0; c < l.rho.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", l.layer, c, l.rho[c]);
      out += buf;
    }
  }
  return out;
}

std::string gate_summary_line(const std::vector<GateLayerSummary>& layers) {
  std::string out = "gates:";
  char buf[64];
  for (const auto& l : layers) {
    std::snprintf(buf, sizeof buf, " layer%zu mean_rho=%.4f", l.layer, l.mean);
    out += buf;
  }
  return out;
}

}  // namespace binorm
