#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "binorm/norm.hpp"

namespace binorm {

struct GradCheckReport {
  std::string param_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckTolerances {
  double rel_tol = 1e-5;
  double abs_tol = 1e-8;
  double step = 1e-5;
};

using ScalarFn = std::function<double(std::span<const double>)>;

/// (f(theta + h e_i) - f(theta - h e_i)) / 2h. Throws OracleFailure when f is
/// not finite at either probe or h is not positive.
double central_diff(const ScalarFn& f, std::span<const double> theta, std::size_t i, double h);

/// Central differences for every coordinate of theta.
std::vector<double> numeric_gradient(const ScalarFn& f, std::span<const double> theta, double h);

/// Element-wise comparison. An element whose absolute error is within abs_tol
/// counts as passing and is excluded from max_rel_err, so
/// passed == (max_rel_err <= rel_tol || max_abs_err <= abs_tol).
GradCheckReport compare_gradients(std::string name, std::span<const double> analytic,
                                  std::span<const double> numeric,
                                  const GradCheckTolerances& tol);

/// Merges reports for the same parameter group (e.g. from two losses).
GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b,
                              const GradCheckTolerances& tol);

/// The analytic backward under test. Swappable so a deliberately broken
/// backward can be fed through the same harness.
using NormBackwardFn =
    std::function<GradBundle(NormKind, const NormCache&, const NormParams&, const Tensor4&)>;

struct LayerCheckCase {
  NormKind kind = NormKind::BIN;
  Shape shape{};
  std::uint64_t seed = 0;
};

/// Checks one normalization layer against central differences in double
/// precision using two losses: the plain output sum and a weighted sum with
/// fixed random weights. Returns one report per parameter group ("input",
/// "gamma", "beta" and, for gated layers, "rho"), each merged over both losses.
/// Deterministic for a fixed case.
std::vector<GradCheckReport> check_layer_gradients(const LayerCheckCase& which,
                                                   const GradCheckTolerances& tol = {},
                                                   const NormBackwardFn& backward = norm_backward);

/// Every BN / IN / BIN configuration over N in {1,2,5}, C in {1,3},
/// H, W in {1,2,4}.
std::vector<LayerCheckCase> default_layer_sweep(std::uint64_t seed);

std::string describe(const LayerCheckCase& c);
std::string format_report(const GradCheckReport& r);

}  // namespace binorm
