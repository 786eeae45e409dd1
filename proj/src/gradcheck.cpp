#include "binorm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "binorm/error.hpp"
#include "binorm/rng.hpp"

namespace binorm {

double central_diff(const ScalarFn& f, std::span<const double> theta, std::size_t i, double h) {
  if (!(h > 0.0)) throw OracleFailure("finite-difference step must be positive");
  if (i >= theta.size()) throw OracleFailure("finite-difference index out of range");
  std::vector<double> probe(theta.begin(), theta.end());
  probe[i] = theta[i] + h;
  const double up = f(probe);
  probe[i] = theta[i] - h;
  const double down = f(probe);
  if (!std::isfinite(up) || !std::isfinite(down)) {
    throw OracleFailure("function is not finite near coordinate " + std::to_string(i));
  }
  return (up - down) / (2.0 * h);
}

std::vector<double> numeric_gradient(const ScalarFn& f, std::span<const double> theta, double h) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) g[i] = central_diff(f, theta, i, h);
  return g;
}

GradCheckReport compare_gradients(std::string name, std::span<const double> analytic,
                                  std::span<const double> numeric,
                                  const GradCheckTolerances& tol) {
  if (analytic.size() != numeric.size()) {
    throw InvalidShape("gradient '" + name + "': analytic and numeric sizes differ");
  }
  GradCheckReport r;
  r.param_name = std::move(name);
  double worst_abs = -1.0;
  std::size_t worst_abs_index = 0;
  bool any_rel = false;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double abs_err = std::abs(analytic[i] - numeric[i]);
    if (!std::isfinite(abs_err)) {
      r.max_abs_err = r.max_rel_err = std::numeric_limits<double>::infinity();
      r.worst_index = i;
      r.passed = false;
      return r;
    }
    if (abs_err > worst_abs) {
      worst_abs = abs_err;
      worst_abs_index = i;
    }
    if (abs_err <= tol.abs_tol) continue;
    const double denom = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    const double rel = abs_err / denom;
    if (!any_rel || rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_index = i;
      any_rel = true;
    }
  }
  r.max_abs_err = std::max(worst_abs, 0.0);
  if (!any_rel) r.worst_index = worst_abs_index;
  r.passed = r.max_rel_err <= tol.rel_tol || r.max_abs_err <= tol.abs_tol;
  return r;
}

GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b,
                              const GradCheckTolerances& tol) {
  GradCheckReport r = a;
  if (b.max_rel_err > a.max_rel_err ||
      (a.max_rel_err == 0.0 && b.max_rel_err == 0.0 && b.max_abs_err > a.max_abs_err)) {
    r.worst_index = b.worst_index;
  }
  r.max_rel_err = std::max(a.max_rel_err, b.max_rel_err);
  r.max_abs_err = std::max(a.max_abs_err, b.max_abs_err);
  r.passed = r.max_rel_err <= tol.rel_tol || r.max_abs_err <= tol.abs_tol;
  return r;
}

namespace {

struct LayerFixture {
  Tensor4 x;
  NormParams params;
  Tensor4 weights;  // second loss: sum(weights * y)
};

LayerFixture make_fixture(const LayerCheckCase& which) {
  Rng rng(which.seed, "gradcheck/" + describe(which));
  LayerFixture f{Tensor4(which.shape), NormParams::init(which.shape.c), Tensor4(which.shape)};
  for (double& v : f.x.data()) v = rng.normal(0.5, 1.5);
  for (std::size_t c = 0; c < which.shape.c; ++c) {
    f.params.gamma[c] = rng.normal(1.0, 0.5);
    f.params.beta[c] = rng.normal(0.0, 1.0);
    if (which.kind == NormKind::BIN) f.params.rho[c] = rng.uniform(0.1, 0.9);
    if (which.kind == NormKind::BnPlusIn) f.params.rho[c] = 0.5;
  }
  for (double& v : f.weights.data()) v = rng.normal();
  return f;
}

bool has_gate(NormKind kind) { return kind == NormKind::BIN || kind == NormKind::BnPlusIn; }

// Forward-only scalar loss; the oracle side never touches a backward routine.
double loss_of(NormKind kind, const Tensor4& x, NormParams p, const Tensor4* weights) {
  const Tensor4 y = norm_forward(kind, x, p, Mode::Train).y;
  if (weights == nullptr) return y.sum();
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (*weights)[i] * y[i];
  return s;
}

std::vector<GradCheckReport> check_one_loss(const LayerCheckCase& which, const LayerFixture& fx,
                                            const Tensor4* weights,
                                            const GradCheckTolerances& tol,
                                            const NormBackwardFn& backward) {
  const NormKind kind = which.kind;
  NormParams p = fx.params;
  auto out = norm_forward(kind, fx.x, p, Mode::Train);
  const Tensor4 dy = weights ? *weights : Tensor4(fx.x.shape(), 1.0);
  const GradBundle g = backward(kind, *out.cache, fx.params, dy);

  std::vector<GradCheckReport> reports;

  const ScalarFn f_input = [&](std::span<const double> theta) {
    Tensor4 x(fx.x.shape(), std::vector<double>(theta.begin(), theta.end()));
    return loss_of(kind, x, fx.params, weights);
  };
  reports.push_back(compare_gradients("input", g.d_input.data(),
                                      numeric_gradient(f_input, fx.x.data(), tol.step), tol));

  auto param_fn = [&](ChannelVec NormParams::*member) {
    return ScalarFn([&, member](std::span<const double> theta) {
      NormParams q = fx.params;
      (q.*member).data.assign(theta.begin(), theta.end());
      return loss_of(kind, fx.x, q, weights);
    });
  };
  reports.push_back(compare_gradients(
      "gamma", g.d_gamma.data,
      numeric_gradient(param_fn(&NormParams::gamma), fx.params.gamma.data, tol.step), tol));
  reports.push_back(compare_gradients(
      "beta", g.d_beta.data,
      numeric_gradient(param_fn(&NormParams::beta), fx.params.beta.data, tol.step), tol));
  if (has_gate(kind)) {
    if (!g.d_rho) throw InvalidShape("gated layer backward did not produce d_rho");
    reports.push_back(compare_gradients(
        "rho", g.d_rho->data,
        numeric_gradient(param_fn(&NormParams::rho), fx.params.rho.data, tol.step), tol));
  }
  return reports;
}

}  // namespace

std::vector<GradCheckReport> check_layer_gradients(const LayerCheckCase& which,
                                                   const GradCheckTolerances& tol,
                                                   const NormBackwardFn& backward) {
  const LayerFixture fx = make_fixture(which);
  auto plain = check_one_loss(which, fx, nullptr, tol, backward);
  auto weighted = check_one_loss(which, fx, &fx.weights, tol, backward);
  for (std::size_t i = 0; i < plain.size(); ++i) plain[i] = merge_reports(plain[i], weighted[i], tol);
  return plain;
}

std::vector<LayerCheckCase> default_layer_sweep(std::uint64_t seed) {
  std::vector<LayerCheckCase> cases;
  for (NormKind kind : {NormKind::BIN, NormKind::BN, NormKind::IN}) {
    for (std::size_t n : {1, 2, 5}) {
      for (std::size_t c : {1, 3}) {
        for (std::size_t h : {1, 2, 4}) {
          for (std::size_t w : {1, 2, 4}) cases.push_back({kind, Shape{n, c, h, w}, seed});
        }
      }
    }
  }
  return cases;
}

std::string describe(const LayerCheckCase& c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s(%zu,%zu,%zu,%zu)", std::string(to_string(c.kind)).c_str(),
                c.shape.n, c.shape.c, c.shape.h, c.shape.w);
  return buf;
}

std::string format_report(const GradCheckReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s max_rel=%.3e max_abs=%.3e worst=%zu %s",
                r.param_name.c_str(), r.max_rel_err, r.max_abs_err, r.worst_index,
                r.passed ? "PASS" : "FAIL");
  return buf;
}

}  // namespace binorm
