// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// An optional argument runs only the criteria whose name contains it.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "binorm/gradcheck.hpp"
#include "binorm/norm.hpp"
#include "binorm/rng.hpp"
#include "binorm/train.hpp"

using namespace binorm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor4 random_tensor(Rng& rng, Shape s) {
  const double mean = rng.uniform(-2.0, 2.0);
  const double stddev = rng.uniform(0.1, 3.0);
  Tensor4 t(s);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

Shape random_shape(Rng& rng, std::size_t n_max) {
  return Shape{1 + rng.below(n_max), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5)};
}

NormParams random_params(Rng& rng, std::size_t c) {
  NormParams p = NormParams::init(c);
  for (std::size_t i = 0; i < c; ++i) {
    p.rho[i] = rng.uniform();
    p.gamma[i] = rng.normal(1.0, 0.5);
    p.beta[i] = rng.normal();
    p.running_mean[i] = rng.normal();
    p.running_var[i] = rng.uniform(0.2, 3.0);
  }
  return p;
}

double rel_err(double got, double want) {
  if (want == 0.0) return std::abs(got);
  return std::abs(got - want) / std::abs(want);
}

double max_rel_err(const Tensor4& got, const Tensor4& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, rel_err(got[i], want[i]));
  return worst;
}

struct Command {
  int status = -1;
  std::string output;
};

Command run_cli(const std::string& args) {
  const std::string cmd = std::string(BINORM_CLI) + " " + args + " 2>&1";
  Command r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

Verdict gradient_fidelity() {
  const auto sweep = default_layer_sweep(0);
  bool has_n1 = false, has_hw1 = false, has_c1 = false;
  std::size_t kinds = 0;
  for (NormKind k : {NormKind::BIN, NormKind::BN, NormKind::IN})
    kinds += std::any_of(sweep.begin(), sweep.end(), [k](const LayerCheckCase& c) { return c.kind == k; });
  for (const auto& c : sweep) {
    has_n1 = has_n1 || c.shape.n == 1;
    has_hw1 = has_hw1 || (c.shape.h == 1 && c.shape.w == 1);
    has_c1 = has_c1 || c.shape.c == 1;
  }
  const auto t0 = Clock::now();
  const Command r = run_cli("gradcheck --target all --rel-tol 1e-5 --abs-tol 1e-8");
  const double secs = seconds_since(t0);

  std::size_t configs = 0;
  const auto pos = r.output.find("gradcheck: ");
  if (pos != std::string::npos) configs = std::stoul(r.output.substr(pos + 11));
  const bool all_passed = r.status == 0 && r.output.find("all passed") != std::string::npos;
  return {all_passed && configs >= 20 && kinds == 3 && has_n1 && has_hw1 && has_c1 && secs < 60.0,
          fmt("%zu configurations (N=1:%d H=W=1:%d C=1:%d), exit %d, %.2fs", configs, has_n1,
              has_hw1, has_c1, r.status, secs)};
}

Verdict reduction_identities() {
  Rng rng(derive_seed(1, "acceptance/reduction"));
  double worst_bn = 0.0, worst_in = 0.0;
  std::size_t half_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s = random_shape(rng, 5);
    const Tensor4 x = random_tensor(rng, s);
    const NormParams base = random_params(rng, s.c);
    const Mode mode = trial % 4 == 3 ? Mode::Eval : Mode::Train;

    NormParams gate1 = base, bn = base;
    gate1.rho = ChannelVec(s.c, 1.0);
    worst_bn = std::max(worst_bn, max_rel_err(bin_forward(x, gate1, mode).y, bn_forward(x, bn, mode).y));

    NormParams gate0 = base, in = base;
    gate0.rho = ChannelVec(s.c, 0.0);
    worst_in = std::max(worst_in, max_rel_err(bin_forward(x, gate0, mode).y, in_forward(x, in, mode).y));

    // BN+IN: the average of the two normalized branches under one affine
    NormParams half = base;
    half.rho = ChannelVec(s.c, 0.5);
    const Tensor4 y = bin_forward(x, half, Mode::Train).y;
    const Tensor4 xb = bn_normalize(x, base.eps).xhat;
    const Tensor4 xi = in_normalize(x, base.eps).xhat;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double explicit_sum =
              (0.5 * xb.plane(n, c)[i] + 0.5 * xi.plane(n, c)[i]) * base.gamma[c] + base.beta[c];
          if (y.plane(n, c)[i] != explicit_sum) ++half_mismatch;
        }
  }
  return {worst_bn <= 1e-6 && worst_in <= 1e-6 && half_mismatch == 0,
          fmt("rho=1 vs bn max rel %.2e, rho=0 vs in max rel %.2e, rho=0.5 mismatches %zu", worst_bn,
              worst_in, half_mismatch)};
}

Verdict single_sample_collapse() {
  Rng rng(derive_seed(2, "acceptance/collapse"));
  std::size_t output_diffs = 0, nonzero_drho = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s{1, 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)};
    const Tensor4 x = random_tensor(rng, s);
    NormParams p = random_params(rng, s.c);
    const NormOutput ref = bin_forward(x, p, Mode::Train);
    for (int alt = 0; alt < 3; ++alt) {
      NormParams q = p;
      for (double& r : q.rho.data) r = rng.uniform();
      if (alt == 0) q.rho = ChannelVec(s.c, 0.0);
      if (alt == 1) q.rho = ChannelVec(s.c, 1.0);
      if (bin_forward(x, q, Mode::Train).y.values() != ref.y.values()) ++output_diffs;
    }
    Tensor4 dy(s);
    for (double& v : dy.data()) v = rng.normal();
    const GradBundle g = bin_backward(*ref.cache, p, dy);
    for (double d : g.d_rho->data) nonzero_drho += d != 0.0;
  }
  return {output_diffs == 0 && nonzero_drho == 0,
          fmt("50 inputs: outputs differing across rho %zu, nonzero d_rho entries %zu", output_diffs,
              nonzero_drho)};
}

Verdict clip_semantics() {
  std::size_t failures = 0;
  auto one = [](double rho, double step) { return clip_update_rho(ChannelVec({rho}), ChannelVec({step}))[0]; };
  failures += one(0.05, 0.1) != 0.0;
  failures += one(0.9, -0.3) != 1.0;
  failures += one(0.5, 0.2) != 0.5 - 0.2;

  Rng rng(derive_seed(3, "acceptance/clip"));
  std::size_t interior = 0, boundary = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = 1 + rng.below(16);
    ChannelVec rho(c), step(c);
    for (std::size_t i = 0; i < c; ++i) {
      rho[i] = rng.uniform();
      step[i] = rng.uniform(-1.5, 1.5) * std::pow(10.0, -static_cast<double>(rng.below(4)));
    }
    const ChannelVec out = clip_update_rho(rho, step);
    for (std::size_t i = 0; i < c; ++i) {
      const double raw = rho[i] - step[i];
      if (!(out[i] >= 0.0 && out[i] <= 1.0)) ++failures;
      if (raw >= 0.0 && raw <= 1.0) {
        ++interior;
        failures += out[i] != raw;
      } else {
        ++boundary;
        failures += out[i] != (raw < 0.0 ? 0.0 : 1.0);
      }
    }
  }
  return {failures == 0, fmt("%zu interior and %zu clipped updates, %zu violations", interior, boundary, failures)};
}

struct RunSummary {
  double accuracy = 0.0;
  std::vector<double> layer_rho;  ///< mean rho per gated layer
  std::vector<double> all_rho;
};

RunSummary train_default(NormKind kind, Task task, std::uint64_t seed) {
  RunConfig cfg;
  cfg.net.norm_kind = kind;
  cfg.task = task;
  cfg.train.seed = seed;
  cfg = run_config_from_json(run_config_to_json(cfg));
  const TrainResult r = run_training(cfg);
  RunSummary s;
  s.accuracy = r.final_test.accuracy;
  for (const NormLayer* l : r.net.norm_layers()) {
    double m = 0.0;
    for (double v : l->params.rho.data) {
      m += v;
      s.all_rho.push_back(v);
    }
    s.layer_rho.push_back(m / static_cast<double>(l->params.rho.size()));
  }
  return s;
}

constexpr int kSeeds = 5;

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Verdict style_nuisance() {
  const auto t0 = Clock::now();
  std::vector<double> bin_acc, bn_acc, all_rho, first, last;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const RunSummary b = train_default(NormKind::BIN, Task::Shape, seed);
    bin_acc.push_back(b.accuracy);
    all_rho.insert(all_rho.end(), b.all_rho.begin(), b.all_rho.end());
    first.push_back(b.layer_rho.front());
    last.push_back(b.layer_rho.back());
    bn_acc.push_back(train_default(NormKind::BN, Task::Shape, seed).accuracy);
  }
  const double secs = seconds_since(t0);
  const double bin = 100.0 * mean(bin_acc), bn = 100.0 * mean(bn_acc);
  const double rho = mean(all_rho), rho_first = mean(first), rho_last = mean(last);
  return {bin >= bn - 1.0 && rho < 0.95 && rho_first <= rho_last && secs < 600.0,
          fmt("BIN %.2f%% vs BN %.2f%%, mean rho %.3f, first layer %.3f <= last %.3f, %.0fs", bin, bn,
              rho, rho_first, rho_last, secs)};
}

Verdict style_as_label() {
  std::vector<double> bin_acc, in_acc, last;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const RunSummary b = train_default(NormKind::BIN, Task::Style, seed);
    bin_acc.push_back(b.accuracy);
    last.push_back(b.layer_rho.back());
    in_acc.push_back(train_default(NormKind::IN, Task::Style, seed).accuracy);
  }
  const double bin = 100.0 * mean(bin_acc), in = 100.0 * mean(in_acc), rho_last = mean(last);
  return {rho_last >= 0.8 && bin >= in + 5.0,
          fmt("last-layer rho %.3f, BIN %.2f%% vs IN %.2f%%", rho_last, bin, in)};
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / ("binorm_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string args = "train --norm bin --task shape --seed 7 --out ";
  const Command a = run_cli(args + (root / "a").string());
  const Command b = run_cli(args + (root / "b").string());
  const std::string ma = slurp(root / "a" / "metrics.csv");
  const std::string mb = slurp(root / "b" / "metrics.csv");
  fs::remove_all(root);
  const bool ok = a.status == 0 && b.status == 0 && !ma.empty() && ma == mb;
  return {ok, fmt("exit %d/%d, metrics.csv %zu bytes, identical: %s", a.status, b.status, ma.size(),
                  ma == mb ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient-fidelity", gradient_fidelity},
      {"reduction-identities", reduction_identities},
      {"single-sample-collapse", single_sample_collapse},
      {"clip-semantics", clip_semantics},
      {"style-nuisance", style_nuisance},
      {"style-as-label", style_as_label},
      {"determinism", determinism},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    ++ran;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.passed;
    std::printf("%s  %-24s %s\n", v.passed ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
