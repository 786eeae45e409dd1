#include <doctest.h>

#include <cmath>

#include "binorm/error.hpp"
#include "binorm/norm.hpp"
#include "binorm/rng.hpp"
#include "binorm/serialize.hpp"

using namespace binorm;

namespace {

Tensor4 random_tensor(Shape s, std::uint64_t seed, double mean = 0.0, double stddev = 1.0) {
  Rng rng(seed);
  Tensor4 t(s);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

NormParams random_params(std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  NormParams p = NormParams::init(c);
  for (std::size_t i = 0; i < c; ++i) {
    p.rho[i] = rng.uniform();
    p.gamma[i] = rng.normal(1.0, 0.5);
    p.beta[i] = rng.normal();
  }
  return p;
}

double rel_err(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

}  // namespace

TEST_CASE("bn_normalize") {
  SUBCASE("constant input maps to zero") {
    const auto r = bn_normalize(new_tensor(2, 3, 2, 2, 7.5), 1e-5);
    for (double v : r.xhat.data()) CHECK(v == 0.0);
  }
  SUBCASE("two-point unit variance") {
    auto r = bn_normalize(Tensor4(Shape{1, 1, 1, 2}, {0.0, 2.0}), 1e-12);
    CHECK(r.xhat[0] == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(r.xhat[1] == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("output statistics") {
    const double eps = 1e-2;  // large enough for the var/(var+eps) factor to show
    const Tensor4 x = random_tensor({4, 3, 3, 3}, 21, 2.0, 0.3);
    const auto in_stats = reduce_mean_var_over_nhw(x);
    const auto out_stats = reduce_mean_var_over_nhw(bn_normalize(x, eps).xhat);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(out_stats.mean[c]) < 1e-12);
      const double expected = in_stats.var[c] / (in_stats.var[c] + eps);
      CHECK(rel_err(out_stats.var[c], expected) < 1e-12);
    }
  }
}

TEST_CASE("in_normalize removes instance offsets that bn_normalize keeps") {
  Tensor4 x(Shape{2, 1, 2, 2});
  for (auto& v : x.plane(0, 0)) v = 1.0;
  for (auto& v : x.plane(1, 0)) v = 3.0;
  const auto flat = in_normalize(x, 1e-5).xhat;
  for (double v : flat.data()) CHECK(v == 0.0);
  const auto b = bn_normalize(x, 1e-5).xhat;
  CHECK(b(0, 0, 0, 0) < -0.9);
  CHECK(b(1, 0, 0, 0) > 0.9);

  const Tensor4 single = random_tensor({1, 3, 4, 4}, 4);
  CHECK(in_normalize(single, 1e-5).xhat.values() == bn_normalize(single, 1e-5).xhat.values());
}

TEST_CASE("degenerate spatial size gives an all-zero instance branch") {
  const Tensor4 x = random_tensor({3, 2, 1, 1}, 8);
  const auto xi = in_normalize(x, 1e-5).xhat;
  for (double v : xi.data()) CHECK(v == 0.0);
}

TEST_CASE("bin_forward gate endpoints") {
  const Tensor4 x = random_tensor({3, 2, 3, 3}, 31, 1.0, 2.0);
  NormParams p = NormParams::init(2);

  SUBCASE("rho = 1 is batch normalization") {
    auto y = bin_forward(x, p, Mode::Train).y;
    CHECK(y.values() == bn_normalize(x, p.eps).xhat.values());
  }
  SUBCASE("rho = 0 is instance normalization") {
    p.rho = ChannelVec(2, 0.0);
    auto y = bin_forward(x, p, Mode::Train).y;
    CHECK(y.values() == in_normalize(x, p.eps).xhat.values());
  }
  SUBCASE("rho = 0.5 is the BN+IN average") {
    p.rho = ChannelVec(2, 0.5);
    p.gamma = ChannelVec({1.5, -0.5});
    p.beta = ChannelVec({0.25, 2.0});
    auto y = bin_forward(x, p, Mode::Train).y;
    const auto xb = bn_normalize(x, p.eps).xhat;
    const auto xi = in_normalize(x, p.eps).xhat;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 9; ++i) {
          const double expected =
              (0.5 * xb.plane(n, c)[i] + 0.5 * xi.plane(n, c)[i]) * p.gamma[c] + p.beta[c];
          CHECK(y.plane(n, c)[i] == expected);
        }
  }
}

TEST_CASE("single-sample batches make the gate irrelevant") {
  const Tensor4 x = random_tensor({1, 3, 4, 4}, 41);
  NormParams p = random_params(3, 42);
  auto ref = bin_forward(x, p, Mode::Train);
  for (double r : {0.0, 0.2, 0.5, 0.77, 1.0}) {
    NormParams q = p;
    q.rho = ChannelVec(3, r);
    CHECK(bin_forward(x, q, Mode::Train).y.values() == ref.y.values());
  }
  const Tensor4 dy = random_tensor({1, 3, 4, 4}, 43);
  const auto g = bin_backward(*ref.cache, p, dy);
  for (double d : g.d_rho->data) CHECK(d == 0.0);
}

TEST_CASE("gates outside [0, 1] are a contract violation") {
  const Tensor4 x = random_tensor({2, 1, 2, 2}, 1);
  NormParams p = NormParams::init(1);
  p.rho[0] = 1.01;
  CHECK_THROWS_AS(bin_forward(x, p, Mode::Train), ContractViolation);
  p.rho[0] = -1e-9;
  CHECK_THROWS_AS(bin_forward(x, p, Mode::Eval), ContractViolation);
}

TEST_CASE("bin_backward simple sums") {
  const Tensor4 x = random_tensor({3, 2, 2, 5}, 51);
  NormParams p = random_params(2, 52);
  auto out = bin_forward(x, p, Mode::Train);
  const auto g = bin_backward(*out.cache, p, Tensor4(x.shape(), 1.0));
  for (double d : g.d_beta.data) CHECK(d == doctest::Approx(3.0 * 2 * 5));

  CHECK_THROWS_AS(bin_backward(*out.cache, p, Tensor4(Shape{3, 2, 2, 4}, 1.0)), InvalidShape);
}

TEST_CASE("d_rho equals the direct gate-gradient formula") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor4 x = random_tensor({4, 3, 3, 2}, 60 + seed, 0.5, 1.5);
    NormParams p = random_params(3, 70 + seed);
    auto out = bin_forward(x, p, Mode::Train);
    const Tensor4 dy = random_tensor(x.shape(), 80 + seed);
    const auto g = bin_backward(*out.cache, p, dy);
    const NormCache& cache = *out.cache;
    for (std::size_t c = 0; c < 3; ++c) {
      double direct = 0.0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t h = 0; h < 3; ++h)
          for (std::size_t w = 0; w < 2; ++w)
            direct += (cache.xhat_b(n, c, h, w) - cache.xhat_i(n, c, h, w)) * dy(n, c, h, w);
      direct *= p.gamma[c];
      CHECK(std::abs((*g.d_rho)[c] - direct) <= 1e-10);
    }
  }
}

TEST_CASE("standalone BN and IN agree with the gated layer at the endpoints") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)};
    const Tensor4 x = random_tensor(s, 500 + trial, rng.normal(), 0.5 + rng.uniform());
    NormParams p = random_params(s.c, 600 + trial);
    const Tensor4 dy = random_tensor(s, 700 + trial);

    NormParams pb = p;
    pb.rho = ChannelVec(s.c, 1.0);
    NormParams pbn = pb;
    auto a = bin_forward(x, pb, Mode::Train);
    auto b = bn_forward(x, pbn, Mode::Train);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(rel_err(a.y[i], b.y[i]) <= 1e-6);
    auto ga = bin_backward(*a.cache, pb, dy);
    auto gb = bn_backward(*b.cache, pbn, dy);
    CHECK_FALSE(gb.d_rho.has_value());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(ga.d_input[i] - gb.d_input[i]) <= 1e-10);

    NormParams pi = p;
    pi.rho = ChannelVec(s.c, 0.0);
    NormParams pin = pi;
    auto c = bin_forward(x, pi, Mode::Train);
    auto d = in_forward(x, pin, Mode::Train);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(rel_err(c.y[i], d.y[i]) <= 1e-6);
    // IN keeps no running statistics
    CHECK(pin.running_mean == p.running_mean);
    CHECK(pin.running_var == p.running_var);
  }
}

TEST_CASE("blend stays between the affine BN and IN outputs") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const Shape s{2 + rng.below(3), 1 + rng.below(3), 2 + rng.below(3), 2 + rng.below(3)};
    const Tensor4 x = random_tensor(s, 800 + trial, 0.0, 2.0);
    NormParams p = random_params(s.c, 900 + trial);
    NormParams q = p;
    const Tensor4 y = bin_forward(x, q, Mode::Train).y;
    q = p;
    const Tensor4 yb = bn_forward(x, q, Mode::Train).y;
    q = p;
    const Tensor4 yi = in_forward(x, q, Mode::Train).y;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double lo = std::min(yb[i], yi[i]);
      const double hi = std::max(yb[i], yi[i]);
      CHECK(y[i] >= lo - 1e-12);
      CHECK(y[i] <= hi + 1e-12);
    }
  }
}

TEST_CASE("normalized branches are invariant to positive per-channel affine input maps") {
  const double eps = 1e-12;
  const Tensor4 x = random_tensor({3, 2, 4, 4}, 901);
  const ChannelVec a({0.3, 4.0});
  const ChannelVec b({-2.0, 7.5});
  const Tensor4 x2 = add_per_channel(mul_per_channel(x, a), b);
  const auto b1 = bn_normalize(x, eps).xhat;
  const auto b2 = bn_normalize(x2, eps).xhat;
  const auto i1 = in_normalize(x, eps).xhat;
  const auto i2 = in_normalize(x2, eps).xhat;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(b1[i] - b2[i]) <= 1e-4);
    CHECK(std::abs(i1[i] - i2[i]) <= 1e-4);
  }
}

TEST_CASE("clip_update_rho") {
  CHECK(clip_update_rho(ChannelVec({0.05}), ChannelVec({0.1}))[0] == 0.0);
  CHECK(clip_update_rho(ChannelVec({0.9}), ChannelVec({-0.3}))[0] == 1.0);
  CHECK(clip_update_rho(ChannelVec({0.5}), ChannelVec({0.2}))[0] == doctest::Approx(0.3));

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    ChannelVec rho(5), step(5);
    for (std::size_t i = 0; i < 5; ++i) {
      rho[i] = rng.uniform();
      step[i] = rng.normal(0.0, 0.5);
    }
    CHECK(clip_update_rho(rho, ChannelVec(5, 0.0)) == rho);
    const ChannelVec out = clip_update_rho(rho, step);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(out[i] >= 0.0);
      CHECK(out[i] <= 1.0);
      const double raw = rho[i] - step[i];
      if (raw >= 0.0 && raw <= 1.0) CHECK(out[i] == raw);
    }
  }
  CHECK_THROWS_AS(clip_update_rho(ChannelVec(2), ChannelVec(3)), InvalidShape);
}

TEST_CASE("running statistics") {
  NormParams p = NormParams::init(2);
  const ChannelVec mean({1.0, -2.0});
  const ChannelVec var({0.5, 3.0});

  SUBCASE("momentum 1 copies the batch") {
    p.running_momentum = 1.0;
    update_running_stats(p, mean, var);
    CHECK(p.running_mean == mean);
    CHECK(p.running_var == var);
  }
  SUBCASE("momentum 0 keeps the old values") {
    p.running_momentum = 0.0;
    update_running_stats(p, mean, var);
    CHECK(p.running_mean == ChannelVec(2, 0.0));
    CHECK(p.running_var == ChannelVec(2, 1.0));
  }
  SUBCASE("repeated batches converge geometrically") {
    const double m = 0.1;
    p.running_momentum = m;
    for (int k = 1; k <= 50; ++k) {
      update_running_stats(p, mean, var);
      const double decay = std::pow(1.0 - m, k);
      for (std::size_t c = 0; c < 2; ++c) {
        CHECK(p.running_mean[c] == doctest::Approx(mean[c] + decay * (0.0 - mean[c])).epsilon(1e-12));
        CHECK(p.running_var[c] == doctest::Approx(var[c] + decay * (1.0 - var[c])).epsilon(1e-12));
      }
    }
  }
  SUBCASE("train-mode forward folds in the batch statistics of the BN branch") {
    const Tensor4 x = random_tensor({4, 2, 3, 3}, 77, 3.0, 2.0);
    p.rho = ChannelVec(2, 0.0);  // gate does not matter for the estimate
    auto out = bin_forward(x, p, Mode::Train);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(p.running_mean[c] == doctest::Approx(0.1 * out.cache->mu_b[c]));
      CHECK(p.running_var[c] == doctest::Approx(0.9 + 0.1 * out.cache->var_b[c]));
    }
    NormParams before = p;
    bin_forward(x, p, Mode::Eval);
    CHECK(p.running_mean == before.running_mean);
  }
}

TEST_CASE("eval mode uses running statistics in the batch branch only") {
  const Tensor4 x = random_tensor({3, 2, 3, 4}, 88, 1.0, 2.0);
  NormParams p = random_params(2, 89);
  p.running_mean = ChannelVec({0.4, -1.2});
  p.running_var = ChannelVec({2.5, 0.7});
  NormParams q = p;
  auto out = bin_forward(x, q, Mode::Eval);
  CHECK_FALSE(out.cache.has_value());
  const auto inst = reduce_mean_var_over_hw(x);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 4; ++w) {
          const double v = x(n, c, h, w);
          const double xb = (v - p.running_mean[c]) / std::sqrt(p.running_var[c] + p.eps);
          const double xi = (v - inst.mean.at(n, c)) / std::sqrt(inst.var.at(n, c) + p.eps);
          const double expected = (p.rho[c] * xb + (1.0 - p.rho[c]) * xi) * p.gamma[c] + p.beta[c];
          CHECK(out.y(n, c, h, w) == doctest::Approx(expected).epsilon(1e-12));
        }

  NormParams r = p;
  auto bn = bn_forward(x, r, Mode::Eval);
  CHECK(bn.y(0, 1, 0, 0) ==
        doctest::Approx((x(0, 1, 0, 0) - p.running_mean[1]) / std::sqrt(p.running_var[1] + p.eps) *
                            p.gamma[1] + p.beta[1]).epsilon(1e-12));

  NormParams s = p;
  NormParams t = p;
  const auto ie = in_forward(x, s, Mode::Eval).y;
  const auto it = in_forward(x, t, Mode::Train).y;
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ie[i] == doctest::Approx(it[i]).epsilon(1e-12));
}

TEST_CASE("norm kind names") {
  CHECK(parse_norm_kind("bn+in") == NormKind::BnPlusIn);
  CHECK(parse_norm_kind("bn_plus_in") == NormKind::BnPlusIn);
  CHECK(to_string(NormKind::BIN) == "bin");
  CHECK_THROWS_AS(parse_norm_kind("gn"), ConfigError);
}

TEST_CASE("layer checkpoint JSON") {
  NormParams p = random_params(3, 123);
  p.running_mean = ChannelVec({0.1, 0.2, 0.3});
  const json j = norm_layer_to_json(NormKind::BIN, p);
  CHECK(j.at("type") == "bin");
  for (const char* key : {"rho", "gamma", "beta", "running_mean", "running_var", "eps", "momentum"}) {
    CHECK(j.contains(key));
  }
  const auto rec = norm_layer_from_json(json::parse(j.dump()));
  CHECK(rec.kind == NormKind::BIN);
  CHECK(rec.params.rho == p.rho);
  CHECK(rec.params.gamma == p.gamma);
  CHECK(rec.params.running_mean == p.running_mean);

  NormParams half = NormParams::init(2);
  half.rho = ChannelVec(2, 0.5);
  const json jh = norm_layer_to_json(NormKind::BnPlusIn, half);
  CHECK(jh.at("type") == "bin");
  CHECK(norm_layer_from_json(jh).kind == NormKind::BnPlusIn);
  CHECK(norm_layer_to_json(NormKind::BN, half).at("type") == "bn");

  json bad = j;
  bad["rho"] = {0.5, 1.5, 0.2};
  CHECK_THROWS_AS(norm_layer_from_json(bad), ContractViolation);
}
