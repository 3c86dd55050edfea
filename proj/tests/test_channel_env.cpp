#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdgnn/channel_env.hpp"

using namespace mdgnn;

namespace {

SystemConfig small_cfg() {
  SystemConfig cfg;
  cfg.M = 3;
  cfg.K = 2;
  cfg.N = 4;
  return cfg;
}

PrecodingSolution random_precoder(const SystemConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  PrecodingSolution w;
  w.w = ComplexTensor3(cfg.M, cfg.K, cfg.N);
  for (auto& x : w.w.v) x = cplx(rng.normal(), rng.normal());
  return project_power(w, cfg);
}

}  // namespace

TEST_CASE("draws are seed-deterministic") {
  SystemConfig cfg = small_cfg();
  auto a = generate_channel(cfg, 0.1, 42);
  auto b = generate_channel(cfg, 0.1, 42);
  auto c = generate_channel(cfg, 0.1, 43);
  CHECK(a.h_true.v == b.h_true.v);
  CHECK(a.h_observed.v == b.h_observed.v);
  CHECK(a.h_true.v != c.h_true.v);
}

TEST_CASE("CSI corruption has the requested absolute variance") {
  SystemConfig cfg = small_cfg();
  double sigma2 = 0.37;
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    auto d = generate_channel(cfg, sigma2, 1000 + s);
    for (std::size_t i = 0; i < d.h_true.v.size(); ++i)
      acc += std::norm(d.h_observed.v[i] - d.h_true.v[i]);
    n += static_cast<std::int64_t>(d.h_true.v.size());
  }
  CHECK(acc / static_cast<double>(n) == doctest::Approx(sigma2).epsilon(0.05));
  auto exact = generate_channel(cfg, 0.0, 7);
  CHECK(exact.h_observed.v == exact.h_true.v);
}

TEST_CASE("gain normalization leaves every SE unchanged") {
  SystemConfig raw = small_cfg();
  SystemConfig norm = raw;
  norm.normalize_gain = true;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto dr = generate_channel(raw, 0.0, 90 + s);
    auto dn = generate_channel(norm, 0.0, 90 + s);
    // Same positions/fading, different overall scale.
    double ratio = std::abs(dn.h_true.v[0] / dr.h_true.v[0]);
    for (std::size_t i = 0; i < dr.h_true.v.size(); ++i)
      CHECK(std::abs(dn.h_true.v[i] - dr.h_true.v[i] * ratio) < 1e-12 * ratio);
    PrecodingSolution w = random_precoder(raw, 500 + s);
    double se_raw = sum_se_precoding(dr.h_true, w, raw);
    double se_norm = sum_se_precoding(dn.h_true, w, norm, dn.noise_power_eff);
    CHECK(se_norm == doctest::Approx(se_raw).epsilon(1e-10));
  }
}

TEST_CASE("normalized channels are unit scale on average") {
  SystemConfig cfg = small_cfg();
  cfg.normalize_gain = true;
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto d = generate_channel(cfg, 0.0, 5000 + s);
    for (const auto& x : d.h_true.v) acc += std::norm(x);
    n += static_cast<std::int64_t>(d.h_true.v.size());
  }
  CHECK(acc / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("independent SE oracle agrees with sum_se_precoding") {
  SystemConfig cfg = small_cfg();
  cfg.fairness_weights = {1.0, 0.5};
  auto d = generate_channel(cfg, 0.0, 77);
  PrecodingSolution w = random_precoder(cfg, 78);
  double sigma2 = cfg.noise_power_watt();

  // Re-derived from the SINR definition with stacked vectors, written
  // independently of the library loop structure.
  double se = 0.0;
  std::vector<double> alpha = {1.0, 0.5};
  for (int k = 0; k < cfg.K; ++k) {
    std::vector<cplx> r(static_cast<std::size_t>(cfg.K), cplx(0, 0));
    for (int i = 0; i < cfg.K; ++i)
      for (int m = 0; m < cfg.M; ++m)
        for (int n = 0; n < cfg.N; ++n)
          r[static_cast<std::size_t>(i)] +=
              std::conj(d.h_true.at(m, k, n)) * w.w.at(m, i, n);
    double num = std::norm(r[static_cast<std::size_t>(k)]);
    double den = sigma2;
    for (int i = 0; i < cfg.K; ++i)
      if (i != k) den += std::norm(r[static_cast<std::size_t>(i)]);
    se += alpha[static_cast<std::size_t>(k)] * std::log2(1.0 + num / den);
  }
  CHECK(sum_se_precoding(d.h_true, w, cfg) == doctest::Approx(se).epsilon(1e-12));
}

TEST_CASE("sum_se_power equals precoding SE of the scaled basis") {
  SystemConfig cfg = small_cfg();
  auto d = generate_channel(cfg, 0.0, 101);
  Rng rng(5);
  PowerSolution sol;
  sol.basis = ComplexTensor3(cfg.M, cfg.K, cfg.N);
  for (auto& x : sol.basis.v) x = cplx(rng.normal(), rng.normal());
  for (int m = 0; m < cfg.M; ++m)
    for (int k = 0; k < cfg.K; ++k) {
      double nrm = 0.0;
      for (int n = 0; n < cfg.N; ++n) nrm += std::norm(sol.basis.at(m, k, n));
      for (int n = 0; n < cfg.N; ++n) sol.basis.at(m, k, n) /= std::sqrt(nrm);
    }
  sol.p = Tensor({cfg.M, cfg.K});
  for (std::int64_t i = 0; i < sol.p.size(); ++i) sol.p[i] = rng.uniform(0.0, 0.4);

  PrecodingSolution w;
  w.w = ComplexTensor3(cfg.M, cfg.K, cfg.N);
  for (int m = 0; m < cfg.M; ++m)
    for (int k = 0; k < cfg.K; ++k)
      for (int n = 0; n < cfg.N; ++n)
        w.w.at(m, k, n) =
            std::sqrt(sol.p[static_cast<std::int64_t>(m) * cfg.K + k]) *
            sol.basis.at(m, k, n);
  CHECK(sum_se_power(d.h_true, sol, cfg) ==
        doctest::Approx(sum_se_precoding(d.h_true, w, cfg)).epsilon(1e-12));
}

TEST_CASE("power projection is feasible, idempotent, direction-preserving") {
  SystemConfig cfg = small_cfg();
  Rng rng(9);
  PrecodingSolution w;
  w.w = ComplexTensor3(cfg.M, cfg.K, cfg.N);
  for (auto& x : w.w.v) x = cplx(3.0 * rng.normal(), 3.0 * rng.normal());
  CHECK(power_violation(w, cfg) > 0.0);
  PrecodingSolution p1 = project_power(w, cfg);
  CHECK(power_violation(p1, cfg) <= 1e-12);
  PrecodingSolution p2 = project_power(p1, cfg);
  for (std::size_t i = 0; i < p1.w.v.size(); ++i)
    CHECK(std::abs(p1.w.v[i] - p2.w.v[i]) < 1e-15);
  // Directions preserved: ratio constant within each AP.
  cplx ratio = p1.w.v[0] / w.w.v[0];
  for (int k = 0; k < cfg.K; ++k)
    for (int n = 0; n < cfg.N; ++n)
      CHECK(std::abs(p1.w.at(0, k, n) - ratio * w.w.at(0, k, n)) < 1e-12);

  Tensor p({2, 2}, {0.9, 0.4, -0.2, 0.3});
  SystemConfig c2;
  c2.M = 2;
  c2.K = 2;
  Tensor q = project_power(p, c2);
  CHECK(q[0] == doctest::Approx(0.9 / 1.3));
  CHECK(q[2] == 0.0);
  CHECK(q[3] == doctest::Approx(0.3));
  CHECK(power_violation(q, c2) <= 1e-12);
}

TEST_CASE("config validation rejects bad inputs") {
  SystemConfig cfg = small_cfg();
  cfg.fairness_weights = {0.5};  // wrong length
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.p_max_watt = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS(generate_channel(small_cfg(), -0.1, 1), std::invalid_argument);
}
