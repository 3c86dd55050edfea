#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdgnn/baselines.hpp"
#include "mdgnn/gib_objectives.hpp"

using namespace mdgnn;
using ad::Tape;
using ad::Var;

namespace {

SystemConfig sys_mkn(int M, int K, int N) {
  SystemConfig s;
  s.M = M;
  s.K = K;
  s.N = N;
  s.normalize_gain = true;
  return s;
}

Model small_model(Family fam, HeadKind head, const SystemConfig& sys, const GibConfig& gib,
                  std::uint64_t seed, int L = 2, int hidden = 4) {
  ModelConfig c;
  c.L = L;
  c.family = fam;
  c.head = head;
  c.channels.assign(static_cast<std::size_t>(L) + 1, hidden);
  c.channels[0] = c.input_channels(sys.N);
  Rng rng(seed);
  return build_model(c, sys, gib, rng);
}

/// Closed-form KL(N(mu,s2) || N(mu0,s02)) in nats.
double gauss_kl(double mu, double s2, double mu0, double s02) {
  return 0.5 * (std::log(s02 / s2) + (s2 + (mu - mu0) * (mu - mu0)) / s02 - 1.0);
}

}  // namespace

TEST_CASE("kl_bernoulli closed form") {
  CHECK(kl_bernoulli(0.5, 0.5) == 0.0);
  CHECK(kl_bernoulli(0.3, 0.3) == 0.0);
  CHECK(kl_bernoulli(0.9, 0.5) == doctest::Approx(0.368100).epsilon(1e-4));
  CHECK(kl_bernoulli(0.1, 0.5) == doctest::Approx(kl_bernoulli(0.9, 0.5)));
  // tensor version matches the scalar
  Tape t;
  Var phi = t.constant(Tensor({3}, {0.1, 0.5, 0.9}));
  const Tensor& v = t.val(kl_bernoulli(t, phi, 0.5));
  for (int i = 0; i < 3; ++i)
    CHECK(v[i] == doctest::Approx(kl_bernoulli(t.val(phi)[i], 0.5)));
}

TEST_CASE("a_term: zero at the prior, oracle for a single pair, nonnegative") {
  GibConfig gib = GibConfig::defaults_for(1);
  Tape t;
  ForwardResult fwd;
  LayerTrace tr;
  tr.sampled_structure = true;
  // 2x2 pair grid (A=B=1): diagonal must be ignored.
  Tensor phi({1, 2, 2, 1}, {0.123, gib.alpha, gib.alpha, 0.456});
  tr.phi.push_back({t.constant(phi), true});
  fwd.layers.push_back(tr);
  CHECK(t.val(a_term(t, fwd, gib))[0] == doctest::Approx(0.0));

  Tensor phi2({1, 2, 2, 1}, {0.999, 0.9, gib.alpha, 0.001});
  fwd.layers[0].phi[0].phi = t.constant(phi2);
  CHECK(t.val(a_term(t, fwd, gib))[0] ==
        doctest::Approx(kl_bernoulli(0.9, gib.alpha)).epsilon(1e-10));

  Rng rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor r({2, 3, 3, 2});
    for (std::int64_t i = 0; i < r.size(); ++i) r[i] = rng.uniform(0.001, 0.999);
    ForwardResult f2;
    LayerTrace t2;
    t2.sampled_structure = true;
    t2.phi.push_back({t.constant(r), true});
    f2.layers.push_back(t2);
    CHECK(t.val(a_term(t, f2, gib))[0] >= 0.0);
  }
}

TEST_CASE("e_term: exact zero at the prior and scalar density-ratio oracle") {
  Tape t;
  MixturePrior prior;
  prior.log_w = t.constant(Tensor({1}, {0.0}));  // single component, weight 1
  prior.mu = t.constant(Tensor({1}, {0.7}));
  prior.sigma2 = t.constant(Tensor({1}, {0.3}));

  Var mu = t.constant(Tensor({1}, {0.7}));
  Var s2 = t.constant(Tensor({1}, {0.3}));
  CHECK(t.val(e_term_layer(t, mu, s2, mu, prior))[0] == doctest::Approx(0.0));

  // Random scalar case against a direct pdf-ratio evaluation.
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    double m = rng.normal(), v = 0.2 + rng.uniform(), z = rng.normal();
    double m0 = rng.normal(), v0 = 0.2 + rng.uniform();
    Tape t2;
    MixturePrior p2;
    p2.log_w = t2.constant(Tensor({1}, {0.0}));
    p2.mu = t2.constant(Tensor({1}, {m0}));
    p2.sigma2 = t2.constant(Tensor({1}, {v0}));
    double got = t2.val(e_term_layer(t2, t2.constant(Tensor({1}, {m})),
                                     t2.constant(Tensor({1}, {v})),
                                     t2.constant(Tensor({1}, {z})), p2))[0];
    auto logpdf = [](double x, double mm, double vv) {
      return -0.5 * std::log(2.0 * M_PI * vv) - (x - mm) * (x - mm) / (2.0 * vv);
    };
    CHECK(got == doctest::Approx(logpdf(z, m, v) - logpdf(z, m0, v0)).epsilon(1e-10));
  }
}

TEST_CASE("e_term Monte-Carlo mean matches closed-form Gaussian KL within 2%") {
  const int S = 100000;
  double mu = 0.4, s2 = 0.6, mu0 = -0.2, s02 = 1.3;
  Rng rng(7);
  Tensor zs({S}), mus = Tensor::full({S}, mu), s2s = Tensor::full({S}, s2);
  for (int i = 0; i < S; ++i) zs[i] = mu + std::sqrt(s2) * rng.normal();
  Tape t;
  MixturePrior prior;
  prior.log_w = t.constant(Tensor({1}, {0.0}));
  prior.mu = t.constant(Tensor({1}, {mu0}));
  prior.sigma2 = t.constant(Tensor({1}, {s02}));
  double mc = t.val(e_term_layer(t, t.constant(mus), t.constant(s2s), t.constant(zs),
                                 prior))[0] /
              static_cast<double>(S);
  double kl = gauss_kl(mu, s2, mu0, s02);
  CHECK(mc == doctest::Approx(kl).epsilon(0.02));
}

TEST_CASE("mixture prior weights live on the simplex") {
  SystemConfig sys = sys_mkn(3, 2, 2);
  GibConfig gib = GibConfig::defaults_for(2);
  Model m = small_model(Family::egib_bern, HeadKind::precoding, sys, gib, 5);
  // scribble on the raw weights: softmax must still normalize
  const ParamSegment* seg = m.find("prior_w");
  REQUIRE(seg);
  Tensor raw({gib.mixture_X}, {1.3, -2.0, 0.4, 5.0, -0.7});
  m.set_segment(*seg, raw);
  auto d = generate_channel(sys, 0.1, 1);
  Tape t;
  Rng fr(0);
  ForwardResult fwd = forward(t, m, d.h_observed.to_real(), gib, true, fr);
  MixturePrior prior = mixture_prior(t, m, fwd);
  const Tensor& lw = t.val(prior.log_w);
  double sum = 0.0;
  for (std::int64_t i = 0; i < lw.size(); ++i) sum += std::exp(lw[i]);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  const Tensor& s2 = t.val(prior.sigma2);
  for (std::int64_t i = 0; i < s2.size(); ++i) CHECK(s2[i] > 0.0);
}

TEST_CASE("task_reward delegates to the SE oracles") {
  SystemConfig sys = sys_mkn(3, 2, 2);
  auto d = generate_channel(sys, 0.0, 9);
  Rng rng(4);
  // precoding
  PrecodingSolution w;
  w.w = ComplexTensor3(sys.M, sys.K, sys.N);
  for (auto& x : w.w.v) x = cplx(rng.normal(), rng.normal());
  w = project_power(w, sys);
  {
    Tape t;
    Var out = t.constant(w.w.to_real());
    double got = t.val(task_reward(t, out, d.h_true.to_real(), sys, HeadKind::precoding,
                                   nullptr, d.noise_power_eff))[0];
    CHECK(got == doctest::Approx(sum_se_precoding(d.h_true, w, sys, d.noise_power_eff))
                     .epsilon(1e-12));
  }
  // power over a basis
  PowerSolution sol = zf_basis(d.h_observed, sys);
  sol.p = Tensor({sys.M, sys.K});
  for (auto& x : sol.p.vec()) x = rng.uniform(0.0, sys.p_max_watt / sys.K);
  {
    Tape t;
    Var out = t.constant(sol.p);
    double got = t.val(task_reward(t, out, d.h_true.to_real(), sys, HeadKind::power,
                                   &sol.basis, d.noise_power_eff))[0];
    CHECK(got == doctest::Approx(sum_se_power(d.h_true, sol, sys, d.noise_power_eff))
                     .epsilon(1e-10));
  }
  // zero output -> zero reward
  {
    Tape t;
    Var out = t.constant(Tensor({2, sys.M, sys.K, sys.N}));
    CHECK(t.val(task_reward(t, out, d.h_true.to_real(), sys, HeadKind::precoding, nullptr,
                            d.noise_power_eff))[0] == 0.0);
  }
}

TEST_CASE("total_loss family mapping and beta linearity") {
  SystemConfig sys = sys_mkn(3, 2, 2);
  GibConfig gib = GibConfig::defaults_for(2);
  auto d = generate_channel(sys, 0.1, 11);
  Tensor h = d.h_observed.to_real(), he = d.h_true.to_real();

  auto eval_loss = [&](Family fam, double beta, LossParts* parts) {
    GibConfig g = gib;
    g.beta = beta;
    Model m = small_model(fam, HeadKind::precoding, sys, g, 21);
    Tape t;
    Rng fr(3);
    ForwardResult fwd = forward(t, m, h, g, true, fr);
    return t.val(total_loss(t, m, fwd, he, g, nullptr, d.noise_power_eff, nullptr, parts))[0];
  };

  // beta = 0 -> loss = -reward exactly
  LossParts parts;
  double l0 = eval_loss(Family::egib_bern, 0.0, &parts);
  CHECK(l0 == doctest::Approx(-parts.reward).epsilon(1e-12));
  CHECK(parts.a == 0.0);
  CHECK(parts.e == 0.0);

  // doubling beta doubles the bound contribution for a fixed trace
  LossParts p1, p2;
  double l1 = eval_loss(Family::egib_bern, 1e-3, &p1);
  double l2 = eval_loss(Family::egib_bern, 2e-3, &p2);
  CHECK(p1.reward == doctest::Approx(p2.reward));  // same seed, same trace
  CHECK(l2 - (-p2.reward) == doctest::Approx(2.0 * (l1 - (-p1.reward))).epsilon(1e-9));

  // deterministic family ignores the bounds entirely
  LossParts pd;
  double ld = eval_loss(Family::edge_mdgnn, 1e-3, &pd);
  CHECK(ld == doctest::Approx(-pd.reward).epsilon(1e-12));
  // IB-only family has no a_term
  LossParts pe;
  eval_loss(Family::eib_mdgnn, 1e-3, &pe);
  CHECK(pe.a == 0.0);
  CHECK(pe.e != 0.0);
}

TEST_CASE("loss gradients match finite differences on a small stochastic model") {
  SystemConfig sys = sys_mkn(3, 2, 2);
  GibConfig gib = GibConfig::defaults_for(2);
  gib.beta = 1e-2;  // make the bound terms matter
  Model m = small_model(Family::egib_bern, HeadKind::precoding, sys, gib, 31);
  auto d = generate_channel(sys, 0.1, 13);
  Tensor h = d.h_observed.to_real(), he = d.h_true.to_real();

  auto loss_and_grad = [&](const Model& mm, std::vector<double>* grad) {
    Tape t;
    Rng fr(17);
    ForwardResult fwd = forward(t, mm, h, gib, true, fr);
    Var loss = total_loss(t, mm, fwd, he, gib, nullptr, d.noise_power_eff);
    if (grad) {
      t.backward(loss);
      grad->clear();
      for (std::size_t i = 0; i < mm.segments.size(); ++i) {
        Tensor g = t.grad(fwd.param_vars[i]);
        for (std::int64_t j = 0; j < g.size(); ++j) grad->push_back(g[j]);
      }
    }
    return t.val(loss)[0];
  };

  std::vector<double> grad;
  loss_and_grad(m, &grad);
  REQUIRE(grad.size() == m.params.size());

  Rng pick(23);
  double eps = 1e-5;
  for (int rep = 0; rep < 12; ++rep) {
    std::size_t i = static_cast<std::size_t>(pick.uniform() * static_cast<double>(m.params.size()));
    Model mp = m, mn = m;
    mp.params[i] += eps;
    mn.params[i] -= eps;
    double fd = (loss_and_grad(mp, nullptr) - loss_and_grad(mn, nullptr)) / (2.0 * eps);
    double scale = std::max({1e-6, std::abs(fd), std::abs(grad[i])});
    CHECK(std::abs(grad[i] - fd) / scale <= 1e-4);
  }
}
