#include "mdgnn/gib_objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace mdgnn {

using ad::Tape;
using ad::Var;

namespace {
constexpr double kProbFloor = 1e-7;
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

Var segment_var(const Model& m, const ForwardResult& fwd, const std::string& name) {
  for (std::size_t i = 0; i < m.segments.size(); ++i)
    if (m.segments[i].name == name) return fwd.param_vars[i];
  throw std::invalid_argument("model has no segment " + name);
}

}  // namespace

MixturePrior mixture_prior(Tape& tape, const Model& m, const ForwardResult& fwd) {
  Var raw_w = segment_var(m, fwd, "prior_w");
  int X = tape.val(raw_w).dim(0);
  // log softmax via a stable [1, X] logsumexp
  Var row = tape.reshape(raw_w, {1, X});
  Var lse = tape.broadcast_axis(tape.logsumexp_axis(row, 1), 1, X);
  MixturePrior p;
  p.log_w = tape.reshape(tape.sub(row, lse), {X});
  p.mu = segment_var(m, fwd, "prior_mu");
  p.sigma2 = tape.exp(segment_var(m, fwd, "prior_logv"));
  return p;
}

double kl_bernoulli(double phi, double alpha) {
  auto clamp = [](double x) { return std::min(std::max(x, kProbFloor), 1.0 - kProbFloor); };
  double p = clamp(phi), a = clamp(alpha);
  return p * std::log(p / a) + (1.0 - p) * std::log((1.0 - p) / (1.0 - a));
}

Var kl_bernoulli(Tape& tape, Var phi, double alpha) {
  double a = std::min(std::max(alpha, kProbFloor), 1.0 - kProbFloor);
  Var p = tape.clamp(phi, kProbFloor, 1.0 - kProbFloor);
  Var q = tape.add_scalar(tape.neg(p), 1.0);  // 1 - p
  Var kl = tape.add(tape.mul(p, tape.add_scalar(tape.log(p), -std::log(a))),
                    tape.mul(q, tape.add_scalar(tape.log(q), -std::log1p(-a))));
  return kl;
}

Var a_term(Tape& tape, const ForwardResult& fwd, const GibConfig& gib) {
  Var total = tape.scalar_const(0.0);
  for (const LayerTrace& tr : fwd.layers) {
    if (!tr.sampled_structure) continue;
    for (const PhiTrace& pt : tr.phi) {
      Var kl = kl_bernoulli(tape, pt.phi, gib.alpha);
      if (pt.exclude_diag) {
        const Tensor& v = tape.val(pt.phi);  // [A, d, d, B]
        if (v.rank() != 4 || v.dim(1) != v.dim(2))
          throw std::logic_error("a_term: pair grid must be [A,d,d,B]");
        Tensor mask(v.shape());
        std::int64_t A = v.dim(0), d = v.dim(1), B = v.dim(3);
        for (std::int64_t a = 0; a < A; ++a)
          for (std::int64_t x = 0; x < d; ++x)
            for (std::int64_t y = 0; y < d; ++y)
              for (std::int64_t b = 0; b < B; ++b)
                mask[((a * d + x) * d + y) * B + b] = x == y ? 0.0 : 1.0;
        kl = tape.mul_const(kl, mask);
      }
      total = tape.add(total, tape.sum_all(kl));
    }
  }
  return total;
}

Var e_term_layer(Tape& tape, Var mu, Var sigma2, Var z, const MixturePrior& prior) {
  const Tensor& zv = tape.val(z);
  int E = static_cast<int>(zv.size());
  int X = tape.val(prior.mu).dim(0);

  Var zf = tape.reshape(z, {E});
  Var muf = tape.reshape(mu, {E});
  Var s2f = tape.reshape(sigma2, {E});

  // log N(z; mu, sigma2) elementwise
  Var diff = tape.sub(zf, muf);
  Var logp = tape.sub(tape.mul_scalar(tape.add_scalar(tape.log(s2f), kLog2Pi), -0.5),
                      tape.div(tape.square(diff), tape.mul_scalar(s2f, 2.0)));

  // log sum_x w_x N(z; mu_x, sigma2_x) via an [X, E] grid
  Var zg = tape.broadcast_axis(zf, 0, X);
  Var mug = tape.broadcast_axis(prior.mu, 1, E);
  Var s2g = tape.broadcast_axis(prior.sigma2, 1, E);
  Var wg = tape.broadcast_axis(prior.log_w, 1, E);
  Var comp = tape.sub(tape.mul_scalar(tape.add_scalar(tape.log(s2g), kLog2Pi), -0.5),
                      tape.div(tape.square(tape.sub(zg, mug)), tape.mul_scalar(s2g, 2.0)));
  Var logmix = tape.logsumexp_axis(tape.add(comp, wg), 0);  // [E]

  return tape.sum_all(tape.sub(logp, logmix));
}

Var e_term(Tape& tape, const ForwardResult& fwd, const MixturePrior& prior) {
  Var total = tape.scalar_const(0.0);
  for (const LayerTrace& tr : fwd.layers) {
    if (!tr.stochastic) continue;
    for (std::size_t i = 0; i < tr.z.size(); ++i)
      total = tape.add(total, e_term_layer(tape, tr.mu[i], tr.sigma2[i], tr.z[i], prior));
  }
  return total;
}

Var task_reward(Tape& tape, Var output, const Tensor& h_eval, const SystemConfig& cfg,
                HeadKind head, const ComplexTensor3* basis, double noise_power) {
  if (h_eval.rank() != 4 || h_eval.dim(0) != 2)
    throw std::invalid_argument("task_reward: h_eval must be [2,M,K,N]");
  const int M = h_eval.dim(1), K = h_eval.dim(2), N = h_eval.dim(3);
  double sigma2 = noise_power >= 0.0 ? noise_power : cfg.noise_power_watt();

  Var w;
  if (head == HeadKind::precoding) {
    w = output;  // [2,M,K,N]
  } else {
    if (!basis) throw std::invalid_argument("task_reward: power head needs a basis");
    Var q = tape.sqrt(output);  // [M,K] amplitudes
    Var qb = tape.broadcast_axis(tape.broadcast_axis(q, 2, N), 0, 2);
    w = tape.mul_const(qb, basis->to_real());
  }

  Var c = tape.coherent_gain(w, h_eval);  // [2,K,K]
  Var c2 = tape.square(c);
  Var pw = tape.add(tape.index_axis(c2, 0, 0), tape.index_axis(c2, 0, 1));  // [K,K]
  Tensor eye({K, K});
  for (int k = 0; k < K; ++k) eye[static_cast<std::int64_t>(k) * K + k] = 1.0;
  Var sig = tape.sum_axis(tape.mul_const(pw, eye), 1);  // [K]
  Var intf = tape.sub(tape.sum_axis(pw, 1), sig);
  Var sinr = tape.div(sig, tape.add_scalar(intf, sigma2));
  Var se = tape.mul_scalar(tape.log(tape.add_scalar(sinr, 1.0)), 1.0 / std::log(2.0));
  Tensor fair({K});
  for (int k = 0; k < K; ++k) fair[k] = cfg.fairness(k);
  (void)M;
  return tape.sum_all(tape.mul_const(se, fair));
}

Var total_loss(Tape& tape, const Model& m, const ForwardResult& fwd, const Tensor& h_eval,
               const GibConfig& gib, const ComplexTensor3* basis, double noise_power,
               const Tensor* target, LossParts* parts) {
  Var reward;
  if (gib.supervised) {
    if (!target) throw std::invalid_argument("total_loss: supervised mode needs a target");
    Var diff = tape.sub(fwd.output, tape.constant(*target));
    reward = tape.mul_scalar(tape.sum_all(tape.square(diff)),
                             -1.0 / static_cast<double>(target->size()));
  } else {
    reward = task_reward(tape, fwd.output, h_eval, m.sys, m.cfg.head, basis, noise_power);
  }

  Var loss = tape.neg(reward);
  double a_val = 0.0, e_val = 0.0;
  if (family_has_stochastic_repr(m.cfg.family) && gib.beta > 0.0) {
    MixturePrior prior = mixture_prior(tape, m, fwd);
    Var e = e_term(tape, fwd, prior);
    Var bound = e;
    if (family_samples_structure(m.cfg.family)) {
      Var a = a_term(tape, fwd, gib);
      bound = tape.add(bound, a);
      a_val = tape.val(a)[0];
    }
    e_val = tape.val(e)[0];
    loss = tape.add(loss, tape.mul_scalar(bound, gib.beta));
  }
  if (parts) {
    parts->reward = tape.val(reward)[0];
    parts->a = a_val;
    parts->e = e_val;
  }
  return loss;
}

}  // namespace mdgnn
