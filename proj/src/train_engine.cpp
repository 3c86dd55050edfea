#include "mdgnn/train_engine.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mdgnn {

using ad::Tape;
using ad::Var;

BasisKind basis_from(const std::string& name) {
  if (name == "none" || name.empty()) return BasisKind::none;
  if (name == "zf") return BasisKind::zf;
  if (name == "lmmse") return BasisKind::lmmse;
  throw std::invalid_argument("unknown basis kind: " + name);
}

std::string basis_name(BasisKind b) {
  switch (b) {
    case BasisKind::none: return "none";
    case BasisKind::zf: return "zf";
    case BasisKind::lmmse: return "lmmse";
  }
  return "none";
}

namespace {

ComplexTensor3 make_basis(const ChannelRealization& d, const SystemConfig& sys,
                          BasisKind kind) {
  if (kind == BasisKind::zf) return zf_basis(d.h_observed, sys).basis;
  return lmmse_basis(d.h_observed, sys, d.noise_power_eff).basis;
}

}  // namespace

TrainResult train(Model& m, const GibConfig& gib, const TrainConfig& tc,
                  const std::vector<ChannelRealization>* dataset) {
  if (tc.steps < 0 || tc.batch_size < 1)
    throw std::invalid_argument("train: bad steps/batch_size");
  if (m.cfg.head == HeadKind::power && tc.basis == BasisKind::none)
    throw std::invalid_argument("train: power head needs a zf or lmmse basis");
  if (dataset && dataset->empty())
    throw std::invalid_argument("train: empty dataset");

  TrainResult res;
  res.history.reserve(static_cast<std::size_t>(tc.steps));

  const std::size_t P = m.params.size();
  std::vector<double> grad(P), m1(P, 0.0), m2(P, 0.0);
  Rng root(tc.seed);
  std::size_t cursor = 0;

  for (int step = 0; step < tc.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    std::fill(grad.begin(), grad.end(), 0.0);
    StepRecord rec;
    rec.step = step;

    for (int b = 0; b < tc.batch_size; ++b) {
      std::uint64_t draw = static_cast<std::uint64_t>(step) * tc.batch_size + b;
      ChannelRealization d =
          dataset ? (*dataset)[cursor++ % dataset->size()]
                  : generate_channel(m.sys, tc.sigma_i_sq, root.fork(2 * draw).next_u64());
      ComplexTensor3 basis;
      const ComplexTensor3* basis_ptr = nullptr;
      if (m.cfg.head == HeadKind::power) {
        basis = make_basis(d, m.sys, tc.basis);
        basis_ptr = &basis;
      }

      Tape tape;
      Rng frng = root.fork(2 * draw + 1);
      ForwardResult fwd = forward(tape, m, d.h_observed.to_real(), gib, true, frng);
      LossParts parts;
      const ComplexTensor3& h_eval = gib.reward_on_observed ? d.h_observed : d.h_true;
      Var loss = total_loss(tape, m, fwd, h_eval.to_real(), gib, basis_ptr,
                            d.noise_power_eff, nullptr, &parts);
      tape.backward(loss);

      std::size_t off = 0;
      for (std::size_t s = 0; s < m.segments.size(); ++s) {
        const Tensor& g = tape.grad(fwd.param_vars[s]);
        for (std::int64_t j = 0; j < g.size(); ++j) grad[off + j] += g[j];
        off += static_cast<std::size_t>(g.size());
      }
      rec.loss += tape.val(loss)[0];
      rec.reward += parts.reward;
      rec.a_term += parts.a;
      rec.e_term += parts.e;
    }

    double inv = 1.0 / tc.batch_size;
    rec.loss *= inv;
    rec.reward *= inv;
    rec.a_term *= inv;
    rec.e_term *= inv;

    double nrm2 = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
      grad[i] *= inv;
      nrm2 += grad[i] * grad[i];
    }
    rec.grad_norm = std::sqrt(nrm2);
    if (!std::isfinite(rec.loss) || !std::isfinite(rec.grad_norm) || rec.reward < -1e6) {
      res.diverged = true;
      res.history.push_back(rec);
      break;
    }
    if (tc.clip_norm > 0.0 && rec.grad_norm > tc.clip_norm) {
      double s = tc.clip_norm / rec.grad_norm;
      for (double& g : grad) g *= s;
    }

    double t = static_cast<double>(step + 1);
    double corr1 = 1.0 - std::pow(tc.beta1, t);
    double corr2 = 1.0 - std::pow(tc.beta2, t);
    double frac = tc.steps > 1 ? static_cast<double>(step) / (tc.steps - 1) : 0.0;
    double lr = tc.lr * (1.0 + (tc.lr_final_frac - 1.0) * frac);
    for (std::size_t i = 0; i < P; ++i) {
      m1[i] = tc.beta1 * m1[i] + (1.0 - tc.beta1) * grad[i];
      m2[i] = tc.beta2 * m2[i] + (1.0 - tc.beta2) * grad[i] * grad[i];
      m.params[i] -= lr * (m1[i] / corr1) / (std::sqrt(m2[i] / corr2) + tc.adam_eps);
    }

    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    res.history.push_back(rec);
  }
  return res;
}

double evaluate_model(const Model& m, const GibConfig& gib, double sigma_i_sq,
                      int n_draws, std::uint64_t seed, BasisKind basis) {
  if (n_draws < 1) throw std::invalid_argument("evaluate_model: n_draws < 1");
  Rng root(seed);
  double acc = 0.0;
  for (int i = 0; i < n_draws; ++i) {
    ChannelRealization d = generate_channel(m.sys, sigma_i_sq, root.fork(2 * i).next_u64());
    Rng frng = root.fork(2 * i + 1);
    if (m.cfg.head == HeadKind::precoding) {
      PrecodingSolution sol = eval_precoding(m, d.h_observed.to_real(), gib, frng);
      acc += sum_se_precoding(d.h_true, sol, m.sys, d.noise_power_eff);
    } else {
      PowerSolution sol;
      sol.basis = make_basis(d, m.sys, basis);
      sol.p = eval_power(m, d.h_observed.to_real(), gib, frng);
      acc += sum_se_power(d.h_true, sol, m.sys, d.noise_power_eff);
    }
  }
  return acc / n_draws;
}

void write_history_csv(const std::string& path, const std::vector<StepRecord>& history) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "step,loss,reward,a_term,e_term,grad_norm,wall_ms\n";
  f.precision(12);
  for (const StepRecord& r : history)
    f << r.step << ',' << r.loss << ',' << r.reward << ',' << r.a_term << ','
      << r.e_term << ',' << r.grad_norm << ',' << r.wall_ms << '\n';
}

}  // namespace mdgnn
