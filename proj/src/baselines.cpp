#include "mdgnn/baselines.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdgnn {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

namespace {
constexpr double kRidge = 1e-12;
}

void WmmseConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("WmmseConfig: max_iters >= 1");
  if (tol <= 0.0 || bisection_tol <= 0.0)
    throw std::invalid_argument("WmmseConfig: tolerances must be > 0");
}

namespace {

/// Stacked channel matrix: column k = [h_1k; ...; h_Mk] in C^{MN}.
MatrixXcd stack_channel(const ComplexTensor3& h) {
  MatrixXcd H(h.M * h.N, h.K);
  for (int k = 0; k < h.K; ++k)
    for (int m = 0; m < h.M; ++m)
      for (int n = 0; n < h.N; ++n) H(m * h.N + n, k) = h.at(m, k, n);
  return H;
}

PrecodingSolution unstack(const MatrixXcd& W, int M, int K, int N) {
  PrecodingSolution s;
  s.w = ComplexTensor3(M, K, N);
  for (int k = 0; k < K; ++k)
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) s.w.at(m, k, n) = W(m * N + n, k);
  return s;
}

struct WoodburyEval {
  // Evaluates the transmit update w_i(mu) = (D(mu) + H C H^H)^{-1} b_i using
  // the rank-K structure; per-AP Gram matrices are precomputed.
  const MatrixXcd& H;
  const std::vector<MatrixXcd>& gram;  // per AP: H_m^H H_m (K x K)
  VectorXd c_diag;                     // C = diag(alpha_k lambda_k |u_k|^2)
  VectorXcd b_scale;                   // b_i = b_scale(i) * h_i
  int M, N, K;

  // Returns per-AP powers for multipliers mu (>= 0) and, optionally, W.
  VectorXd powers(const VectorXd& mu, MatrixXcd* W_out) const {
    VectorXd dinv(M);
    for (int m = 0; m < M; ++m) dinv(m) = 1.0 / (mu(m) + kRidge);
    MatrixXcd G = MatrixXcd::Zero(K, K);
    for (int m = 0; m < M; ++m) G += dinv(m) * gram[static_cast<std::size_t>(m)];
    // S = C (I + G C)^{-1}  (stable when some c_k == 0)
    MatrixXcd GC = G * c_diag.asDiagonal();
    MatrixXcd S = c_diag.asDiagonal() *
                  (MatrixXcd::Identity(K, K) + GC).partialPivLu().solve(MatrixXcd::Identity(K, K));
    // q_i = b_scale(i) * G.col(i); y_i = S q_i
    MatrixXcd Y(K, K);
    for (int i = 0; i < K; ++i) Y.col(i) = S * (b_scale(i) * G.col(i));
    VectorXd pw = VectorXd::Zero(M);
    for (int m = 0; m < M; ++m) {
      const auto Hm = H.middleRows(m * N, N);
      for (int i = 0; i < K; ++i) {
        VectorXcd blk = dinv(m) * (b_scale(i) * Hm.col(i) - Hm * Y.col(i));
        pw(m) += blk.squaredNorm();
        if (W_out) W_out->col(i).segment(m * N, N) = blk;
      }
    }
    return pw;
  }
};

}  // namespace

WmmseResult wmmse_precoding(const ComplexTensor3& h, const SystemConfig& cfg,
                            const WmmseConfig& wcfg, double noise_power) {
  cfg.validate();
  wcfg.validate();
  const int M = h.M, K = h.K, N = h.N, MN = M * N;
  for (const cplx& x : h.v)
    if (!std::isfinite(x.real()) || !std::isfinite(x.imag()))
      throw std::invalid_argument("wmmse_precoding: non-finite channel");

  const double sigma2 = noise_power >= 0.0 ? noise_power : cfg.noise_power_watt();
  const double pmax = cfg.p_max_watt;
  MatrixXcd H = stack_channel(h);

  std::vector<MatrixXcd> gram(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    auto Hm = H.middleRows(m * N, N);
    gram[static_cast<std::size_t>(m)] = Hm.adjoint() * Hm;
  }

  // Matched-filter init at full per-AP power.
  MatrixXcd W = H;
  for (int m = 0; m < M; ++m) {
    double pw = W.middleRows(m * N, N).squaredNorm();
    double s = pw > 0.0 ? std::sqrt(pmax / pw) : 0.0;
    W.middleRows(m * N, N) *= s;
  }

  WmmseResult res;
  VectorXd mu = VectorXd::Zero(M);
  double prev_obj = -1e300;

  auto sum_se = [&](const MatrixXcd& Wc) {
    double se = 0.0;
    for (int k = 0; k < K; ++k) {
      VectorXcd r = Wc.adjoint() * H.col(k);  // r(i) = h_k^H w_i (conjugated)
      double sig = std::norm(r(k));
      double intf = r.squaredNorm() - sig;
      se += cfg.fairness(k) * std::log2(1.0 + sig / (intf + sigma2));
    }
    return se;
  };

  for (int it = 0; it < wcfg.max_iters; ++it) {
    // Receiver and MSE-weight updates (closed form).
    VectorXcd u(K);
    VectorXd lam(K), c_diag(K);
    for (int k = 0; k < K; ++k) {
      VectorXcd hw = W.adjoint() * H.col(k);  // hw(i) = w_i^H h_k
      cplx t = std::conj(hw(k));              // h_k^H w_k
      double T = hw.squaredNorm() + sigma2;
      u(k) = t / T;
      double e = std::max(1e-12, 1.0 - std::norm(t) / T);
      lam(k) = cfg.fairness(k) / e;  // absorbs the fairness weight
      c_diag(k) = lam(k) * std::norm(u(k));
    }
    VectorXcd b_scale(K);
    for (int k = 0; k < K; ++k) b_scale(k) = lam(k) * u(k);

    auto phi = [&](const MatrixXcd& Wc) {
      double v = 0.0;
      for (int i = 0; i < K; ++i) {
        VectorXcd hTw = H.adjoint() * Wc.col(i);  // (h_k^H w_i)_k
        for (int k = 0; k < K; ++k) v += c_diag(k) * std::norm(hTw(k));
        v -= 2.0 * std::real(std::conj(b_scale(i)) * hTw(i));
      }
      return v;
    };

    WoodburyEval ev{H, gram, c_diag, b_scale, M, N, K};

    // Gauss-Seidel bisection on the per-AP multipliers, warm-started.
    for (int sweep = 0; sweep < 25; ++sweep) {
      double worst = 0.0;
      for (int m = 0; m < M; ++m) {
        VectorXd trial = mu;
        trial(m) = 0.0;
        if (ev.powers(trial, nullptr)(m) <= pmax) {
          mu(m) = 0.0;
          continue;
        }
        double lo = 0.0, hi = std::max(1.0, 2.0 * mu(m));
        while (ev.powers((trial(m) = hi, trial), nullptr)(m) > pmax) hi *= 2.0;
        while (hi - lo > wcfg.bisection_tol * (1.0 + hi)) {
          double mid = 0.5 * (lo + hi);
          trial(m) = mid;
          (ev.powers(trial, nullptr)(m) > pmax ? lo : hi) = mid;
        }
        mu(m) = hi;
      }
      VectorXd pw = ev.powers(mu, nullptr);
      for (int m = 0; m < M; ++m) worst = std::max(worst, pw(m) - pmax);
      if (worst <= 1e-9 * pmax) break;
    }

    // Dense solve for the final precoder (avoids Woodbury cancellation).
    MatrixXcd A = MatrixXcd::Zero(MN, MN);
    for (int k = 0; k < K; ++k) A += c_diag(k) * H.col(k) * H.col(k).adjoint();
    for (int m = 0; m < M; ++m)
      A.block(m * N, m * N, N, N) += (mu(m) + kRidge) * MatrixXcd::Identity(N, N);
    MatrixXcd B(MN, K);
    for (int i = 0; i < K; ++i) B.col(i) = b_scale(i) * H.col(i);
    MatrixXcd W_new = A.ldlt().solve(B);

    // Exact feasibility: scale any (tolerance-level) overshoot.
    for (int m = 0; m < M; ++m) {
      double pw = W_new.middleRows(m * N, N).squaredNorm();
      if (pw > pmax) W_new.middleRows(m * N, N) *= std::sqrt(pmax / pw);
    }

    // Monotonicity safeguard on the convex surrogate.
    if (phi(W_new) <= phi(W) + 1e-12 * (1.0 + std::abs(phi(W)))) W = W_new;

    double obj = sum_se(W);
    res.objective_trace.push_back(obj);
    res.iterations = it + 1;
    if (it > 0 && std::abs(obj - prev_obj) <= wcfg.tol * std::max(1.0, std::abs(obj))) break;
    prev_obj = obj;
  }

  res.solution = unstack(W, M, K, N);
  return res;
}

PowerSolution zf_basis(const ComplexTensor3& h, const SystemConfig& cfg) {
  cfg.validate();
  const int M = h.M, K = h.K, N = h.N;
  PowerSolution out;
  out.p = Tensor({M, K});
  out.basis = ComplexTensor3(M, K, N);
  for (int m = 0; m < M; ++m) {
    MatrixXcd Hm(N, K);
    for (int k = 0; k < K; ++k)
      for (int n = 0; n < N; ++n) Hm(n, k) = h.at(m, k, n);
    MatrixXcd G = Hm.adjoint() * Hm;
    Eigen::JacobiSVD<MatrixXcd> svd(G, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double smax = svd.singularValues().maxCoeff();
    double tol = 1e-10 * std::max(smax, 1e-300);
    VectorXd sinv = VectorXd::Zero(K);
    for (int k = 0; k < K; ++k) {
      double s = svd.singularValues()(k);
      if (s > tol)
        sinv(k) = 1.0 / s;
      else
        out.rank_deficient = true;
    }
    if (N < K) out.rank_deficient = true;
    MatrixXcd Ginv = svd.matrixV() * sinv.asDiagonal() * svd.matrixU().adjoint();
    MatrixXcd Wm = Hm * Ginv;
    for (int k = 0; k < K; ++k) {
      double nrm = Wm.col(k).norm();
      for (int n = 0; n < N; ++n)
        out.basis.at(m, k, n) = nrm > 0.0 ? Wm(n, k) / nrm : cplx(0.0, 0.0);
    }
  }
  return out;
}

PowerSolution lmmse_basis(const ComplexTensor3& h, const SystemConfig& cfg,
                          double noise_power) {
  cfg.validate();
  const int M = h.M, K = h.K, N = h.N;
  const double sigma2 = noise_power >= 0.0 ? noise_power : cfg.noise_power_watt();
  const double pbar = cfg.p_max_watt / static_cast<double>(K);
  PowerSolution out;
  out.p = Tensor({M, K});
  out.basis = ComplexTensor3(M, K, N);
  for (int m = 0; m < M; ++m) {
    MatrixXcd R = sigma2 * MatrixXcd::Identity(N, N);
    for (int i = 0; i < K; ++i) {
      VectorXcd hi(N);
      for (int n = 0; n < N; ++n) hi(n) = h.at(m, i, n);
      R += pbar * hi * hi.adjoint();
    }
    Eigen::LDLT<MatrixXcd> ldlt(R);
    for (int k = 0; k < K; ++k) {
      VectorXcd hk(N);
      for (int n = 0; n < N; ++n) hk(n) = h.at(m, k, n);
      VectorXcd d = ldlt.solve(hk);
      double nrm = d.norm();
      for (int n = 0; n < N; ++n)
        out.basis.at(m, k, n) = nrm > 0.0 ? d(n) / nrm : cplx(0.0, 0.0);
    }
  }
  return out;
}

WmmsePowerResult wmmse_power(const ComplexTensor3& h, const PowerSolution& basis,
                             const SystemConfig& cfg, const WmmseConfig& wcfg,
                             double noise_power) {
  cfg.validate();
  wcfg.validate();
  const int M = h.M, K = h.K;
  const double sigma2 = noise_power >= 0.0 ? noise_power : cfg.noise_power_watt();
  const double pmax = cfg.p_max_watt;

  // Effective gains g(m, k, i) = h_mk^H w_mi.
  std::vector<cplx> g(static_cast<std::size_t>(M) * K * K);
  auto gat = [&](int m, int k, int i) -> cplx& {
    return g[(static_cast<std::size_t>(m) * K + k) * K + i];
  };
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < K; ++i) {
        cplx s(0.0, 0.0);
        for (int n = 0; n < h.N; ++n)
          s += std::conj(h.at(m, k, n)) * basis.basis.at(m, i, n);
        gat(m, k, i) = s;
      }

  MatrixXd Q = MatrixXd::Constant(M, K, std::sqrt(pmax / static_cast<double>(K)));

  auto project = [&](MatrixXd& q) {
    q = q.cwiseMax(0.0);
    for (int m = 0; m < M; ++m) {
      double s = q.row(m).squaredNorm();
      if (s > pmax) q.row(m) *= std::sqrt(pmax / s);
    }
  };

  auto received = [&](const MatrixXd& q, int k, int i) {
    cplx r(0.0, 0.0);
    for (int m = 0; m < M; ++m) r += q(m, i) * gat(m, k, i);
    return r;
  };

  auto sum_se = [&](const MatrixXd& q) {
    double se = 0.0;
    for (int k = 0; k < K; ++k) {
      double sig = 0.0, intf = 0.0;
      for (int i = 0; i < K; ++i) {
        double p = std::norm(received(q, k, i));
        (i == k ? sig : intf) += p;
      }
      se += cfg.fairness(k) * std::log2(1.0 + sig / (intf + sigma2));
    }
    return se;
  };

  WmmsePowerResult res;
  double prev_obj = -1e300;

  for (int it = 0; it < wcfg.max_iters; ++it) {
    VectorXcd u(K);
    VectorXd lam(K);
    for (int k = 0; k < K; ++k) {
      double T = sigma2;
      for (int i = 0; i < K; ++i) T += std::norm(received(Q, k, i));
      cplx t = received(Q, k, k);
      u(k) = t / T;
      double e = std::max(1e-12, 1.0 - std::norm(t) / T);
      lam(k) = cfg.fairness(k) / e;
    }

    // Quadratic surrogate per stream: q_i^T A_i q_i - 2 b_i^T q_i.
    std::vector<MatrixXd> A(static_cast<std::size_t>(K));
    std::vector<VectorXd> b(static_cast<std::size_t>(K));
    double L = 0.0;
    for (int i = 0; i < K; ++i) {
      MatrixXd Ai = MatrixXd::Zero(M, M);
      for (int k = 0; k < K; ++k) {
        double wkt = lam(k) * std::norm(u(k));
        VectorXcd gk(M);
        for (int m = 0; m < M; ++m) gk(m) = gat(m, k, i);
        Ai += wkt * (gk * gk.adjoint()).real();
      }
      VectorXd bi(M);
      for (int m = 0; m < M; ++m)
        bi(m) = lam(i) * std::real(std::conj(u(i)) * gat(m, i, i));
      A[static_cast<std::size_t>(i)] = Ai;
      b[static_cast<std::size_t>(i)] = bi;
      L = std::max(L, Ai.trace());  // upper bound on the top eigenvalue
    }
    double step = 1.0 / std::max(2.0 * L, 1e-12);

    auto phi = [&](const MatrixXd& q) {
      double v = 0.0;
      for (int i = 0; i < K; ++i)
        v += q.col(i).dot(A[static_cast<std::size_t>(i)] * q.col(i)) -
             2.0 * b[static_cast<std::size_t>(i)].dot(q.col(i));
      return v;
    };

    // Projected gradient on the convex subproblem (monotone in phi).
    MatrixXd Qn = Q;
    for (int t = 0; t < 200; ++t) {
      for (int i = 0; i < K; ++i)
        Qn.col(i) -= step * 2.0 *
                     (A[static_cast<std::size_t>(i)] * Qn.col(i) - b[static_cast<std::size_t>(i)]);
      project(Qn);
    }
    if (phi(Qn) <= phi(Q) + 1e-12 * (1.0 + std::abs(phi(Q)))) Q = Qn;

    double obj = sum_se(Q);
    res.objective_trace.push_back(obj);
    res.iterations = it + 1;
    if (it > 0 && std::abs(obj - prev_obj) <= wcfg.tol * std::max(1.0, std::abs(obj))) break;
    prev_obj = obj;
  }

  res.solution = basis;
  res.solution.p = Tensor({M, K});
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k)
      res.solution.p[static_cast<std::int64_t>(m) * K + k] = Q(m, k) * Q(m, k);
  // The squared projected amplitudes are feasible by construction; clean up
  // float dust so feasibility checks are exact.
  res.solution.p = project_power(res.solution.p, cfg);
  return res;
}

}  // namespace mdgnn
