#pragma once

#include <vector>

#include "mdgnn/channel_env.hpp"

namespace mdgnn {

struct WmmseConfig {
  int max_iters = 200;
  double tol = 1e-6;           // relative objective change
  double bisection_tol = 1e-8;
  void validate() const;
};

struct WmmseResult {
  PrecodingSolution solution;
  std::vector<double> objective_trace;  // weighted sum-SE value per iteration
  int iterations = 0;
};

struct WmmsePowerResult {
  PowerSolution solution;
  std::vector<double> objective_trace;
  int iterations = 0;
};

/// WMMSE joint precoding with per-AP power constraints. The transmit update
/// solves its convex subproblem through per-AP Lagrange-multiplier bisection
/// (Gauss-Seidel sweeps on the dual), with a monotonicity safeguard: an
/// update that fails to decrease the weighted MSE surrogate is discarded.
WmmseResult wmmse_precoding(const ComplexTensor3& h, const SystemConfig& cfg,
                            const WmmseConfig& wcfg, double noise_power = -1.0);

/// Per-AP local zero-forcing directions, unit-normalized. Falls back to a
/// pseudo-inverse (flagging rank_deficient) when H_m^H H_m is singular or
/// N < K.
PowerSolution zf_basis(const ComplexTensor3& h, const SystemConfig& cfg);

/// Per-AP L-MMSE directions (sum_i pbar h_mi h_mi^H + sigma^2 I)^-1 h_mk,
/// pbar = p_m / K, unit-normalized. noise_power < 0 uses cfg's.
PowerSolution lmmse_basis(const ComplexTensor3& h, const SystemConfig& cfg,
                          double noise_power = -1.0);

/// WMMSE-style alternating optimization over scalar powers p_mk for a fixed
/// basis; transmit amplitudes are updated by projected gradient descent on
/// the convex surrogate (nonnegative, per-AP budget).
WmmsePowerResult wmmse_power(const ComplexTensor3& h, const PowerSolution& basis,
                             const SystemConfig& cfg, const WmmseConfig& wcfg,
                             double noise_power = -1.0);

}  // namespace mdgnn
