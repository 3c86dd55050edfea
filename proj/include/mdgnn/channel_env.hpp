#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mdgnn/rng.hpp"
#include "mdgnn/tensor.hpp"

namespace mdgnn {

using cplx = std::complex<double>;

/// Complex [M, K, N] tensor: channel vectors h_mk in C^N or precoders w_mk.
struct ComplexTensor3 {
  int M = 0, K = 0, N = 0;
  std::vector<cplx> v;

  ComplexTensor3() = default;
  ComplexTensor3(int m, int k, int n)
      : M(m), K(k), N(n), v(static_cast<std::size_t>(m) * k * n) {}

  cplx& at(int m, int k, int n) {
    return v[(static_cast<std::size_t>(m) * K + k) * N + n];
  }
  cplx at(int m, int k, int n) const {
    return v[(static_cast<std::size_t>(m) * K + k) * N + n];
  }
  bool same_shape(const ComplexTensor3& o) const {
    return M == o.M && K == o.K && N == o.N;
  }

  /// Pack as real tensor [2, M, K, N] (re channel 0, im channel 1).
  Tensor to_real() const;
  static ComplexTensor3 from_real(const Tensor& t);
};

struct SystemConfig {
  int M = 10;
  int K = 4;
  int N = 4;
  double area_side = 1000.0;       // meters
  double noise_power_dbm = -94.0;  // receiver noise
  double bandwidth_hz = 20e6;
  double p_max_watt = 1.0;  // per-AP budget
  std::vector<double> fairness_weights;  // empty => all ones
  bool shadow_fading = false;            // optional 4 dB log-normal
  /// Rescale each draw by its mean large-scale gain so channel entries have
  /// unit average power; the effective noise power is rescaled to match, so
  /// every SINR (and hence SE) is unchanged. CSI noise variances then read
  /// directly as inverse per-entry SNR.
  bool normalize_gain = false;

  void validate() const;
  double noise_power_watt() const;
  double fairness(int k) const;
};

struct ChannelRealization {
  ComplexTensor3 h_true;
  ComplexTensor3 h_observed;
  double sigma_i_sq = 0.0;
  /// Noise power to use in SE evaluation; equals the configured receiver
  /// noise unless the draw was gain-normalized.
  double noise_power_eff = 0.0;
  std::uint64_t seed = 0;
};

struct PrecodingSolution {
  ComplexTensor3 w;
};

struct PowerSolution {
  Tensor p;                       // [M, K], nonnegative
  ComplexTensor3 basis;           // unit-norm direction vectors
  bool rank_deficient = false;    // pseudo-inverse fallback was taken
};

/// Draws AP/UE positions uniformly in the square (toroidal wrap-around
/// distance, 10 m minimum), one-slope pathloss
/// beta[dB] = -30.5 - 36.7 log10(d / 1 m), Rayleigh small-scale fading
/// h_mk ~ CN(0, beta_mk I_N), and CSI corruption
/// h_observed = h_true + e with e ~ CN(0, sigma_i_sq) i.i.d. per entry.
ChannelRealization generate_channel(const SystemConfig& cfg, double sigma_i_sq,
                                    std::uint64_t rng_seed);

/// Weighted sum SE (bps/Hz), Case-1 SINR with coherent sums across APs.
/// noise_power < 0 means "use cfg.noise_power_watt()".
double sum_se_precoding(const ComplexTensor3& h, const PrecodingSolution& w,
                        const SystemConfig& cfg, double noise_power = -1.0);

/// Case-2 sum SE: effective precoders sqrt(p_mk) * basis_mk.
double sum_se_power(const ComplexTensor3& h, const PowerSolution& sol,
                    const SystemConfig& cfg, double noise_power = -1.0);

/// Per-AP power scaling onto the feasible set; idempotent, directions kept.
PrecodingSolution project_power(const PrecodingSolution& w, const SystemConfig& cfg);
Tensor project_power(const Tensor& p, const SystemConfig& cfg);

/// Max over APs of (sum_k ||w_mk||^2 - p_m); feasible iff <= ~1e-9.
double power_violation(const PrecodingSolution& w, const SystemConfig& cfg);
double power_violation(const Tensor& p, const SystemConfig& cfg);

/// Binary regression snapshot of channel draws. Everything is little-endian
/// IEEE-754 doubles: a record count, then per record a header
/// (M, K, N, seed, sigma_i_sq, noise_power_eff) followed by h_true and
/// h_observed as interleaved (re, im) payloads of length 2*M*K*N each.
void save_channel_snapshot(const std::string& path,
                           const std::vector<ChannelRealization>& draws);
std::vector<ChannelRealization> load_channel_snapshot(const std::string& path);

}  // namespace mdgnn
