#include "mdgnn/channel_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mdgnn {

Tensor ComplexTensor3::to_real() const {
  Tensor t({2, M, K, N});
  std::int64_t n = static_cast<std::int64_t>(M) * K * N;
  for (std::int64_t i = 0; i < n; ++i) {
    t[i] = v[static_cast<std::size_t>(i)].real();
    t[n + i] = v[static_cast<std::size_t>(i)].imag();
  }
  return t;
}

ComplexTensor3 ComplexTensor3::from_real(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 2)
    throw std::invalid_argument("from_real: expects [2,M,K,N]");
  ComplexTensor3 c(t.dim(1), t.dim(2), t.dim(3));
  std::int64_t n = static_cast<std::int64_t>(c.M) * c.K * c.N;
  for (std::int64_t i = 0; i < n; ++i)
    c.v[static_cast<std::size_t>(i)] = cplx(t[i], t[n + i]);
  return c;
}

void SystemConfig::validate() const {
  if (M < 1 || K < 1 || N < 1) throw std::invalid_argument("SystemConfig: M,K,N must be >= 1");
  if (p_max_watt <= 0.0) throw std::invalid_argument("SystemConfig: p_max_watt must be > 0");
  if (area_side <= 0.0) throw std::invalid_argument("SystemConfig: area_side must be > 0");
  if (!fairness_weights.empty() &&
      fairness_weights.size() != static_cast<std::size_t>(K))
    throw std::invalid_argument("SystemConfig: fairness weight count != K");
  for (double a : fairness_weights)
    if (a < 0.0 || a > 1.0) throw std::invalid_argument("SystemConfig: fairness weight not in [0,1]");
}

double SystemConfig::noise_power_watt() const {
  return std::pow(10.0, (noise_power_dbm - 30.0) / 10.0);
}

double SystemConfig::fairness(int k) const {
  return fairness_weights.empty() ? 1.0 : fairness_weights[static_cast<std::size_t>(k)];
}

namespace {

double toroidal_dist(double ax, double ay, double bx, double by, double side) {
  double dx = std::abs(ax - bx), dy = std::abs(ay - by);
  dx = std::min(dx, side - dx);
  dy = std::min(dy, side - dy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

ChannelRealization generate_channel(const SystemConfig& cfg, double sigma_i_sq,
                                    std::uint64_t rng_seed) {
  cfg.validate();
  if (!std::isfinite(sigma_i_sq) || sigma_i_sq < 0.0)
    throw std::invalid_argument("generate_channel: sigma_i_sq must be finite and >= 0");

  Rng rng(rng_seed);
  const int M = cfg.M, K = cfg.K, N = cfg.N;

  std::vector<double> apx(M), apy(M), uex(K), uey(K);
  for (int m = 0; m < M; ++m) {
    apx[m] = rng.uniform(0.0, cfg.area_side);
    apy[m] = rng.uniform(0.0, cfg.area_side);
  }
  for (int k = 0; k < K; ++k) {
    uex[k] = rng.uniform(0.0, cfg.area_side);
    uey[k] = rng.uniform(0.0, cfg.area_side);
  }

  std::vector<double> beta(static_cast<std::size_t>(M) * K);
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      double d = std::max(10.0, toroidal_dist(apx[m], apy[m], uex[k], uey[k], cfg.area_side));
      double beta_db = -30.5 - 36.7 * std::log10(d);
      if (cfg.shadow_fading) beta_db += 4.0 * rng.normal();
      beta[static_cast<std::size_t>(m) * K + k] = std::pow(10.0, beta_db / 10.0);
    }

  double gain_scale = 1.0;
  double noise_eff = cfg.noise_power_watt();
  if (cfg.normalize_gain) {
    double mean_beta = 0.0;
    for (double b : beta) mean_beta += b;
    mean_beta /= static_cast<double>(beta.size());
    gain_scale = mean_beta;
    noise_eff /= gain_scale;
  }

  ChannelRealization out;
  out.h_true = ComplexTensor3(M, K, N);
  out.h_observed = ComplexTensor3(M, K, N);
  out.sigma_i_sq = sigma_i_sq;
  out.noise_power_eff = noise_eff;
  out.seed = rng_seed;

  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      double amp = std::sqrt(beta[static_cast<std::size_t>(m) * K + k] / gain_scale / 2.0);
      for (int n = 0; n < N; ++n)
        out.h_true.at(m, k, n) = cplx(amp * rng.normal(), amp * rng.normal());
    }

  if (sigma_i_sq == 0.0) {
    out.h_observed = out.h_true;
  } else {
    double es = std::sqrt(sigma_i_sq / 2.0);
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n)
          out.h_observed.at(m, k, n) =
              out.h_true.at(m, k, n) + cplx(es * rng.normal(), es * rng.normal());
  }
  return out;
}

double sum_se_precoding(const ComplexTensor3& h, const PrecodingSolution& w,
                        const SystemConfig& cfg, double noise_power) {
  if (!h.same_shape(w.w)) throw std::invalid_argument("sum_se_precoding: shape mismatch");
  const int M = h.M, K = h.K, N = h.N;
  double sigma2 = noise_power >= 0.0 ? noise_power : cfg.noise_power_watt();

  double se = 0.0;
  for (int k = 0; k < K; ++k) {
    double sig = 0.0, intf = 0.0;
    for (int i = 0; i < K; ++i) {
      cplx c(0.0, 0.0);
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
          c += std::conj(h.at(m, k, n)) * w.w.at(m, i, n);
      double p = std::norm(c);
      if (i == k)
        sig = p;
      else
        intf += p;
    }
    se += cfg.fairness(k) * std::log2(1.0 + sig / (intf + sigma2));
  }
  return se;
}

double sum_se_power(const ComplexTensor3& h, const PowerSolution& sol,
                    const SystemConfig& cfg, double noise_power) {
  const int M = h.M, K = h.K, N = h.N;
  if (!h.same_shape(sol.basis)) throw std::invalid_argument("sum_se_power: shape mismatch");
  if (sol.p.rank() != 2 || sol.p.dim(0) != M || sol.p.dim(1) != K)
    throw std::invalid_argument("sum_se_power: p must be [M,K]");
  for (std::int64_t i = 0; i < sol.p.size(); ++i)
    if (sol.p[i] < 0.0) throw std::invalid_argument("sum_se_power: negative power");

  PrecodingSolution w;
  w.w = ComplexTensor3(M, K, N);
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      double a = std::sqrt(sol.p[static_cast<std::int64_t>(m) * K + k]);
      for (int n = 0; n < N; ++n) w.w.at(m, k, n) = a * sol.basis.at(m, k, n);
    }
  return sum_se_precoding(h, w, cfg, noise_power);
}

PrecodingSolution project_power(const PrecodingSolution& w, const SystemConfig& cfg) {
  const int M = w.w.M, K = w.w.K, N = w.w.N;
  PrecodingSolution out = w;
  for (int m = 0; m < M; ++m) {
    double pw = 0.0;
    for (int k = 0; k < K; ++k)
      for (int n = 0; n < N; ++n) pw += std::norm(w.w.at(m, k, n));
    if (!std::isfinite(pw)) throw std::invalid_argument("project_power: non-finite input");
    if (pw > cfg.p_max_watt) {
      double s = std::sqrt(cfg.p_max_watt / pw);
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n) out.w.at(m, k, n) *= s;
    }
  }
  return out;
}

Tensor project_power(const Tensor& p, const SystemConfig& cfg) {
  if (p.rank() != 2) throw std::invalid_argument("project_power: p must be [M,K]");
  const int M = p.dim(0), K = p.dim(1);
  Tensor out = p;
  for (int m = 0; m < M; ++m) {
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      double v = out[static_cast<std::int64_t>(m) * K + k];
      if (!std::isfinite(v)) throw std::invalid_argument("project_power: non-finite input");
      out[static_cast<std::int64_t>(m) * K + k] = std::max(0.0, v);
      s += std::max(0.0, v);
    }
    if (s > cfg.p_max_watt) {
      double sc = cfg.p_max_watt / s;
      for (int k = 0; k < K; ++k) out[static_cast<std::int64_t>(m) * K + k] *= sc;
    }
  }
  return out;
}

double power_violation(const PrecodingSolution& w, const SystemConfig& cfg) {
  double worst = -1e300;
  for (int m = 0; m < w.w.M; ++m) {
    double pw = 0.0;
    for (int k = 0; k < w.w.K; ++k)
      for (int n = 0; n < w.w.N; ++n) pw += std::norm(w.w.at(m, k, n));
    worst = std::max(worst, pw - cfg.p_max_watt);
  }
  return worst;
}

double power_violation(const Tensor& p, const SystemConfig& cfg) {
  double worst = -1e300;
  for (int m = 0; m < p.dim(0); ++m) {
    double s = 0.0;
    for (int k = 0; k < p.dim(1); ++k) s += p[static_cast<std::int64_t>(m) * p.dim(1) + k];
    worst = std::max(worst, s - cfg.p_max_watt);
  }
  return worst;
}

namespace {

void put(std::ofstream& f, double x) {
  f.write(reinterpret_cast<const char*>(&x), sizeof(double));
}

double get(std::ifstream& f) {
  double x = 0.0;
  f.read(reinterpret_cast<char*>(&x), sizeof(double));
  if (!f) throw std::runtime_error("channel snapshot: truncated file");
  return x;
}

void put_complex(std::ofstream& f, const ComplexTensor3& t) {
  for (const cplx& c : t.v) {
    put(f, c.real());
    put(f, c.imag());
  }
}

ComplexTensor3 get_complex(std::ifstream& f, int M, int K, int N) {
  ComplexTensor3 t(M, K, N);
  for (cplx& c : t.v) {
    double re = get(f), im = get(f);
    c = cplx(re, im);
  }
  return t;
}

}  // namespace

void save_channel_snapshot(const std::string& path,
                           const std::vector<ChannelRealization>& draws) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  put(f, static_cast<double>(draws.size()));
  for (const ChannelRealization& d : draws) {
    put(f, d.h_true.M);
    put(f, d.h_true.K);
    put(f, d.h_true.N);
    put(f, static_cast<double>(d.seed));
    put(f, d.sigma_i_sq);
    put(f, d.noise_power_eff);
    put_complex(f, d.h_true);
    put_complex(f, d.h_observed);
  }
}

std::vector<ChannelRealization> load_channel_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  auto n = static_cast<std::size_t>(get(f));
  std::vector<ChannelRealization> draws;
  draws.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    int M = static_cast<int>(get(f)), K = static_cast<int>(get(f)),
        N = static_cast<int>(get(f));
    if (M < 1 || K < 1 || N < 1)
      throw std::runtime_error("channel snapshot: bad record header");
    ChannelRealization d;
    d.seed = static_cast<std::uint64_t>(get(f));
    d.sigma_i_sq = get(f);
    d.noise_power_eff = get(f);
    d.h_true = get_complex(f, M, K, N);
    d.h_observed = get_complex(f, M, K, N);
    draws.push_back(std::move(d));
  }
  return draws;
}

}  // namespace mdgnn
