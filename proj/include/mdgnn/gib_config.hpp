#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace mdgnn {

/// Information-bottleneck training knobs shared by model forward and loss.
/// Layers are numbered 1..L; layer l is the one producing z^l.
struct GibConfig {
  double beta = 1e-4;       // bound tradeoff
  double alpha = 0.5;       // Bernoulli prior on keeping a neighbor
  int mixture_X = 5;        // Gaussian mixture prior components
  std::vector<int> s_e;     // layers with stochastic representations
  std::vector<int> s_a;     // layers with neighbor-structure sampling
  double temperature = 0.5; // binary-concrete relaxation temperature
  bool reward_on_observed = false;  // loss SE on h_observed instead of h_true
  bool supervised = false;          // regress against provided targets

  bool in_s_e(int l) const { return std::count(s_e.begin(), s_e.end(), l) > 0; }
  bool in_s_a(int l) const { return std::count(s_a.begin(), s_a.end(), l) > 0; }

  /// S_e nonempty within [1, L]; with l* = max(S_e), S_a must contain every
  /// layer in [l*+1, L] (the index-set rule).
  void validate(int L) const {
    if (beta < 0.0) throw std::invalid_argument("GibConfig: beta must be >= 0");
    if (alpha <= 0.0 || alpha >= 1.0)
      throw std::invalid_argument("GibConfig: alpha must be in (0,1)");
    if (mixture_X < 1) throw std::invalid_argument("GibConfig: mixture_X >= 1");
    if (temperature <= 0.0) throw std::invalid_argument("GibConfig: temperature > 0");
    if (s_e.empty()) throw std::invalid_argument("GibConfig: S_e must be nonempty");
    for (int l : s_e)
      if (l < 1 || l > L) throw std::invalid_argument("GibConfig: S_e index out of range");
    for (int l : s_a)
      if (l < 1 || l > L) throw std::invalid_argument("GibConfig: S_a index out of range");
    int lmax = *std::max_element(s_e.begin(), s_e.end());
    for (int l = lmax + 1; l <= L; ++l)
      if (!in_s_a(l))
        throw std::invalid_argument(
            "GibConfig: every layer above max(S_e) must sample structure");
  }

  static GibConfig defaults_for(int L) {
    GibConfig g;
    g.s_e = {L};
    for (int l = 1; l <= L; ++l) g.s_a.push_back(l);
    return g;
  }
};

}  // namespace mdgnn
