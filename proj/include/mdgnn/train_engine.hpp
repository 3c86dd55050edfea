#pragma once

#include <string>
#include <vector>

#include "mdgnn/baselines.hpp"
#include "mdgnn/gib_objectives.hpp"

namespace mdgnn {

/// Direction vectors used by the power head, recomputed from each observed
/// channel draw. `none` is the precoding task (no basis).
enum class BasisKind { none, zf, lmmse };

BasisKind basis_from(const std::string& name);
std::string basis_name(BasisKind b);

struct TrainConfig {
  int steps = 400;
  int batch_size = 8;
  std::uint64_t seed = 1;
  double sigma_i_sq = 0.1;  // CSI noise variance for training draws
  BasisKind basis = BasisKind::none;

  // Adam with global-norm gradient clipping. The learning rate anneals
  // linearly to lr * lr_final_frac over the run (1.0 = constant).
  double lr = 1e-3;
  double lr_final_frac = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double reward = 0.0;
  double a_term = 0.0;
  double e_term = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm of the averaged gradient
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  bool diverged = false;
};

/// Optimizes m.params in place. Each step averages the loss gradient over
/// batch_size fresh channel draws (or over `dataset`, cycled in order, when
/// provided), clips the global gradient norm, and applies one Adam update.
/// Aborts with diverged=true on a non-finite loss or a collapsed reward.
/// Fully deterministic for a fixed (model, config, dataset).
TrainResult train(Model& m, const GibConfig& gib, const TrainConfig& tc,
                  const std::vector<ChannelRealization>* dataset = nullptr);

/// Mean weighted sum SE of the trained model over n_draws held-out channels
/// (hard structure samples at evaluation), scored on the true channel.
double evaluate_model(const Model& m, const GibConfig& gib, double sigma_i_sq,
                      int n_draws, std::uint64_t seed, BasisKind basis);

void write_history_csv(const std::string& path, const std::vector<StepRecord>& history);

}  // namespace mdgnn
