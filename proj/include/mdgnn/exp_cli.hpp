#pragma once

#include <string>
#include <vector>

#include "mdgnn/train_engine.hpp"

namespace mdgnn {

/// One experiment: sweep `axis` over `grid`, training every family at each
/// point and scoring it against the WMMSE baselines on shared held-out
/// channels. Integer axes (M, K, N) read their values from the grid too.
struct ExperimentSpec {
  std::string task = "precoding";  // precoding | power-zf | power-lmmse
  std::vector<std::string> families = {"egib-bern"};
  std::string structure = "2D-GNN-L-K";
  std::string axis = "sigma_i_sq";  // sigma_i_sq | beta | M | K | N
  std::vector<double> grid = {1e-2, 1e-1, 1e0, 3.1622776601683795, 1e1};
  int trials = 3;
  std::uint64_t seed = 1;

  SystemConfig sys;  // sizes at non-swept axes
  int layers = 2;
  int hidden = 16;
  int train_steps = 3000;
  int batch_size = 8;
  int eval_draws = 200;
  double sigma_i_sq = 0.1;  // fixed CSI noise when the axis is elsewhere
  double beta = 1e-4;       // fixed bound weight when the axis is elsewhere
  double lr = 1e-3;
  double lr_final_frac = 1.0;  // linear decay target as a fraction of lr

  // transfer mode: train at train_K users, evaluate the same weights on
  // each test_K (weights are K-independent for the non-nested structures)
  int train_K = 3;
  std::vector<int> test_K = {4, 5, 6, 7, 8};

  std::string out = "results";  // output stem: <out>.csv, <out>.gp

  void validate() const;
  HeadKind head() const;
  BasisKind basis() const;
};

/// One point of the result grid. Baseline rows ("WMMSE", "Upper Bound")
/// carry zero bound terms, parameter count, and wall time.
struct ResultRow {
  std::string family;
  std::string structure;
  std::string axis;
  double value = 0.0;
  double mean_se = 0.0;
  double std_se = 0.0;  // over trials; 0 for baselines
  double a_term = 0.0;  // last-step averages over trials
  double e_term = 0.0;
  std::int64_t param_count = 0;
  double train_wall_ms = 0.0;
};

/// Trains families × grid points (parallel across points, worker count from
/// the MDGNN_WORKERS env var) and appends a "WMMSE" row (imperfect CSI) and
/// an "Upper Bound" row (WMMSE on the true channel) at every point.
std::vector<ResultRow> run_sweep(const ExperimentSpec& spec);

/// Trains each family once at K = spec.train_K, then evaluates the frozen
/// weights at every K in spec.test_K (axis column is "K").
std::vector<ResultRow> run_transfer(const ExperimentSpec& spec);

/// Signed percent delta against a baseline: (30.04, 24.75)
/// -> "+21.37%".
std::string format_percent(double se, double baseline_se);

/// Text table of mean SE with percent-vs-WMMSE deltas, one row per family,
/// one column per sweep value. Rows missing a WMMSE reference throw.
std::string compare_table(const std::vector<ResultRow>& rows);

/// Versioned CSV (schema comment line + header) and a gnuplot script
/// rendering SE-vs-axis curves per family.
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::string& path);
void write_plot_script(const std::string& path, const std::string& csv_path,
                       const std::vector<ResultRow>& rows);

/// Worker count: MDGNN_WORKERS if set (>= 1), else min(4, hardware).
int worker_count();

}  // namespace mdgnn
