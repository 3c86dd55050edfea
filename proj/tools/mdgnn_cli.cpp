// Experiment harness: train the edge/vertex network families against the
// classical baselines across sweep grids, and render comparison tables.
#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

#include "mdgnn/exp_cli.hpp"

using namespace mdgnn;
using nlohmann::json;

namespace {

/// JSON config file: keys mirror the CLI flags and take precedence over
/// anything given on the command line.
void apply_json_overrides(ExperimentSpec& spec, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  json j = json::parse(f);
  if (j.contains("task")) spec.task = j["task"].get<std::string>();
  if (j.contains("families")) spec.families = j["families"].get<std::vector<std::string>>();
  if (j.contains("structure")) spec.structure = j["structure"].get<std::string>();
  if (j.contains("axis")) spec.axis = j["axis"].get<std::string>();
  if (j.contains("grid")) spec.grid = j["grid"].get<std::vector<double>>();
  if (j.contains("trials")) spec.trials = j["trials"].get<int>();
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("layers")) spec.layers = j["layers"].get<int>();
  if (j.contains("hidden")) spec.hidden = j["hidden"].get<int>();
  if (j.contains("train_steps")) spec.train_steps = j["train_steps"].get<int>();
  if (j.contains("batch_size")) spec.batch_size = j["batch_size"].get<int>();
  if (j.contains("eval_draws")) spec.eval_draws = j["eval_draws"].get<int>();
  if (j.contains("sigma_i_sq")) spec.sigma_i_sq = j["sigma_i_sq"].get<double>();
  if (j.contains("beta")) spec.beta = j["beta"].get<double>();
  if (j.contains("lr")) spec.lr = j["lr"].get<double>();
  if (j.contains("lr_final_frac")) spec.lr_final_frac = j["lr_final_frac"].get<double>();
  if (j.contains("train_K")) spec.train_K = j["train_K"].get<int>();
  if (j.contains("test_K")) spec.test_K = j["test_K"].get<std::vector<int>>();
  if (j.contains("out")) spec.out = j["out"].get<std::string>();
  if (j.contains("M")) spec.sys.M = j["M"].get<int>();
  if (j.contains("K")) spec.sys.K = j["K"].get<int>();
  if (j.contains("N")) spec.sys.N = j["N"].get<int>();
  if (j.contains("normalize_gain")) spec.sys.normalize_gain = j["normalize_gain"].get<bool>();
}

void add_spec_flags(CLI::App* cmd, ExperimentSpec& spec, std::string& config_path) {
  cmd->add_option("--task", spec.task, "precoding | power-zf | power-lmmse");
  cmd->add_option("--families", spec.families,
                  "edge-mdgnn eib-mdgnn egib-bern vertex-gnn vib-gnn vgib-bern");
  cmd->add_option("--structure", spec.structure, "weight-sharing structure row name");
  cmd->add_option("--axis", spec.axis, "sigma_i_sq | beta | M | K | N");
  cmd->add_option("--grid", spec.grid, "sweep values");
  cmd->add_option("--trials", spec.trials, "training replicas per point");
  cmd->add_option("--seed", spec.seed, "master seed");
  cmd->add_option("--out", spec.out, "output stem (<out>.csv, <out>.gp)");
  cmd->add_option("--layers", spec.layers, "hidden layers");
  cmd->add_option("--hidden", spec.hidden, "hidden width");
  cmd->add_option("--steps", spec.train_steps, "training steps per replica");
  cmd->add_option("--batch", spec.batch_size, "channel draws per step");
  cmd->add_option("--eval-draws", spec.eval_draws, "held-out channels per point");
  cmd->add_option("--sigma", spec.sigma_i_sq, "CSI noise variance off-axis");
  cmd->add_option("--beta", spec.beta, "bound weight off-axis");
  cmd->add_option("--lr", spec.lr, "Adam learning rate");
  cmd->add_option("--lr-final-frac", spec.lr_final_frac,
                  "linear lr decay target as a fraction of --lr");
  cmd->add_option("--M", spec.sys.M, "APs");
  cmd->add_option("--K", spec.sys.K, "UEs");
  cmd->add_option("--N", spec.sys.N, "antennas per AP");
  cmd->add_option("--train-k", spec.train_K, "transfer: UEs during training");
  cmd->add_option("--test-k", spec.test_K, "transfer: UEs at evaluation");
  cmd->add_option("--config", config_path, "JSON file overriding any flag");
}

int emit(const ExperimentSpec& spec, const std::vector<ResultRow>& rows) {
  std::string csv = spec.out + ".csv", gp = spec.out + ".gp";
  write_results_csv(csv, rows);
  write_plot_script(gp, csv, rows);
  std::cout << compare_table(rows) << "wrote " << csv << " and " << gp << "\n";
  return 0;
}

int run_selftest() {
  ExperimentSpec spec;
  spec.sys.M = 3;
  spec.sys.K = 2;
  spec.sys.N = 2;
  spec.sys.normalize_gain = true;
  spec.families = {"egib-bern"};
  spec.grid = {0.1};
  spec.trials = 1;
  spec.train_steps = 5;
  spec.batch_size = 2;
  spec.eval_draws = 10;
  spec.hidden = 6;
  spec.out = "selftest";
  std::vector<ResultRow> rows = run_sweep(spec);
  for (const ResultRow& r : rows)
    if (!std::isfinite(r.mean_se) || r.mean_se < 0.0) {
      std::cerr << "selftest: bad SE for " << r.family << "\n";
      return 1;
    }
  if (format_percent(30.04, 24.75) != "+21.37%" ||
      format_percent(16.13, 24.75) != "-34.83%") {
    std::cerr << "selftest: percent formatter mismatch\n";
    return 1;
  }
  std::cout << compare_table(rows) << "selftest ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edge-network experiment harness for cell-free MIMO resource allocation"};
  app.require_subcommand(1);

  ExperimentSpec spec;
  spec.sys.normalize_gain = true;
  std::string config_path, table_in;

  CLI::App* sweep = app.add_subcommand("sweep", "train families across a sweep grid");
  add_spec_flags(sweep, spec, config_path);
  CLI::App* transfer =
      app.add_subcommand("transfer", "train at train-k UEs, evaluate at test-k");
  add_spec_flags(transfer, spec, config_path);
  CLI::App* table = app.add_subcommand("table", "render a comparison table from a CSV");
  table->add_option("--in", table_in, "results CSV")->required();
  CLI::App* selftest = app.add_subcommand("selftest", "tiny end-to-end sanity run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) apply_json_overrides(spec, config_path);
    if (sweep->parsed()) return emit(spec, run_sweep(spec));
    if (transfer->parsed()) return emit(spec, run_transfer(spec));
    if (table->parsed()) {
      std::cout << compare_table(read_results_csv(table_in));
      return 0;
    }
    if (selftest->parsed()) return run_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
