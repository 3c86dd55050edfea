#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>

#include "mdgnn/exp_cli.hpp"

using namespace mdgnn;

namespace {

ExperimentSpec tiny_spec() {
  ExperimentSpec spec;
  spec.sys.M = 3;
  spec.sys.K = 2;
  spec.sys.N = 2;
  spec.sys.normalize_gain = true;
  spec.families = {"edge-mdgnn", "vertex-gnn"};
  spec.grid = {0.1, 0.5};
  spec.trials = 2;
  spec.train_steps = 2;
  spec.batch_size = 1;
  spec.eval_draws = 5;
  spec.hidden = 4;
  return spec;
}

}  // namespace

TEST_CASE("percent formatter emits signed two-decimal deltas") {
  CHECK(format_percent(30.04, 24.75) == "+21.37%");
  CHECK(format_percent(16.13, 24.75) == "-34.83%");
  CHECK(format_percent(24.75, 24.75) == "+0.00%");
}

TEST_CASE("spec validation rejects malformed experiments") {
  ExperimentSpec s = tiny_spec();
  CHECK_NOTHROW(s.validate());
  ExperimentSpec bad = s;
  bad.axis = "gamma";
  CHECK_THROWS(bad.validate());
  bad = s;
  bad.grid.clear();
  CHECK_THROWS(bad.validate());
  bad = s;
  bad.families = {"mlp"};
  CHECK_THROWS(bad.validate());
  bad = s;
  bad.axis = "K";
  bad.grid = {2.5};
  CHECK_THROWS(bad.validate());
  bad = s;
  bad.task = "power-zf";
  CHECK_NOTHROW(bad.validate());
  CHECK(bad.head() == HeadKind::power);
  CHECK(bad.basis() == BasisKind::zf);
}

TEST_CASE("worker count honors the environment variable") {
  setenv("MDGNN_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("MDGNN_WORKERS", "0", 1);
  CHECK(worker_count() >= 1);  // invalid value falls back
  unsetenv("MDGNN_WORKERS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("sweep emits family rows plus both baselines at every point") {
  ExperimentSpec spec = tiny_spec();
  std::vector<ResultRow> rows = run_sweep(spec);
  REQUIRE(rows.size() == spec.grid.size() * (spec.families.size() + 2));
  for (std::size_t gi = 0; gi < spec.grid.size(); ++gi) {
    std::size_t off = gi * (spec.families.size() + 2);
    CHECK(rows[off].family == "edge-mdgnn");
    CHECK(rows[off].structure == spec.structure);
    CHECK(rows[off + 1].family == "vertex-gnn");
    CHECK(rows[off + 1].structure == "bipartite");
    CHECK(rows[off + 2].family == "WMMSE");
    CHECK(rows[off + 3].family == "Upper Bound");
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(rows[off + j].value == spec.grid[gi]);
      CHECK(std::isfinite(rows[off + j].mean_se));
      CHECK(rows[off + j].mean_se >= 0.0);
      CHECK(rows[off + j].std_se >= 0.0);
    }
    // perfect-CSI WMMSE should not lose to its imperfect-CSI counterpart
    CHECK(rows[off + 3].mean_se >= 0.99 * rows[off + 2].mean_se);
    CHECK(rows[off].param_count > 0);
  }

  // bit-identical regeneration from the same spec
  std::vector<ResultRow> again = run_sweep(spec);
  REQUIRE(again.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].family == rows[i].family);
    CHECK(again[i].mean_se == rows[i].mean_se);
    CHECK(again[i].std_se == rows[i].std_se);
  }

  // CSV + plot artifacts round-trip
  write_results_csv("exp_test.csv", rows);
  std::vector<ResultRow> back = read_results_csv("exp_test.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].family == rows[i].family);
    CHECK(back[i].mean_se == doctest::Approx(rows[i].mean_se).epsilon(1e-10));
    CHECK(back[i].param_count == rows[i].param_count);
  }
  write_plot_script("exp_test.gp", "exp_test.csv", rows);
  std::ifstream gp("exp_test.gp");
  std::string all((std::istreambuf_iterator<char>(gp)), std::istreambuf_iterator<char>());
  CHECK(all.find("plot ") != std::string::npos);
  CHECK(all.find("edge-mdgnn") != std::string::npos);
  std::remove("exp_test.csv");
  std::remove("exp_test.gp");

  std::string table = compare_table(rows);
  CHECK(table.find("WMMSE") != std::string::npos);
  CHECK(table.find("+0.00%") != std::string::npos);  // WMMSE vs itself
}

TEST_CASE("compare_table requires a WMMSE reference") {
  ResultRow r;
  r.family = "edge-mdgnn";
  r.axis = "sigma_i_sq";
  r.value = 0.1;
  r.mean_se = 5.0;
  CHECK_THROWS(compare_table({r}));
}

TEST_CASE("power task sweep runs end to end") {
  ExperimentSpec spec = tiny_spec();
  spec.task = "power-lmmse";
  spec.families = {"egib-bern"};
  spec.grid = {0.5};
  spec.trials = 1;
  std::vector<ResultRow> rows = run_sweep(spec);
  REQUIRE(rows.size() == 3);
  for (const ResultRow& r : rows) {
    CHECK(std::isfinite(r.mean_se));
    CHECK(r.mean_se >= 0.0);
  }
}

TEST_CASE("transfer reuses weights trained at a smaller user count") {
  ExperimentSpec spec = tiny_spec();
  spec.families = {"edge-mdgnn"};
  spec.trials = 1;
  spec.train_K = 2;
  spec.test_K = {3, 4};
  std::vector<ResultRow> rows = run_transfer(spec);
  REQUIRE(rows.size() == 2 * 3);
  CHECK(rows[0].axis == "K");
  CHECK(rows[0].value == 3.0);
  CHECK(rows[3].value == 4.0);
  CHECK(rows[1].family == "WMMSE");
  CHECK(rows[2].family == "Upper Bound");
  for (const ResultRow& r : rows) CHECK(std::isfinite(r.mean_se));
}

TEST_CASE("channel snapshots round-trip bit-exactly") {
  SystemConfig sys;
  sys.M = 3;
  sys.K = 2;
  sys.N = 2;
  sys.normalize_gain = true;
  std::vector<ChannelRealization> draws;
  for (int i = 0; i < 4; ++i) draws.push_back(generate_channel(sys, 0.1, 100 + i));
  save_channel_snapshot("chan_test.bin", draws);
  std::vector<ChannelRealization> back = load_channel_snapshot("chan_test.bin");
  REQUIRE(back.size() == draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    CHECK(back[i].seed == draws[i].seed);
    CHECK(back[i].sigma_i_sq == draws[i].sigma_i_sq);
    CHECK(back[i].noise_power_eff == draws[i].noise_power_eff);
    REQUIRE(back[i].h_true.v.size() == draws[i].h_true.v.size());
    for (std::size_t j = 0; j < draws[i].h_true.v.size(); ++j) {
      CHECK(back[i].h_true.v[j] == draws[i].h_true.v[j]);
      CHECK(back[i].h_observed.v[j] == draws[i].h_observed.v[j]);
    }
  }
  std::remove("chan_test.bin");
}
