#include "mdgnn/exp_cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mdgnn {

void ExperimentSpec::validate() const {
  if (task != "precoding" && task != "power-zf" && task != "power-lmmse")
    throw std::invalid_argument("spec: unknown task " + task);
  if (axis != "sigma_i_sq" && axis != "beta" && axis != "M" && axis != "K" && axis != "N")
    throw std::invalid_argument("spec: unknown axis " + axis);
  if (grid.empty()) throw std::invalid_argument("spec: empty grid");
  if (trials < 1) throw std::invalid_argument("spec: trials must be >= 1");
  if (families.empty()) throw std::invalid_argument("spec: no families");
  for (const std::string& f : families) family_from(f);  // throws on unknown
  if (layers < 1 || hidden < 1) throw std::invalid_argument("spec: bad model size");
  if (train_steps < 0 || batch_size < 1 || eval_draws < 1)
    throw std::invalid_argument("spec: bad training budget");
  if (sigma_i_sq < 0.0 || beta < 0.0) throw std::invalid_argument("spec: bad noise/beta");
  if (axis == "M" || axis == "K" || axis == "N")
    for (double v : grid)
      if (v < 1.0 || v != std::floor(v))
        throw std::invalid_argument("spec: size axes need positive integers");
  sys.validate();
}

HeadKind ExperimentSpec::head() const {
  return task == "precoding" ? HeadKind::precoding : HeadKind::power;
}

BasisKind ExperimentSpec::basis() const {
  if (task == "power-zf") return BasisKind::zf;
  if (task == "power-lmmse") return BasisKind::lmmse;
  return BasisKind::none;
}

int worker_count() {
  if (const char* env = std::getenv("MDGNN_WORKERS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(4u, hw == 0 ? 1u : hw));
}

std::string format_percent(double se, double baseline_se) {
  double pct = (se - baseline_se) / baseline_se * 100.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f%%", pct);
  return buf;
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return Rng(seed).fork(a).fork(b).next_u64();
}

SystemConfig sys_at(const ExperimentSpec& spec, double v) {
  SystemConfig s = spec.sys;
  if (spec.axis == "M") s.M = static_cast<int>(v);
  if (spec.axis == "K") s.K = static_cast<int>(v);
  if (spec.axis == "N") s.N = static_cast<int>(v);
  return s;
}

double sigma_at(const ExperimentSpec& spec, double v) {
  return spec.axis == "sigma_i_sq" ? v : spec.sigma_i_sq;
}

double beta_at(const ExperimentSpec& spec, double v) {
  return spec.axis == "beta" ? v : spec.beta;
}

ModelConfig model_config(const ExperimentSpec& spec, Family fam, int N) {
  ModelConfig c;
  c.L = spec.layers;
  c.family = fam;
  c.structure = spec.structure;
  c.head = spec.head();
  c.channels.assign(static_cast<std::size_t>(spec.layers) + 1, spec.hidden);
  c.channels[0] = c.input_channels(N);
  return c;
}

std::string structure_label(const ExperimentSpec& spec, Family fam) {
  return family_is_vertex(fam) ? "bipartite" : spec.structure;
}

/// Same draw schedule as evaluate_model, so learned and classical rows are
/// scored on identical channels.
std::vector<ChannelRealization> eval_channels(const SystemConfig& sys, double sigma,
                                              int n, std::uint64_t seed) {
  Rng root(seed);
  std::vector<ChannelRealization> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(generate_channel(sys, sigma, root.fork(2 * i).next_u64()));
  return out;
}

double baseline_se(const ChannelRealization& d, const ComplexTensor3& h_in,
                   const SystemConfig& sys, BasisKind basis) {
  WmmseConfig wcfg;
  if (basis == BasisKind::none) {
    WmmseResult r = wmmse_precoding(h_in, sys, wcfg, d.noise_power_eff);
    return sum_se_precoding(d.h_true, r.solution, sys, d.noise_power_eff);
  }
  PowerSolution b = basis == BasisKind::zf ? zf_basis(h_in, sys)
                                           : lmmse_basis(h_in, sys, d.noise_power_eff);
  WmmsePowerResult r = wmmse_power(h_in, b, sys, wcfg, d.noise_power_eff);
  return sum_se_power(d.h_true, r.solution, sys, d.noise_power_eff);
}

struct BaselinePair {
  double wmmse = 0.0;
  double upper = 0.0;
};

BaselinePair baseline_point(const ExperimentSpec& spec, const SystemConfig& sys,
                            double sigma, std::uint64_t eval_seed) {
  BaselinePair bp;
  std::vector<ChannelRealization> draws =
      eval_channels(sys, sigma, spec.eval_draws, eval_seed);
  for (const ChannelRealization& d : draws) {
    bp.wmmse += baseline_se(d, d.h_observed, sys, spec.basis());
    bp.upper += baseline_se(d, d.h_true, sys, spec.basis());
  }
  bp.wmmse /= spec.eval_draws;
  bp.upper /= spec.eval_draws;
  return bp;
}

/// Train `trials` replicas of one family at one grid point and score them
/// on the shared held-out seed.
ResultRow family_point(const ExperimentSpec& spec, std::size_t fi, std::size_t gi,
                       const SystemConfig& sys, std::uint64_t eval_seed) {
  Family fam = family_from(spec.families[fi]);
  double v = spec.grid[gi];
  double sigma = sigma_at(spec, v);

  GibConfig gib = GibConfig::defaults_for(spec.layers);
  gib.beta = beta_at(spec, v);

  ResultRow row;
  row.family = spec.families[fi];
  row.structure = structure_label(spec, fam);
  row.axis = spec.axis;
  row.value = v;

  std::vector<double> ses;
  for (int t = 0; t < spec.trials; ++t) {
    Rng init(mix(spec.seed, 101 + gi, fi * 64 + t));
    Model m = build_model(model_config(spec, fam, sys.N), sys, gib, init);
    row.param_count = static_cast<std::int64_t>(m.params.size());

    TrainConfig tc;
    tc.steps = spec.train_steps;
    tc.batch_size = spec.batch_size;
    tc.seed = mix(spec.seed, 202 + gi, fi * 64 + t);
    tc.sigma_i_sq = sigma;
    tc.basis = spec.basis();
    tc.lr = spec.lr;
    tc.lr_final_frac = spec.lr_final_frac;
    TrainResult tr = train(m, gib, tc);
    if (!tr.history.empty()) {
      row.a_term += tr.history.back().a_term / spec.trials;
      row.e_term += tr.history.back().e_term / spec.trials;
      for (const StepRecord& s : tr.history) row.train_wall_ms += s.wall_ms;
    }
    ses.push_back(evaluate_model(m, gib, sigma, spec.eval_draws, eval_seed,
                                 spec.basis()));
  }
  double mean = 0.0;
  for (double s : ses) mean += s;
  mean /= static_cast<double>(ses.size());
  double var = 0.0;
  for (double s : ses) var += (s - mean) * (s - mean);
  row.mean_se = mean;
  row.std_se = ses.size() > 1 ? std::sqrt(var / (static_cast<double>(ses.size()) - 1.0))
                              : 0.0;
  return row;
}

void run_pool(std::size_t n_tasks, const std::function<void(std::size_t)>& fn) {
  int workers = std::min<int>(worker_count(), static_cast<int>(n_tasks));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) fn(i);
    });
  for (std::thread& t : pool) t.join();
}

ResultRow baseline_row(const ExperimentSpec& spec, const std::string& name, double v,
                       double se) {
  ResultRow r;
  r.family = name;
  r.structure = "-";
  r.axis = spec.axis;
  r.value = v;
  r.mean_se = se;
  return r;
}

}  // namespace

std::vector<ResultRow> run_sweep(const ExperimentSpec& spec) {
  spec.validate();
  const std::size_t G = spec.grid.size(), F = spec.families.size();

  // task grid: per point, F training cells + one baseline cell
  std::vector<ResultRow> cells(G * F);
  std::vector<BaselinePair> base(G);
  std::size_t n_tasks = G * (F + 1);
  run_pool(n_tasks, [&](std::size_t i) {
    std::size_t gi = i / (F + 1), j = i % (F + 1);
    SystemConfig sys = sys_at(spec, spec.grid[gi]);
    std::uint64_t eval_seed = mix(spec.seed, 303, gi);
    if (j == F)
      base[gi] = baseline_point(spec, sys, sigma_at(spec, spec.grid[gi]), eval_seed);
    else
      cells[gi * F + j] = family_point(spec, j, gi, sys, eval_seed);
  });

  std::vector<ResultRow> rows;
  rows.reserve(G * (F + 2));
  for (std::size_t gi = 0; gi < G; ++gi) {
    for (std::size_t fi = 0; fi < F; ++fi) rows.push_back(cells[gi * F + fi]);
    rows.push_back(baseline_row(spec, "WMMSE", spec.grid[gi], base[gi].wmmse));
    rows.push_back(baseline_row(spec, "Upper Bound", spec.grid[gi], base[gi].upper));
  }
  return rows;
}

std::vector<ResultRow> run_transfer(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.test_K.empty()) throw std::invalid_argument("transfer: empty test_K");
  if (spec.train_K < 1) throw std::invalid_argument("transfer: bad train_K");

  SystemConfig train_sys = spec.sys;
  train_sys.K = spec.train_K;
  GibConfig gib = GibConfig::defaults_for(spec.layers);
  gib.beta = spec.beta;

  const std::size_t F = spec.families.size(), T = spec.test_K.size();

  // one set of trained replicas per family, at K = train_K
  std::vector<std::vector<Model>> trained(F);
  run_pool(F, [&](std::size_t fi) {
    Family fam = family_from(spec.families[fi]);
    for (int t = 0; t < spec.trials; ++t) {
      Rng init(mix(spec.seed, 404, fi * 64 + t));
      Model m = build_model(model_config(spec, fam, train_sys.N), train_sys, gib, init);
      TrainConfig tc;
      tc.steps = spec.train_steps;
      tc.batch_size = spec.batch_size;
      tc.seed = mix(spec.seed, 505, fi * 64 + t);
      tc.sigma_i_sq = spec.sigma_i_sq;
      tc.basis = spec.basis();
      tc.lr = spec.lr;
      tc.lr_final_frac = spec.lr_final_frac;
      train(m, gib, tc);
      trained[fi].push_back(std::move(m));
    }
  });

  std::vector<ResultRow> rows((F + 2) * T);
  run_pool(T, [&](std::size_t ti) {
    SystemConfig sys = spec.sys;
    sys.K = spec.test_K[ti];
    double v = static_cast<double>(spec.test_K[ti]);
    std::uint64_t eval_seed = mix(spec.seed, 606, ti);

    for (std::size_t fi = 0; fi < F; ++fi) {
      Family fam = family_from(spec.families[fi]);
      ResultRow row;
      row.family = spec.families[fi];
      row.structure = structure_label(spec, fam);
      row.axis = "K";
      row.value = v;
      std::vector<double> ses;
      for (const Model& src : trained[fi]) {
        // same weights, larger system: shapes are K-independent
        Rng dummy(0);
        Model m = build_model(model_config(spec, fam, sys.N), sys, gib, dummy);
        if (m.params.size() != src.params.size())
          throw std::logic_error("transfer: structure is not size-transferable");
        m.params = src.params;
        ses.push_back(evaluate_model(m, gib, spec.sigma_i_sq, spec.eval_draws,
                                     eval_seed, spec.basis()));
        row.param_count = static_cast<std::int64_t>(m.params.size());
      }
      double mean = 0.0;
      for (double s : ses) mean += s;
      mean /= static_cast<double>(ses.size());
      double var = 0.0;
      for (double s : ses) var += (s - mean) * (s - mean);
      row.mean_se = mean;
      row.std_se =
          ses.size() > 1 ? std::sqrt(var / (static_cast<double>(ses.size()) - 1.0)) : 0.0;
      rows[ti * (F + 2) + fi] = row;
    }
    BaselinePair bp = baseline_point(spec, sys, spec.sigma_i_sq, eval_seed);
    ExperimentSpec labeled = spec;  // baseline rows carry the K axis here
    labeled.axis = "K";
    rows[ti * (F + 2) + F] = baseline_row(labeled, "WMMSE", v, bp.wmmse);
    rows[ti * (F + 2) + F + 1] = baseline_row(labeled, "Upper Bound", v, bp.upper);
  });
  return rows;
}

static const char* kCsvSchema = "# schema=mdgnn-results-v1";
static const char* kCsvHeader =
    "family,structure,axis,value,mean_se,std_se,a_term,e_term,param_count,"
    "train_wall_ms";

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << kCsvSchema << '\n' << kCsvHeader << '\n';
  f.precision(12);
  for (const ResultRow& r : rows)
    f << r.family << ',' << r.structure << ',' << r.axis << ',' << r.value << ','
      << r.mean_se << ',' << r.std_se << ',' << r.a_term << ',' << r.e_term << ','
      << r.param_count << ',' << r.train_wall_ms << '\n';
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != kCsvSchema) throw std::runtime_error("unrecognized results schema");
  std::getline(f, line);  // header
  std::vector<ResultRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    ResultRow r;
    std::getline(ss, r.family, ',');
    std::getline(ss, r.structure, ',');
    std::getline(ss, r.axis, ',');
    auto num = [&] {
      std::getline(ss, tok, ',');
      return std::stod(tok);
    };
    r.value = num();
    r.mean_se = num();
    r.std_se = num();
    r.a_term = num();
    r.e_term = num();
    r.param_count = static_cast<std::int64_t>(num());
    r.train_wall_ms = num();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string compare_table(const std::vector<ResultRow>& rows) {
  // columns = sweep values in first-seen order; rows = families likewise
  std::vector<double> values;
  std::vector<std::string> families;
  std::map<double, double> wmmse_at;
  for (const ResultRow& r : rows) {
    if (std::find(values.begin(), values.end(), r.value) == values.end())
      values.push_back(r.value);
    if (std::find(families.begin(), families.end(), r.family) == families.end())
      families.push_back(r.family);
    if (r.family == "WMMSE") wmmse_at[r.value] = r.mean_se;
  }
  for (double v : values)
    if (!wmmse_at.count(v))
      throw std::invalid_argument("compare_table: no WMMSE row at some sweep value");

  auto cell = [&](const std::string& fam, double v) -> std::string {
    for (const ResultRow& r : rows)
      if (r.family == fam && r.value == v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f (%s)", r.mean_se,
                      format_percent(r.mean_se, wmmse_at[v]).c_str());
        return buf;
      }
    return "-";
  };

  std::size_t w0 = 12;
  for (const std::string& f : families) w0 = std::max(w0, f.size() + 2);
  std::ostringstream out;
  out << std::left;
  out.width(static_cast<std::streamsize>(w0));
  out << (rows.empty() ? "family" : rows.front().axis + " \\ family");
  for (double v : values) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%-22.6g", v);
    out << buf;
  }
  out << '\n';
  for (const std::string& fam : families) {
    out << std::left;
    out.width(static_cast<std::streamsize>(w0));
    out << fam;
    for (double v : values) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%-22s", cell(fam, v).c_str());
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

void write_plot_script(const std::string& path, const std::string& csv_path,
                       const std::vector<ResultRow>& rows) {
  std::vector<std::string> families;
  std::string axis = rows.empty() ? "value" : rows.front().axis;
  for (const ResultRow& r : rows)
    if (std::find(families.begin(), families.end(), r.family) == families.end())
      families.push_back(r.family);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "# gnuplot script generated alongside " << csv_path << "\n"
    << "set datafile separator ','\n"
    << "set key outside\n"
    << "set xlabel '" << axis << "'\n"
    << "set ylabel 'mean sum SE (bps/Hz)'\n"
    << "set grid\n";
  if (axis == "sigma_i_sq" || axis == "beta") f << "set logscale x\n";
  f << "plot ";
  for (std::size_t i = 0; i < families.size(); ++i) {
    if (i) f << ", \\\n     ";
    f << "'" << csv_path << "' using 4:(strcol(1) eq '" << families[i]
      << "' ? $5 : 1/0) with linespoints title '" << families[i] << "'";
  }
  f << '\n';
}

}  // namespace mdgnn
