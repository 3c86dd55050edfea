#include "mdgnn/perm_weights.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace mdgnn {

using nlohmann::json;

void PermStructure::validate() const {
  if (dims.empty()) throw std::invalid_argument("PermStructure: no dims");
  if (roles.size() != dims.size())
    throw std::invalid_argument("PermStructure: roles/dims size mismatch");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("PermStructure: dims must be >= 1");
  if (channels_in < 1 || channels_out < 1)
    throw std::invalid_argument("PermStructure: channels must be >= 1");
}

std::int64_t PermStructure::index_space() const {
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

std::vector<int> PermStructure::agg_positions() const {
  std::vector<int> p;
  for (int j = 0; j < num_dims(); ++j)
    if (roles[static_cast<std::size_t>(j)] == DimRole::agg) p.push_back(j);
  return p;
}

std::vector<int> PermStructure::fixed_positions() const {
  std::vector<int> p;
  for (int j = 0; j < num_dims(); ++j)
    if (roles[static_cast<std::size_t>(j)] == DimRole::fixed) p.push_back(j);
  return p;
}

namespace {

int num_patterns(const PermStructure& s) {
  int a = static_cast<int>(s.agg_positions().size());
  return s.topological ? a + 1 : (1 << a);
}

std::int64_t fixed_space(const PermStructure& s) {
  std::int64_t n = 1;
  for (int j : s.fixed_positions()) n *= s.dims[static_cast<std::size_t>(j)];
  return n;
}

}  // namespace

std::int64_t count_parameters(const PermStructure& s) {
  s.validate();
  return fixed_space(s) * num_patterns(s);
}

void StructuredWeight::validate() const {
  structure.validate();
  std::int64_t b = count_parameters(structure);
  if (free_params.rank() != 3 || free_params.dim(0) != b ||
      free_params.dim(1) != structure.channels_out ||
      free_params.dim(2) != structure.channels_in)
    throw std::invalid_argument("StructuredWeight: free_params must be [B, C_out, C_in]");
}

StructuredWeight init_weight(const PermStructure& s, Rng& rng) {
  s.validate();
  int sum_d = std::accumulate(s.dims.begin(), s.dims.end(), 0);
  double a = std::sqrt(6.0 / static_cast<double>(s.channels_in + s.channels_out)) /
             (1.0 + static_cast<double>(sum_d));
  StructuredWeight w;
  w.structure = s;
  w.free_params = Tensor({static_cast<int>(count_parameters(s)), s.channels_out,
                          s.channels_in});
  for (std::int64_t i = 0; i < w.free_params.size(); ++i)
    w.free_params[i] = rng.uniform(-a, a);
  return w;
}

StructuredWeight identity_weight(const PermStructure& s) {
  s.validate();
  if (s.channels_in != s.channels_out)
    throw std::invalid_argument("identity_weight: needs C_in == C_out");
  StructuredWeight w;
  w.structure = s;
  int C = s.channels_in;
  int npat = num_patterns(s);
  w.free_params = Tensor({static_cast<int>(count_parameters(s)), C, C});
  for (std::int64_t f = 0; f < fixed_space(s); ++f) {
    std::int64_t b = f * npat;  // self pattern is 0 in both modes
    for (int c = 0; c < C; ++c)
      w.free_params[(b * C + c) * C + c] = 1.0;
  }
  return w;
}

std::int64_t block_index(const PermStructure& s, const std::vector<int>& fixed_coords,
                         int pattern) {
  auto fp = s.fixed_positions();
  if (fixed_coords.size() != fp.size())
    throw std::invalid_argument("block_index: fixed coordinate count mismatch");
  std::int64_t f = 0;
  for (std::size_t i = 0; i < fp.size(); ++i)
    f = f * s.dims[static_cast<std::size_t>(fp[i])] + fixed_coords[i];
  int npat = num_patterns(s);
  if (pattern < 0 || pattern >= npat) throw std::invalid_argument("block_index: bad pattern");
  return f * npat + pattern;
}

namespace {

/// Pattern id for a (row, col) spatial index pair, or -1 if the blocks do not
/// couple (fixed/shared mismatch, or too many differing aggregated dims).
int pattern_of(const PermStructure& s, const std::vector<int>& x,
               const std::vector<int>& y) {
  auto agg = s.agg_positions();
  int pat = 0, ndiff = 0, which = -1;
  for (int j = 0; j < s.num_dims(); ++j) {
    DimRole r = s.roles[static_cast<std::size_t>(j)];
    bool differ = x[static_cast<std::size_t>(j)] != y[static_cast<std::size_t>(j)];
    if (r != DimRole::agg) {
      if (differ) return -1;
      continue;
    }
    int a = static_cast<int>(std::find(agg.begin(), agg.end(), j) - agg.begin());
    if (differ) {
      ++ndiff;
      which = a;
      pat |= 1 << (static_cast<int>(agg.size()) - 1 - a);
    }
  }
  if (s.topological) return ndiff > 1 ? -1 : (ndiff == 0 ? 0 : which + 1);
  return pat;
}

std::vector<int> unflatten(std::int64_t idx, const std::vector<int>& dims) {
  std::vector<int> x(dims.size());
  for (int j = static_cast<int>(dims.size()) - 1; j >= 0; --j) {
    x[static_cast<std::size_t>(j)] = static_cast<int>(idx % dims[static_cast<std::size_t>(j)]);
    idx /= dims[static_cast<std::size_t>(j)];
  }
  return x;
}

std::vector<int> fixed_coords_of(const PermStructure& s, const std::vector<int>& x) {
  std::vector<int> fc;
  for (int j : s.fixed_positions()) fc.push_back(x[static_cast<std::size_t>(j)]);
  return fc;
}

}  // namespace

Tensor materialize(const StructuredWeight& w, std::int64_t max_rows) {
  w.validate();
  const PermStructure& s = w.structure;
  std::int64_t D = s.index_space();
  std::int64_t rows = static_cast<std::int64_t>(s.channels_out) * D;
  std::int64_t cols = static_cast<std::int64_t>(s.channels_in) * D;
  if (rows > max_rows)
    throw std::invalid_argument("materialize: index space exceeds the row cap");

  Tensor m({static_cast<int>(rows), static_cast<int>(cols)});
  const int Ci = s.channels_in, Co = s.channels_out;
  for (std::int64_t xi = 0; xi < D; ++xi) {
    std::vector<int> x = unflatten(xi, s.dims);
    std::int64_t base = block_index(s, fixed_coords_of(s, x), 0);
    for (std::int64_t yi = 0; yi < D; ++yi) {
      int pat = pattern_of(s, x, unflatten(yi, s.dims));
      if (pat < 0) continue;
      std::int64_t b = base + pat;
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          m[(co * D + xi) * cols + ci * D + yi] =
              w.free_params[(b * Co + co) * Ci + ci];
    }
  }
  return m;
}

namespace {

/// Sum over spatial dim `pos` broadcast back to the input shape.
/// t: [C, d_0, ..., d_{J-1}], pos indexes the spatial dims.
Tensor sum_broadcast(const Tensor& t, int pos) {
  int axis = pos + 1;
  std::int64_t A = t.span(0, axis), d = t.dim(axis), B = t.span(axis + 1, t.rank());
  Tensor out(t.shape());
  for (std::int64_t a = 0; a < A; ++a)
    for (std::int64_t b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::int64_t i = 0; i < d; ++i) s += t[(a * d + i) * B + b];
      for (std::int64_t i = 0; i < d; ++i) out[(a * d + i) * B + b] = s;
    }
  return out;
}

Tensor diff_sum(const Tensor& t, int pos) {  // sum over others = S - I
  Tensor s = sum_broadcast(t, pos);
  for (std::int64_t i = 0; i < s.size(); ++i) s[i] -= t[i];
  return s;
}

}  // namespace

Tensor apply(const StructuredWeight& w, const Tensor& z) {
  w.validate();
  const PermStructure& s = w.structure;
  std::vector<int> want = {s.channels_in};
  want.insert(want.end(), s.dims.begin(), s.dims.end());
  if (z.shape() != want)
    throw std::invalid_argument("apply: input shape " + z.shape_str() +
                                " does not match structure");

  const std::int64_t D = s.index_space();
  const int Ci = s.channels_in, Co = s.channels_out;
  auto agg = s.agg_positions();
  const int A = static_cast<int>(agg.size());

  // Per-element base block index (fixed coordinates only).
  std::vector<std::int64_t> base(static_cast<std::size_t>(D));
  for (std::int64_t xi = 0; xi < D; ++xi)
    base[static_cast<std::size_t>(xi)] =
        block_index(s, fixed_coords_of(s, unflatten(xi, s.dims)), 0);

  std::vector<int> oshape = {Co};
  oshape.insert(oshape.end(), s.dims.begin(), s.dims.end());
  Tensor out(oshape);

  auto accumulate = [&](const Tensor& arg, int pattern) {
    for (std::int64_t xi = 0; xi < D; ++xi) {
      std::int64_t b = base[static_cast<std::size_t>(xi)] + pattern;
      for (int co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (int ci = 0; ci < Ci; ++ci)
          acc += w.free_params[(b * Co + co) * Ci + ci] * arg[ci * D + xi];
        out[co * D + xi] += acc;
      }
    }
  };

  if (s.topological) {
    accumulate(z, 0);
    for (int a = 0; a < A; ++a)
      accumulate(diff_sum(z, agg[static_cast<std::size_t>(a)]), a + 1);
  } else {
    for (int mask = 0; mask < (1 << A); ++mask) {
      Tensor arg = z;
      int pat = 0;
      for (int a = 0; a < A; ++a)
        if (mask & (1 << a)) {
          arg = diff_sum(arg, agg[static_cast<std::size_t>(a)]);
          pat |= 1 << (A - 1 - a);
        }
      accumulate(arg, pat);
    }
  }
  return out;
}

void PermOperator::validate(const PermStructure& s) const {
  if (dims.size() != s.dims.size())
    throw std::invalid_argument("PermOperator: dim count mismatch");
  for (int j = 0; j < s.num_dims(); ++j) {
    const DimPerm& dp = dims[static_cast<std::size_t>(j)];
    if (dp.pi.empty()) continue;
    std::size_t groups = 1;
    if (dp.within >= 0) {
      if (dp.within >= s.num_dims() ||
          s.roles[static_cast<std::size_t>(dp.within)] != DimRole::fixed)
        throw std::invalid_argument("PermOperator: `within` must name a fixed dim");
      groups = static_cast<std::size_t>(s.dims[static_cast<std::size_t>(dp.within)]);
    }
    if (dp.pi.size() != groups)
      throw std::invalid_argument("PermOperator: wrong number of subset permutations");
    int d = s.dims[static_cast<std::size_t>(j)];
    for (const auto& p : dp.pi) {
      if (static_cast<int>(p.size()) != d)
        throw std::invalid_argument("PermOperator: permutation length mismatch");
      std::vector<bool> seen(static_cast<std::size_t>(d), false);
      for (int v : p) {
        if (v < 0 || v >= d || seen[static_cast<std::size_t>(v)])
          throw std::invalid_argument("PermOperator: not a bijection");
        seen[static_cast<std::size_t>(v)] = true;
      }
    }
  }
}

PermOperator PermOperator::inverse(const PermStructure& s) const {
  validate(s);
  PermOperator inv = *this;
  for (auto& dp : inv.dims)
    for (auto& p : dp.pi) {
      std::vector<int> q(p.size());
      for (std::size_t i = 0; i < p.size(); ++i)
        q[static_cast<std::size_t>(p[i])] = static_cast<int>(i);
      p = q;
    }
  return inv;
}

Tensor permute(const PermOperator& op, const PermStructure& s, const Tensor& z) {
  op.validate(s);
  if (z.rank() != s.num_dims() + 1)
    throw std::invalid_argument("permute: rank mismatch");
  for (int j = 0; j < s.num_dims(); ++j)
    if (z.dim(j + 1) != s.dims[static_cast<std::size_t>(j)])
      throw std::invalid_argument("permute: size mismatch");

  const std::int64_t D = s.index_space();
  const int C = z.dim(0);
  Tensor out(z.shape());
  for (std::int64_t xi = 0; xi < D; ++xi) {
    std::vector<int> x = unflatten(xi, s.dims);
    std::vector<int> y = x;
    for (int j = 0; j < s.num_dims(); ++j) {
      const auto& dp = op.dims[static_cast<std::size_t>(j)];
      if (dp.pi.empty()) continue;
      std::size_t g = dp.within >= 0
                          ? static_cast<std::size_t>(x[static_cast<std::size_t>(dp.within)])
                          : 0;
      y[static_cast<std::size_t>(j)] =
          dp.pi[g][static_cast<std::size_t>(x[static_cast<std::size_t>(j)])];
    }
    std::int64_t yi = 0;
    for (int j = 0; j < s.num_dims(); ++j)
      yi = yi * s.dims[static_cast<std::size_t>(j)] + y[static_cast<std::size_t>(j)];
    for (int c = 0; c < C; ++c) out[c * D + yi] = z[c * D + xi];
  }
  return out;
}

PermOperator random_admissible_perm(const PermStructure& s, Rng& rng) {
  s.validate();
  auto fp = s.fixed_positions();
  PermOperator op;
  op.dims.resize(static_cast<std::size_t>(s.num_dims()));
  auto rand_perm = [&](int d) {
    std::vector<int> p(static_cast<std::size_t>(d));
    std::iota(p.begin(), p.end(), 0);
    for (int i = d - 1; i > 0; --i)
      std::swap(p[static_cast<std::size_t>(i)],
                p[static_cast<std::size_t>(static_cast<int>(rng.uniform() * (i + 1)))]);
    return p;
  };
  for (int j = 0; j < s.num_dims(); ++j) {
    auto& dp = op.dims[static_cast<std::size_t>(j)];
    if (s.roles[static_cast<std::size_t>(j)] == DimRole::fixed) continue;  // identity
    if (!fp.empty()) {
      dp.within = fp.front();
      int g = s.dims[static_cast<std::size_t>(fp.front())];
      for (int i = 0; i < g; ++i)
        dp.pi.push_back(rand_perm(s.dims[static_cast<std::size_t>(j)]));
    } else {
      dp.pi.push_back(rand_perm(s.dims[static_cast<std::size_t>(j)]));
    }
  }
  return op;
}

GraphSpec build_graph(const std::string& structure_name, const std::string& task,
                      int M, int K, int N) {
  if (M < 1 || K < 1 || N < 1) throw std::invalid_argument("build_graph: bad sizes");
  bool power = task == "power";
  if (!power && task != "precoding")
    throw std::invalid_argument("build_graph: unknown task " + task);

  // Dim roles per structure row name; L = AP set, K = UE set, U = antenna set.
  struct Row {
    const char* name;
    DimRole m, k, n;
  };
  static const Row rows[] = {
      {"1D-GNN-L", DimRole::agg, DimRole::shared, DimRole::shared},
      {"1D-GNN-K", DimRole::shared, DimRole::agg, DimRole::shared},
      {"1D-GNN-U", DimRole::shared, DimRole::shared, DimRole::agg},
      {"2D-GNN-L-K", DimRole::agg, DimRole::agg, DimRole::shared},
      {"2D-GNN-L-U", DimRole::agg, DimRole::shared, DimRole::agg},
      {"2D-GNN-K-U", DimRole::shared, DimRole::agg, DimRole::agg},
      {"3D-GNN-L-K-U", DimRole::agg, DimRole::agg, DimRole::agg},
      {"nested-1D-GNN", DimRole::fixed, DimRole::shared, DimRole::shared},
      {"nested-2D-GNN-K", DimRole::fixed, DimRole::agg, DimRole::shared},
      {"nested-2D-GNN-U", DimRole::fixed, DimRole::shared, DimRole::agg},
      {"nested-3D-GNN-K-U", DimRole::fixed, DimRole::agg, DimRole::agg},
  };
  const Row* row = nullptr;
  for (const Row& r : rows)
    if (structure_name == r.name) row = &r;
  if (!row) throw std::invalid_argument("build_graph: unknown structure " + structure_name);

  GraphSpec g;
  if (power) {
    if (row->n == DimRole::agg)
      throw std::invalid_argument(
          "build_graph: the power task folds the antenna axis into channels; "
          "antenna-permuting structures do not apply");
    g.case_id = 2;
    g.structure.dims = {M, K};
    g.structure.roles = {row->m, row->k};
    g.dim_names = {"M", "K"};
    g.folded_channels = N;
  } else {
    g.case_id = 1;
    g.structure.dims = {M, K, N};
    g.structure.roles = {row->m, row->k, row->n};
    g.dim_names = {"M", "K", "N"};
    g.folded_channels = 1;
  }
  g.structure.topological = true;
  g.agg_dims = g.structure.agg_positions();
  return g;
}

namespace {

std::string role_name(DimRole r) {
  switch (r) {
    case DimRole::agg: return "agg";
    case DimRole::fixed: return "fixed";
    default: return "shared";
  }
}

DimRole role_from(const std::string& s) {
  if (s == "agg") return DimRole::agg;
  if (s == "fixed") return DimRole::fixed;
  if (s == "shared") return DimRole::shared;
  throw std::invalid_argument("unknown dim role " + s);
}

}  // namespace

void save_weight(const StructuredWeight& w, const std::string& path) {
  w.validate();
  json hdr;
  hdr["version"] = 1;
  hdr["dims"] = w.structure.dims;
  std::vector<std::string> roles;
  for (DimRole r : w.structure.roles) roles.push_back(role_name(r));
  hdr["roles"] = roles;
  hdr["channels_in"] = w.structure.channels_in;
  hdr["channels_out"] = w.structure.channels_out;
  hdr["topological"] = w.structure.topological;
  hdr["num_values"] = w.free_params.size();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_weight: cannot open " + path);
  f << hdr.dump() << '\n';
  f.write(reinterpret_cast<const char*>(w.free_params.data()),
          static_cast<std::streamsize>(w.free_params.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_weight: write failed for " + path);
}

StructuredWeight load_weight(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_weight: cannot open " + path);
  std::string line;
  std::getline(f, line);
  json hdr = json::parse(line);

  StructuredWeight w;
  w.structure.dims = hdr.at("dims").get<std::vector<int>>();
  for (const auto& r : hdr.at("roles"))
    w.structure.roles.push_back(role_from(r.get<std::string>()));
  w.structure.channels_in = hdr.at("channels_in").get<int>();
  w.structure.channels_out = hdr.at("channels_out").get<int>();
  w.structure.topological = hdr.at("topological").get<bool>();

  std::int64_t n = hdr.at("num_values").get<std::int64_t>();
  w.free_params = Tensor({static_cast<int>(count_parameters(w.structure)),
                          w.structure.channels_out, w.structure.channels_in});
  if (w.free_params.size() != n)
    throw std::runtime_error("load_weight: payload size inconsistent with header");
  f.read(reinterpret_cast<char*>(w.free_params.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error("load_weight: truncated payload in " + path);
  w.validate();
  return w;
}

}  // namespace mdgnn
