#include "mdgnn/mdgnn_core.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mdgnn {

using ad::Tape;
using ad::Var;
using nlohmann::json;

Family family_from(const std::string& name) {
  if (name == "edge-mdgnn") return Family::edge_mdgnn;
  if (name == "eib-mdgnn") return Family::eib_mdgnn;
  if (name == "egib-bern") return Family::egib_bern;
  if (name == "vertex-gnn") return Family::vertex_gnn;
  if (name == "vib-gnn") return Family::vib_gnn;
  if (name == "vgib-bern") return Family::vgib_bern;
  throw std::invalid_argument("unknown model family " + name);
}

std::string family_name(Family f) {
  switch (f) {
    case Family::edge_mdgnn: return "edge-mdgnn";
    case Family::eib_mdgnn: return "eib-mdgnn";
    case Family::egib_bern: return "egib-bern";
    case Family::vertex_gnn: return "vertex-gnn";
    case Family::vib_gnn: return "vib-gnn";
    default: return "vgib-bern";
  }
}

bool family_is_vertex(Family f) {
  return f == Family::vertex_gnn || f == Family::vib_gnn || f == Family::vgib_bern;
}

bool family_has_stochastic_repr(Family f) {
  return f == Family::eib_mdgnn || f == Family::egib_bern || f == Family::vib_gnn ||
         f == Family::vgib_bern;
}

bool family_samples_structure(Family f) {
  return f == Family::egib_bern || f == Family::vgib_bern;
}

void ModelConfig::validate() const {
  if (L < 1) throw std::invalid_argument("ModelConfig: L >= 1");
  if (channels.size() != static_cast<std::size_t>(L) + 1)
    throw std::invalid_argument("ModelConfig: channels must have length L+1");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("ModelConfig: channels must be >= 1");
  if (activation != "leaky-relu" && activation != "softplus")
    throw std::invalid_argument("ModelConfig: unknown activation " + activation);
}

int ModelConfig::input_channels(int N) const {
  if (family_is_vertex(family)) return 3;
  return head == HeadKind::power ? 2 * N : 2;
}

const ParamSegment* Model::find(const std::string& name) const {
  for (const ParamSegment& s : segments)
    if (s.name == name) return &s;
  return nullptr;
}

Tensor Model::segment_tensor(const ParamSegment& seg) const {
  Tensor t(seg.shape);
  for (std::int64_t i = 0; i < seg.size; ++i)
    t[i] = params[static_cast<std::size_t>(seg.offset + i)];
  return t;
}

void Model::set_segment(const ParamSegment& seg, const Tensor& t) {
  if (t.size() != seg.size) throw std::invalid_argument("set_segment: size mismatch");
  for (std::int64_t i = 0; i < seg.size; ++i)
    params[static_cast<std::size_t>(seg.offset + i)] = t[i];
}

namespace {

void fill_uniform(std::vector<double>& out, std::int64_t n, double a, Rng& rng) {
  for (std::int64_t i = 0; i < n; ++i) out.push_back(rng.uniform(-a, a));
}

void check_finite(const Tensor& t, const std::string& where) {
  double mx = 0.0;
  bool bad = false;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) bad = true;
    mx = std::max(mx, std::abs(t[i]));
  }
  if (bad)
    throw std::runtime_error("non-finite activation at " + where +
                             " (max finite magnitude " + std::to_string(mx) + ")");
}

struct Builder {
  Model& m;
  Rng& rng;

  void add(const std::string& name, std::vector<int> shape, double init_scale) {
    ParamSegment seg;
    seg.name = name;
    seg.shape = std::move(shape);
    seg.offset = static_cast<std::int64_t>(m.params.size());
    seg.size = Tensor::count(seg.shape);
    fill_uniform(m.params, seg.size, init_scale, rng);
    m.segments.push_back(seg);
  }

  void add_zeros(const std::string& name, std::vector<int> shape) {
    add_full(name, std::move(shape), 0.0);
  }

  void add_full(const std::string& name, std::vector<int> shape, double value) {
    ParamSegment seg;
    seg.name = name;
    seg.shape = std::move(shape);
    seg.offset = static_cast<std::int64_t>(m.params.size());
    seg.size = Tensor::count(seg.shape);
    m.params.resize(m.params.size() + static_cast<std::size_t>(seg.size), value);
    m.segments.push_back(seg);
  }
};

bool layer_stochastic(const Model& m, const GibConfig& gib, int l) {
  return family_has_stochastic_repr(m.cfg.family) && gib.in_s_e(l);
}

bool layer_sampled(const Model& m, const GibConfig& gib, int l) {
  return family_samples_structure(m.cfg.family) && gib.in_s_a(l);
}

}  // namespace

Model build_model(const ModelConfig& cfg, const SystemConfig& sys,
                  const GibConfig& gib, Rng& rng) {
  cfg.validate();
  sys.validate();
  gib.validate(cfg.L);
  if (cfg.channels[0] != cfg.input_channels(sys.N))
    throw std::invalid_argument("build_model: channels[0] must be " +
                                std::to_string(cfg.input_channels(sys.N)));

  Model m;
  m.cfg = cfg;
  m.sys = sys;
  Builder b{m, rng};

  bool vertex = family_is_vertex(cfg.family);
  int n_types = 0;
  int sum_d = 0;
  if (!vertex) {
    m.graph = build_graph(cfg.structure, cfg.head == HeadKind::power ? "power" : "precoding",
                          sys.M, sys.K, sys.N);
    n_types = static_cast<int>(m.graph.agg_dims.size());
    for (int d : m.graph.structure.dims) sum_d += d;
  }

  for (int l = 1; l <= cfg.L; ++l) {
    int cin = cfg.channels[static_cast<std::size_t>(l - 1)];
    int cout = cfg.channels[static_cast<std::size_t>(l)];
    int width = layer_stochastic(m, gib, l) ? 2 * cout : cout;
    std::string tag = std::to_string(l);
    if (vertex) {
      double a = std::sqrt(6.0 / static_cast<double>(cin + width));
      b.add("WselfA" + tag, {width, cin}, a);
      b.add("WcrossA" + tag, {width, cin}, a);
      b.add("WselfB" + tag, {width, cin}, a);
      b.add("WcrossB" + tag, {width, cin}, a);
      if (layer_sampled(m, gib, l)) {
        double as = std::sqrt(6.0 / static_cast<double>(cin + 1));
        b.add("scoreAB" + tag, {2, cin}, as);
        b.add("scoreBA" + tag, {2, cin}, as);
      }
      if (layer_stochastic(m, gib, l)) {
        // learned variance-branch bias: start the injected noise small
        b.add_full("sbiasA" + tag, {1}, -5.0);
        b.add_full("sbiasB" + tag, {1}, -5.0);
      }
    } else {
      std::int64_t blocks = count_parameters(m.graph.structure);
      double a = std::sqrt(6.0 / static_cast<double>(cin + width)) /
                 (1.0 + static_cast<double>(sum_d));
      b.add("W" + tag, {static_cast<int>(blocks), width, cin}, a);
      if (layer_sampled(m, gib, l)) {
        double as = std::sqrt(6.0 / static_cast<double>(cin + 1));
        for (int t = 0; t < n_types; ++t)
          b.add("score" + tag + "_t" + std::to_string(t), {2, cin}, as);
      }
      if (layer_stochastic(m, gib, l)) b.add_full("sbias" + tag, {1}, -5.0);
    }
  }

  int cl = cfg.channels.back();
  if (cfg.head == HeadKind::precoding) {
    if (vertex) {
      double a = std::sqrt(6.0 / static_cast<double>(cl + sys.N));
      b.add("WoutReA", {sys.N, cl}, a);
      b.add("WoutImA", {sys.N, cl}, a);
      b.add("WoutReB", {sys.N, cl}, a);
      b.add("WoutImB", {sys.N, cl}, a);
    } else {
      b.add("Wout", {2, cl}, std::sqrt(6.0 / static_cast<double>(cl + 2)));
    }
  } else {
    double a = std::sqrt(6.0 / static_cast<double>(cl + 1));
    if (vertex) {
      b.add("WoutA", {1, cl}, a);
      b.add("WoutB", {1, cl}, a);
    } else {
      b.add("Wout", {1, cl}, a);
    }
    b.add_zeros("slack", {1});
  }

  if (family_has_stochastic_repr(cfg.family)) {
    b.add_zeros("prior_w", {gib.mixture_X});
    b.add_zeros("prior_mu", {gib.mixture_X});
    b.add_zeros("prior_logv", {gib.mixture_X});
  }
  return m;
}

Tensor encode_input(const Tensor& h_observed, const ModelConfig& cfg) {
  if (h_observed.rank() != 4 || h_observed.dim(0) != 2)
    throw std::invalid_argument("encode_input: expects [2,M,K,N]");
  const int M = h_observed.dim(1), K = h_observed.dim(2), N = h_observed.dim(3);
  const std::int64_t E = static_cast<std::int64_t>(M) * K * N;

  double scale = 1.0;
  if (cfg.normalize_input) {
    double ms = 0.0;
    for (std::int64_t i = 0; i < 2 * E; ++i) ms += h_observed[i] * h_observed[i];
    // mean squared magnitude per complex entry
    scale = 1.0 / std::max(std::sqrt(ms / static_cast<double>(E)), 1e-30);
  }

  if (cfg.head == HeadKind::precoding) {
    Tensor z = h_observed;
    for (std::int64_t i = 0; i < z.size(); ++i) z[i] *= scale;
    return z;
  }
  // Fold the antenna axis: channel (ch * N + n) over the (M, K) edge space.
  Tensor z({2 * N, M, K});
  for (int ch = 0; ch < 2; ++ch)
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n)
          z[((static_cast<std::int64_t>(ch) * N + n) * M + m) * K + k] =
              scale * h_observed[((static_cast<std::int64_t>(ch) * M + m) * K + k) * N + n];
  return z;
}

void encode_vertex_input(const Tensor& h_observed, const ModelConfig& cfg,
                         Tensor& ap_feat, Tensor& ue_feat) {
  if (h_observed.rank() != 4 || h_observed.dim(0) != 2)
    throw std::invalid_argument("encode_vertex_input: expects [2,M,K,N]");
  const int M = h_observed.dim(1), K = h_observed.dim(2), N = h_observed.dim(3);
  const std::int64_t E = static_cast<std::int64_t>(M) * K * N;
  auto at = [&](int ch, int m, int k, int n) {
    return h_observed[((static_cast<std::int64_t>(ch) * M + m) * K + k) * N + n];
  };
  double scale = 1.0;
  if (cfg.normalize_input) {
    double ms = 0.0;
    for (std::int64_t i = 0; i < 2 * E; ++i) ms += h_observed[i] * h_observed[i];
    scale = 1.0 / std::max(std::sqrt(ms / static_cast<double>(E)), 1e-30);
  }

  ap_feat = Tensor({3, M});
  ue_feat = Tensor({3, K});
  for (int m = 0; m < M; ++m) {
    double re = 0.0, im = 0.0, mag = 0.0;
    for (int k = 0; k < K; ++k)
      for (int n = 0; n < N; ++n) {
        re += at(0, m, k, n);
        im += at(1, m, k, n);
        mag += std::hypot(at(0, m, k, n), at(1, m, k, n));
      }
    double inv = 1.0 / static_cast<double>(K * N);
    ap_feat[m] = scale * re * inv;
    ap_feat[M + m] = scale * im * inv;
    ap_feat[2 * M + m] = scale * mag * inv;
  }
  for (int k = 0; k < K; ++k) {
    double re = 0.0, im = 0.0, mag = 0.0;
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) {
        re += at(0, m, k, n);
        im += at(1, m, k, n);
        mag += std::hypot(at(0, m, k, n), at(1, m, k, n));
      }
    double inv = 1.0 / static_cast<double>(M * N);
    ue_feat[k] = scale * re * inv;
    ue_feat[K + k] = scale * im * inv;
    ue_feat[2 * K + k] = scale * mag * inv;
  }
}

namespace {

struct ForwardCtx {
  Tape& tape;
  const Model& m;
  const GibConfig& gib;
  bool training;
  Rng& rng;
  std::vector<Var> leaves;  // per segment

  Var seg(const std::string& name) const {
    for (std::size_t i = 0; i < m.segments.size(); ++i)
      if (m.segments[i].name == name) return leaves[i];
    throw std::logic_error("missing parameter segment " + name);
  }

  Var act(Var v) const {
    if (m.cfg.activation == "softplus") return tape.softplus(v);
    return tape.leaky_relu(v, 0.01);
  }

  /// Relaxed (training) or hard (evaluation) Bernoulli mask from raw scores.
  /// scores: any shape; returns (phi, mask).
  std::pair<Var, Var> sample_mask(Var scaled_scores) {
    Var phi = tape.sigmoid(scaled_scores);
    if (training) {
      const Tensor& sv = tape.val(scaled_scores);
      Tensor noise(sv.shape());
      for (std::int64_t i = 0; i < noise.size(); ++i) {
        double u = std::min(std::max(rng.uniform(), 1e-12), 1.0 - 1e-12);
        noise[i] = std::log(u) - std::log1p(-u);
      }
      Var logits = tape.mul_scalar(tape.add_const(scaled_scores, noise),
                                   1.0 / gib.temperature);
      return {phi, tape.sigmoid(logits)};
    }
    const Tensor& pv = tape.val(phi);
    Tensor hard(pv.shape());
    for (std::int64_t i = 0; i < hard.size(); ++i)
      hard[i] = rng.uniform() < pv[i] ? 1.0 : 0.0;
    return {phi, tape.constant(hard)};
  }

  /// Broadcast a [1] parameter over the given shape.
  Var expand_scalar(Var b, const std::vector<int>& shape) const {
    Var v = b;
    for (int j = static_cast<int>(shape.size()) - 1; j >= 0; --j)
      v = tape.broadcast_axis(v, 0, shape[j]);
    return tape.reshape(v, shape);
  }
};

/// Structured linear map on the tape (topological sharing), given the
/// pre-computed per-pattern aggregation arguments args[0..A].
Var apply_structured_tape(ForwardCtx& c, Var W, const PermStructure& s,
                          const std::vector<Var>& args) {
  if (!s.topological)
    throw std::invalid_argument("tape apply supports topological sharing only");
  auto fixed = s.fixed_positions();
  const int npat = static_cast<int>(args.size());
  Var out;
  for (int p = 0; p < npat; ++p) {
    Var term;
    if (fixed.empty()) {
      term = c.tape.channel_map(c.tape.index_axis(W, 0, p), args[static_cast<std::size_t>(p)]);
    } else {
      // Single fixed dim in every structure row we build.
      int fpos = fixed.front();
      int d = s.dims[static_cast<std::size_t>(fpos)];
      std::vector<Var> parts;
      for (int f = 0; f < d; ++f) {
        Var Wb = c.tape.index_axis(W, 0, f * npat + p);
        Var zf = c.tape.index_axis(args[static_cast<std::size_t>(p)], fpos + 1, f);
        parts.push_back(c.tape.channel_map(Wb, zf));
      }
      term = c.tape.stack_axis(parts, fpos + 1);
    }
    out = p == 0 ? term : c.tape.add(out, term);
  }
  return out;
}

ForwardResult forward_edge(ForwardCtx& c, const Tensor& h_observed) {
  const Model& m = c.m;
  const PermStructure& st = m.graph.structure;
  ForwardResult res;

  Var z = c.tape.constant(encode_input(h_observed, m.cfg));
  for (int l = 1; l <= m.cfg.L; ++l) {
    LayerTrace tr;
    tr.stochastic = layer_stochastic(m, c.gib, l);
    tr.sampled_structure = layer_sampled(m, c.gib, l);
    int cin = m.cfg.channels[static_cast<std::size_t>(l - 1)];
    int cout = m.cfg.channels[static_cast<std::size_t>(l)];
    Var zt = c.act(z);

    std::vector<Var> args = {zt};
    for (std::size_t t = 0; t < m.graph.agg_dims.size(); ++t) {
      int pos = m.graph.agg_dims[t];
      int d = st.dims[static_cast<std::size_t>(pos)];
      if (tr.sampled_structure) {
        Var a = c.seg("score" + std::to_string(l) + "_t" + std::to_string(t));
        Var u = c.tape.channel_map(c.tape.slice_axis(a, 0, 0, 1), zt);
        Var v = c.tape.channel_map(c.tape.slice_axis(a, 0, 1, 2), zt);
        Var scores = c.tape.mul_scalar(c.tape.pair_score(u, v, pos),
                                       1.0 / std::sqrt(static_cast<double>(cin)));
        auto [phi, mask] = c.sample_mask(scores);
        tr.phi.push_back({phi, /*exclude_diag=*/true});
        args.push_back(c.tape.masked_agg(zt, mask, pos));
      } else {
        Var sum = c.tape.broadcast_axis(c.tape.sum_axis(zt, pos + 1), pos + 1, d);
        args.push_back(c.tape.sub(sum, zt));
      }
    }

    Var o = apply_structured_tape(c, c.seg("W" + std::to_string(l)),
                                  st.with_channels(cin, tr.stochastic ? 2 * cout : cout),
                                  args);
    if (tr.stochastic) {
      Var mu = c.tape.slice_axis(o, 0, 0, cout);
      Var spre = c.tape.slice_axis(o, 0, cout, 2 * cout);
      Var sigma2 = c.tape.softplus(c.tape.add(
          spre, c.expand_scalar(c.seg("sbias" + std::to_string(l)),
                                c.tape.val(spre).shape())));
      Var zs;
      if (c.training) {
        Tensor eps(c.tape.val(mu).shape());
        for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = c.rng.normal();
        zs = c.tape.add(mu, c.tape.mul(c.tape.sqrt(sigma2), c.tape.constant(eps)));
      } else {
        zs = mu;  // evaluation uses the mean path
      }
      tr.mu.push_back(mu);
      tr.sigma2.push_back(sigma2);
      tr.z.push_back(zs);
      z = zs;
    } else {
      z = o;
    }
    check_finite(c.tape.val(z), "layer " + std::to_string(l));
    res.layers.push_back(tr);
  }

  // Output head.
  if (m.cfg.head == HeadKind::precoding) {
    Var w0 = c.tape.channel_map(c.seg("Wout"), z);  // [2,M,K,N]
    Var sq = c.tape.sum_axis(c.tape.sum_axis(c.tape.sum_axis(c.tape.square(w0), 0), 1), 1);
    Var scale = c.tape.feasible_scale(sq, m.sys.p_max_watt);
    res.output = c.tape.scale_axis(w0, scale, 1);
  } else {
    const int M = m.sys.M, K = m.sys.K;
    Var logits = c.tape.reshape(c.tape.channel_map(c.seg("Wout"), z), {M, K});
    Var slack = c.tape.reshape(c.tape.broadcast_axis(c.seg("slack"), 0, M), {M});
    std::vector<Var> cols;
    for (int k = 0; k < K; ++k) cols.push_back(c.tape.index_axis(logits, 1, k));
    cols.push_back(slack);
    Var soft = c.tape.softmax_axis(c.tape.stack_axis(cols, 1), 1);
    res.output = c.tape.mul_scalar(c.tape.slice_axis(soft, 1, 0, K), m.sys.p_max_watt);
  }
  check_finite(c.tape.val(res.output), "output head");
  res.param_vars = c.leaves;
  return res;
}

ForwardResult forward_vertex(ForwardCtx& c, const Tensor& h_observed) {
  const Model& m = c.m;
  const int M = m.sys.M, K = m.sys.K, N = m.sys.N;
  ForwardResult res;

  Tensor fa, fb;
  encode_vertex_input(h_observed, m.cfg, fa, fb);
  Var zA = c.tape.constant(fa);
  Var zB = c.tape.constant(fb);

  for (int l = 1; l <= m.cfg.L; ++l) {
    LayerTrace tr;
    tr.stochastic = layer_stochastic(m, c.gib, l);
    tr.sampled_structure = layer_sampled(m, c.gib, l);
    int cin = m.cfg.channels[static_cast<std::size_t>(l - 1)];
    int cout = m.cfg.channels[static_cast<std::size_t>(l)];
    std::string tag = std::to_string(l);
    Var ztA = c.act(zA), ztB = c.act(zB);

    auto bipartite_scores = [&](const std::string& name, Var self, Var nbr, int dself,
                                int dnbr) {
      Var a = c.seg(name);
      Var u = c.tape.reshape(c.tape.channel_map(c.tape.slice_axis(a, 0, 0, 1), self),
                             {dself});
      Var v = c.tape.reshape(c.tape.channel_map(c.tape.slice_axis(a, 0, 1, 2), nbr),
                             {dnbr});
      Var s = c.tape.add(c.tape.broadcast_axis(u, 1, dnbr),
                         c.tape.broadcast_axis(v, 0, dself));
      return c.tape.mul_scalar(s, 1.0 / std::sqrt(static_cast<double>(cin)));
    };

    Var aggA, aggB;
    if (tr.sampled_structure) {
      auto [phiA, maskA] = c.sample_mask(bipartite_scores("scoreAB" + tag, ztA, ztB, M, K));
      auto [phiB, maskB] = c.sample_mask(bipartite_scores("scoreBA" + tag, ztB, ztA, K, M));
      tr.phi.push_back({phiA, false});
      tr.phi.push_back({phiB, false});
      aggA = c.tape.matmul2(ztB, c.tape.transpose2(maskA));  // [C,M]
      aggB = c.tape.matmul2(ztA, c.tape.transpose2(maskB));  // [C,K]
    } else {
      aggA = c.tape.broadcast_axis(c.tape.sum_axis(ztB, 1), 1, M);
      aggB = c.tape.broadcast_axis(c.tape.sum_axis(ztA, 1), 1, K);
    }

    Var oA = c.tape.add(c.tape.channel_map(c.seg("WselfA" + tag), ztA),
                        c.tape.channel_map(c.seg("WcrossA" + tag), aggA));
    Var oB = c.tape.add(c.tape.channel_map(c.seg("WselfB" + tag), ztB),
                        c.tape.channel_map(c.seg("WcrossB" + tag), aggB));

    if (tr.stochastic) {
      auto sample = [&](Var o, const std::string& bias) {
        Var mu = c.tape.slice_axis(o, 0, 0, cout);
        Var spre = c.tape.slice_axis(o, 0, cout, 2 * cout);
        Var sigma2 = c.tape.softplus(
            c.tape.add(spre, c.expand_scalar(c.seg(bias), c.tape.val(spre).shape())));
        Var zs;
        if (c.training) {
          Tensor eps(c.tape.val(mu).shape());
          for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = c.rng.normal();
          zs = c.tape.add(mu, c.tape.mul(c.tape.sqrt(sigma2), c.tape.constant(eps)));
        } else {
          zs = mu;
        }
        tr.mu.push_back(mu);
        tr.sigma2.push_back(sigma2);
        tr.z.push_back(zs);
        return zs;
      };
      zA = sample(oA, "sbiasA" + tag);
      zB = sample(oB, "sbiasB" + tag);
    } else {
      zA = oA;
      zB = oB;
    }
    check_finite(c.tape.val(zA), "vertex layer " + tag + " (AP)");
    check_finite(c.tape.val(zB), "vertex layer " + tag + " (UE)");
    res.layers.push_back(tr);
  }

  if (m.cfg.head == HeadKind::precoding) {
    auto plane = [&](const std::string& wa, const std::string& wb) {
      Var a = c.tape.channel_map(c.seg(wa), zA);  // [N,M]
      Var b = c.tape.channel_map(c.seg(wb), zB);  // [N,K]
      Var o = c.tape.add(c.tape.broadcast_axis(a, 2, K),
                         c.tape.broadcast_axis(b, 1, M));  // [N,M,K]
      std::vector<Var> slabs;
      for (int n = 0; n < N; ++n) slabs.push_back(c.tape.index_axis(o, 0, n));
      return c.tape.stack_axis(slabs, 2);  // [M,K,N]
    };
    Var w0 = c.tape.stack_axis({plane("WoutReA", "WoutReB"), plane("WoutImA", "WoutImB")},
                               0);  // [2,M,K,N]
    Var sq = c.tape.sum_axis(c.tape.sum_axis(c.tape.sum_axis(c.tape.square(w0), 0), 1), 1);
    Var scale = c.tape.feasible_scale(sq, m.sys.p_max_watt);
    res.output = c.tape.scale_axis(w0, scale, 1);
  } else {
    Var u = c.tape.reshape(c.tape.channel_map(c.seg("WoutA"), zA), {M});
    Var v = c.tape.reshape(c.tape.channel_map(c.seg("WoutB"), zB), {K});
    Var logits = c.tape.add(c.tape.broadcast_axis(u, 1, K), c.tape.broadcast_axis(v, 0, M));
    Var slack = c.tape.reshape(c.tape.broadcast_axis(c.seg("slack"), 0, M), {M});
    std::vector<Var> cols;
    for (int k = 0; k < K; ++k) cols.push_back(c.tape.index_axis(logits, 1, k));
    cols.push_back(slack);
    Var soft = c.tape.softmax_axis(c.tape.stack_axis(cols, 1), 1);
    res.output = c.tape.mul_scalar(c.tape.slice_axis(soft, 1, 0, K), m.sys.p_max_watt);
  }
  check_finite(c.tape.val(res.output), "output head");
  res.param_vars = c.leaves;
  return res;
}

}  // namespace

ForwardResult forward(Tape& tape, const Model& m, const Tensor& h_observed,
                      const GibConfig& gib, bool training, Rng& rng) {
  gib.validate(m.cfg.L);
  ForwardCtx c{tape, m, gib, training, rng, {}};
  for (const ParamSegment& seg : m.segments)
    c.leaves.push_back(tape.leaf(m.segment_tensor(seg)));
  return family_is_vertex(m.cfg.family) ? forward_vertex(c, h_observed)
                                        : forward_edge(c, h_observed);
}

PrecodingSolution eval_precoding(const Model& m, const Tensor& h_observed,
                                 const GibConfig& gib, Rng& rng) {
  if (m.cfg.head != HeadKind::precoding)
    throw std::invalid_argument("eval_precoding: model has a power head");
  Tape tape;
  ForwardResult r = forward(tape, m, h_observed, gib, false, rng);
  PrecodingSolution sol;
  sol.w = ComplexTensor3::from_real(tape.val(r.output));
  return sol;
}

Tensor eval_power(const Model& m, const Tensor& h_observed, const GibConfig& gib,
                  Rng& rng) {
  if (m.cfg.head != HeadKind::power)
    throw std::invalid_argument("eval_power: model has a precoding head");
  Tape tape;
  ForwardResult r = forward(tape, m, h_observed, gib, false, rng);
  return tape.val(r.output);
}

void save_model(const Model& m, const std::string& path) {
  json hdr;
  hdr["version"] = 1;
  hdr["L"] = m.cfg.L;
  hdr["channels"] = m.cfg.channels;
  hdr["activation"] = m.cfg.activation;
  hdr["family"] = family_name(m.cfg.family);
  hdr["structure"] = m.cfg.structure;
  hdr["head"] = m.cfg.head == HeadKind::power ? "power" : "precoding";
  hdr["normalize_input"] = m.cfg.normalize_input;
  hdr["sys"] = {{"M", m.sys.M},
                {"K", m.sys.K},
                {"N", m.sys.N},
                {"area_side", m.sys.area_side},
                {"noise_power_dbm", m.sys.noise_power_dbm},
                {"bandwidth_hz", m.sys.bandwidth_hz},
                {"p_max_watt", m.sys.p_max_watt},
                {"shadow_fading", m.sys.shadow_fading},
                {"normalize_gain", m.sys.normalize_gain}};
  json segs = json::array();
  for (const ParamSegment& s : m.segments)
    segs.push_back({{"name", s.name}, {"shape", s.shape}});
  hdr["segments"] = segs;
  hdr["num_params"] = m.num_params();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_model: cannot open " + path);
  f << hdr.dump() << '\n';
  f.write(reinterpret_cast<const char*>(m.params.data()),
          static_cast<std::streamsize>(m.params.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_model: write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_model: cannot open " + path);
  std::string line;
  std::getline(f, line);
  json hdr = json::parse(line);

  Model m;
  m.cfg.L = hdr.at("L").get<int>();
  m.cfg.channels = hdr.at("channels").get<std::vector<int>>();
  m.cfg.activation = hdr.at("activation").get<std::string>();
  m.cfg.family = family_from(hdr.at("family").get<std::string>());
  m.cfg.structure = hdr.at("structure").get<std::string>();
  m.cfg.head = hdr.at("head").get<std::string>() == "power" ? HeadKind::power
                                                            : HeadKind::precoding;
  m.cfg.normalize_input = hdr.at("normalize_input").get<bool>();
  const json& sys = hdr.at("sys");
  m.sys.M = sys.at("M").get<int>();
  m.sys.K = sys.at("K").get<int>();
  m.sys.N = sys.at("N").get<int>();
  m.sys.area_side = sys.at("area_side").get<double>();
  m.sys.noise_power_dbm = sys.at("noise_power_dbm").get<double>();
  m.sys.bandwidth_hz = sys.at("bandwidth_hz").get<double>();
  m.sys.p_max_watt = sys.at("p_max_watt").get<double>();
  m.sys.shadow_fading = sys.at("shadow_fading").get<bool>();
  m.sys.normalize_gain = sys.at("normalize_gain").get<bool>();

  std::int64_t offset = 0;
  for (const json& s : hdr.at("segments")) {
    ParamSegment seg;
    seg.name = s.at("name").get<std::string>();
    seg.shape = s.at("shape").get<std::vector<int>>();
    seg.offset = offset;
    seg.size = Tensor::count(seg.shape);
    offset += seg.size;
    m.segments.push_back(seg);
  }
  std::int64_t n = hdr.at("num_params").get<std::int64_t>();
  if (n != offset) throw std::runtime_error("load_model: inconsistent segment table");
  m.params.resize(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(m.params.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error("load_model: truncated payload in " + path);
  if (!family_is_vertex(m.cfg.family))
    m.graph = build_graph(m.cfg.structure,
                          m.cfg.head == HeadKind::power ? "power" : "precoding", m.sys.M,
                          m.sys.K, m.sys.N);
  return m;
}

}  // namespace mdgnn
