#pragma once

#include <string>
#include <vector>

#include "mdgnn/autodiff.hpp"
#include "mdgnn/channel_env.hpp"
#include "mdgnn/gib_config.hpp"
#include "mdgnn/perm_weights.hpp"

namespace mdgnn {

enum class Family {
  edge_mdgnn,   // deterministic structured edge network
  eib_mdgnn,    // stochastic representations only
  egib_bern,    // stochastic representations + Bernoulli structure sampling
  vertex_gnn,   // deterministic bipartite vertex baseline
  vib_gnn,      // vertex + stochastic representations
  vgib_bern,    // vertex + representations + structure sampling
};

enum class HeadKind { precoding, power };

Family family_from(const std::string& name);
std::string family_name(Family f);
bool family_is_vertex(Family f);
bool family_has_stochastic_repr(Family f);
bool family_samples_structure(Family f);

struct ModelConfig {
  int L = 2;
  std::vector<int> channels;  // length L+1; channels[0] = input width
  std::string activation = "leaky-relu";  // slope 0.01
  Family family = Family::edge_mdgnn;
  std::string structure = "2D-GNN-L-K";   // structure row name (edge families)
  HeadKind head = HeadKind::precoding;
  bool normalize_input = false;  // divide features by the draw's RMS |h|

  void validate() const;
  /// Required channels[0] for the given system sizes.
  int input_channels(int N) const;
};

/// A named slice of the flat parameter vector.
struct ParamSegment {
  std::string name;
  std::vector<int> shape;
  std::int64_t offset = 0;
  std::int64_t size = 0;
};

struct Model {
  ModelConfig cfg;
  SystemConfig sys;
  GraphSpec graph;  // edge families only
  std::vector<ParamSegment> segments;
  std::vector<double> params;

  std::int64_t num_params() const { return static_cast<std::int64_t>(params.size()); }
  const ParamSegment* find(const std::string& name) const;
  Tensor segment_tensor(const ParamSegment& seg) const;
  void set_segment(const ParamSegment& seg, const Tensor& t);
};

/// Builds the parameter layout and initializes all weights. The GibConfig
/// decides which layers carry doubled (mu, sigma^2) widths and scoring
/// vectors; it is ignored for families without the corresponding machinery.
Model build_model(const ModelConfig& cfg, const SystemConfig& sys,
                  const GibConfig& gib, Rng& rng);

/// Checkpoints: JSON header (config + segment table) + raw doubles.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

/// Initial hidden state from the observed channel [2, M, K, N]:
/// Case 1 keeps 2 channels over the (M, K, N) edge space; Case 2 folds the
/// antenna axis into 2N channels over (M, K). Vertex families compress to 3
/// per-vertex features (mean Re, mean Im, mean |h|) for APs and UEs.
Tensor encode_input(const Tensor& h_observed, const ModelConfig& cfg);
void encode_vertex_input(const Tensor& h_observed, const ModelConfig& cfg,
                         Tensor& ap_feat, Tensor& ue_feat);

/// Neighbor keep-probabilities for one sampled aggregation. Edge families
/// emit [A, d, d, B] pair grids whose diagonal (the always-kept self edge)
/// must be excluded from the bound; vertex families emit bipartite [M, K]
/// grids where every entry is a real neighbor pair.
struct PhiTrace {
  ad::Var phi;
  bool exclude_diag = false;
};

/// Per-layer stochastic trace needed by the bound terms. Vertex families
/// carry two entries per vector (AP side, UE side); edge families one.
struct LayerTrace {
  bool stochastic = false;         // layer in S_e
  bool sampled_structure = false;  // layer in S_a
  std::vector<PhiTrace> phi;
  std::vector<ad::Var> mu, sigma2, z;
};

struct ForwardResult {
  ad::Var output;                    // [2,M,K,N] precoder or [M,K] powers
  std::vector<LayerTrace> layers;    // size L
  std::vector<ad::Var> param_vars;   // leaf per segment, model.segments order
};

/// Full differentiable forward pass. `training` selects relaxed Bernoulli
/// masks (binary concrete) and reparameterized Gaussian samples; evaluation
/// uses hard Bernoulli draws and keeps the Gaussian sample path (pass a
/// forked rng for reproducibility). Throws on non-finite activations.
ForwardResult forward(ad::Tape& tape, const Model& m, const Tensor& h_observed,
                      const GibConfig& gib, bool training, Rng& rng);

/// Convenience: run forward on a fresh tape and extract plain outputs.
PrecodingSolution eval_precoding(const Model& m, const Tensor& h_observed,
                                 const GibConfig& gib, Rng& rng);
Tensor eval_power(const Model& m, const Tensor& h_observed, const GibConfig& gib,
                  Rng& rng);

}  // namespace mdgnn
