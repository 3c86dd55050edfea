#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdgnn/rng.hpp"
#include "mdgnn/tensor.hpp"

namespace mdgnn {

/// Role of one index dimension of the hidden representation.
///  - agg:    freely permutable set; the update aggregates over "others".
///  - fixed:  independent-subset axis; every index owns distinct blocks and
///            indices are NOT interchangeable (block-diagonal coupling).
///  - shared: inert axis; the same block acts identically on every index
///            (no aggregation, no distinct blocks).
enum class DimRole { agg, fixed, shared };

/// Describes one structured layer's weight sharing over the index space
/// d_1 x ... x d_J with C_in -> C_out channel maps per shared block.
struct PermStructure {
  std::vector<int> dims;
  std::vector<DimRole> roles;
  int channels_in = 1;
  int channels_out = 1;
  /// Keep only blocks whose row/col multi-indices differ in at most one
  /// aggregated dimension (the single-dimension-of-variation rule).
  bool topological = true;

  void validate() const;
  int num_dims() const { return static_cast<int>(dims.size()); }
  std::int64_t index_space() const;
  std::vector<int> agg_positions() const;
  std::vector<int> fixed_positions() const;

  PermStructure with_channels(int cin, int cout) const {
    PermStructure s = *this;
    s.channels_in = cin;
    s.channels_out = cout;
    return s;
  }
};

/// Number of distinct shared blocks (excluding the C_in*C_out factor):
/// prod(fixed dims) * 2^(#agg) dense, prod(fixed dims) * (#agg + 1)
/// topological.
std::int64_t count_parameters(const PermStructure& s);

/// One structured layer's free parameters: blocks[b] is a C_out x C_in map,
/// stored as a [B, C_out, C_in] tensor with B = count_parameters(structure).
/// Block order: row-major over fixed-dim coordinates, then the pattern index
/// (topological: 0 = self, 1 + a = aggregated dim a differs; dense: bitmask
/// over aggregated dims, most-significant bit first).
struct StructuredWeight {
  PermStructure structure;
  Tensor free_params;

  void validate() const;
};

/// Blocks i.i.d. uniform [-a, a], a = sqrt(6 / (C_in + C_out)) / (1 + sum_j
/// d_j), tempering the aggregation sums.
StructuredWeight init_weight(const PermStructure& s, Rng& rng);

/// Self block = identity (requires C_in == C_out), every other block zero.
StructuredWeight identity_weight(const PermStructure& s);

/// Block index for given fixed-dim coordinates and pattern id (testing aid).
std::int64_t block_index(const PermStructure& s, const std::vector<int>& fixed_coords,
                         int pattern);

/// Dense matrix over the full (channel x index) space, laid out so that
/// column ci * prod(d) + flat(x) multiplies the row-major vectorization of a
/// [C_in, d_1, ..., d_J] tensor. Testing only; capped at `max_rows` rows.
Tensor materialize(const StructuredWeight& w, std::int64_t max_rows = 10000);

/// Structured product without materialization: z [C_in, d...] ->
/// [C_out, d...], via per-dimension aggregation sums.
Tensor apply(const StructuredWeight& w, const Tensor& z);

/// Per-dimension index permutations. pi[j] is empty (identity), holds one
/// permutation of size d_j applied globally, or holds one permutation per
/// coordinate of the `within` fixed dimension (independent-subset case).
struct PermOperator {
  struct DimPerm {
    std::vector<std::vector<int>> pi;  // empty => identity
    int within = -1;                   // fixed-dim position, or -1 for global
  };
  std::vector<DimPerm> dims;

  void validate(const PermStructure& s) const;
  PermOperator inverse(const PermStructure& s) const;
};

/// Applies op to z [C, d_1, ..., d_J]: out[c, pi(x)] = z[c, x].
Tensor permute(const PermOperator& op, const PermStructure& s, const Tensor& z);

/// Random operator under which the structure is equivariant: identity on
/// fixed dims, independent per-subset permutations on dims nested under a
/// fixed dim, global permutations otherwise.
PermOperator random_admissible_perm(const PermStructure& s, Rng& rng);

/// Which spatial sets a Case-1/Case-2 model permutes over.
struct GraphSpec {
  PermStructure structure;          // channels_in/out left at 1
  std::vector<int> agg_dims;        // neighbor type t <-> agg_dims[t] differs
  std::vector<std::string> dim_names;
  int case_id = 1;                  // 1: precoding (M,K,N); 2: power (M,K)
  int folded_channels = 1;          // input channels per real component
};

/// Maps a structure row name (1D-GNN-L, 1D-GNN-K, 1D-GNN-U, 2D-GNN-L-K,
/// 2D-GNN-L-U, 2D-GNN-K-U, 3D-GNN-L-K-U, and the nested rows
/// nested-1D-GNN, nested-2D-GNN-K, nested-2D-GNN-U, nested-3D-GNN-K-U)
/// to its permutation structure. task: "precoding" (edges over M,K,N) or
/// "power" (edges over M,K; the antenna axis folds into 2N input channels).
GraphSpec build_graph(const std::string& structure_name, const std::string& task,
                      int M, int K, int N);

/// JSON header line + raw little-endian doubles payload.
void save_weight(const StructuredWeight& w, const std::string& path);
StructuredWeight load_weight(const std::string& path);

}  // namespace mdgnn
