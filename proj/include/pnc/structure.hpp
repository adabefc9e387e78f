#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "pnc/util.hpp"

namespace pnc {

enum class LayerKind { plain_sum, quotient, neural };

// Total order over variables induced by the intra-layer neural dependencies.
struct VariableOrder {
  std::vector<int> rank;     // variable id -> rank
  std::vector<int> by_rank;  // rank -> variable id
};

struct Partition {
  std::vector<int> scope;            // variable ids, ascending
  std::vector<int> deps;             // earlier partitions in the same layer
  std::array<int, 2> children{-1, -1};  // previous-layer indices; [1] == -1 for
                                        // a pass-through partition
};

struct PartitionLayout {
  int layer_index = 0;
  int rows = 1;
  int cols = 1;
  int merge_axis = -1;  // -1 leaf layer, 0 rows merged, 1 columns merged
  std::vector<Partition> partitions;  // raster order
};

struct CircuitStructure {
  int num_variables = 0;
  int num_components = 1;       // N_C
  int num_leaf_components = 1;  // N_D
  int nu = 0;
  LayerKind kind = LayerKind::plain_sum;
  int grid_rows = 1;  // leaf grid
  int grid_cols = 1;
  std::vector<PartitionLayout> layers;  // [0] = leaf layer, last = root layer
  VariableOrder order;

  int num_layers() const { return static_cast<int>(layers.size()); }
  uint64_t fingerprint() const;
};

CircuitStructure build_1d_structure(int num_vars, int num_components,
                                    int num_leaf_components, int nu,
                                    LayerKind kind);

CircuitStructure build_2d_structure(int height, int width, int num_components,
                                    int num_leaf_components, LayerKind kind);

// Checks layer scopes (disjoint cover), children wiring, and that every
// dependency edge points strictly earlier in raster order.
void validate_structure(const CircuitStructure& s);

// Recomputes the total order from the merge tree and verifies it refines
// every dependency edge. Throws on inconsistent hand-crafted structures.
VariableOrder induced_order(const CircuitStructure& s);

struct QueryViolation {
  int evidence_var = -1;
  int marginalized_var = -1;
};

// ok (nullopt) iff the marginalized set is a suffix of the induced order.
std::optional<QueryViolation> validate_query(
    const CircuitStructure& s, const std::vector<int>& marginalized);

}  // namespace pnc
