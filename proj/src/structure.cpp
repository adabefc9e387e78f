#include "pnc/structure.hpp"

#include <algorithm>
#include <string>

namespace pnc {

namespace {

void append_deps_1d(PartitionLayout& layer, int nu) {
  const int n = static_cast<int>(layer.partitions.size());
  for (int p = 0; p < n; ++p)
    for (int q = std::max(0, p - nu); q < p; ++q)
      layer.partitions[p].deps.push_back(q);
}

// Half-kernel neighborhood: left, top, top-left.
void append_deps_2d(PartitionLayout& layer) {
  for (int r = 0; r < layer.rows; ++r) {
    for (int c = 0; c < layer.cols; ++c) {
      auto& deps = layer.partitions[r * layer.cols + c].deps;
      if (r > 0 && c > 0) deps.push_back((r - 1) * layer.cols + (c - 1));
      if (r > 0) deps.push_back((r - 1) * layer.cols + c);
      if (c > 0) deps.push_back(r * layer.cols + (c - 1));
    }
  }
}

std::vector<int> merged_scope(const Partition& a, const Partition* b) {
  std::vector<int> scope = a.scope;
  if (b) scope.insert(scope.end(), b->scope.begin(), b->scope.end());
  std::sort(scope.begin(), scope.end());
  return scope;
}

// Pair adjacent partitions along `axis` (0 rows, 1 cols); an unpaired
// trailing partition passes through unchanged.
PartitionLayout merge_layer(const PartitionLayout& prev, int axis) {
  PartitionLayout out;
  out.layer_index = prev.layer_index + 1;
  out.merge_axis = axis;
  out.rows = axis == 0 ? (prev.rows + 1) / 2 : prev.rows;
  out.cols = axis == 1 ? (prev.cols + 1) / 2 : prev.cols;
  out.partitions.resize(static_cast<size_t>(out.rows) * out.cols);
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      int r0 = axis == 0 ? 2 * r : r;
      int c0 = axis == 1 ? 2 * c : c;
      int r1 = axis == 0 ? 2 * r + 1 : r;
      int c1 = axis == 1 ? 2 * c + 1 : c;
      int i0 = r0 * prev.cols + c0;
      int i1 = (r1 < prev.rows && c1 < prev.cols) ? r1 * prev.cols + c1 : -1;
      Partition& p = out.partitions[r * out.cols + c];
      p.children = {i0, i1};
      p.scope = merged_scope(prev.partitions[i0],
                             i1 >= 0 ? &prev.partitions[i1] : nullptr);
    }
  }
  return out;
}

void emit_order(const CircuitStructure& s, int layer, int part,
                std::vector<int>& out) {
  const Partition& p = s.layers[layer].partitions[part];
  if (layer == 0) {
    out.insert(out.end(), p.scope.begin(), p.scope.end());
    return;
  }
  emit_order(s, layer - 1, p.children[0], out);
  if (p.children[1] >= 0) emit_order(s, layer - 1, p.children[1], out);
}

}  // namespace

void validate_structure(const CircuitStructure& s) {
  require(s.num_variables >= 1, ErrorKind::validation,
          "structure: zero variables");
  require(!s.layers.empty(), ErrorKind::validation, "structure: no layers");
  require(s.nu >= 0, ErrorKind::validation, "structure: negative nu");
  for (const auto& layer : s.layers) {
    require(static_cast<int>(layer.partitions.size()) == layer.rows * layer.cols,
            ErrorKind::validation, "structure: grid shape mismatch");
    std::vector<char> seen(s.num_variables, 0);
    int covered = 0;
    for (size_t p = 0; p < layer.partitions.size(); ++p) {
      for (int v : layer.partitions[p].scope) {
        require(v >= 0 && v < s.num_variables, ErrorKind::validation,
                "structure: scope variable out of range");
        require(!seen[v], ErrorKind::validation,
                "structure: overlapping scopes in layer " +
                    std::to_string(layer.layer_index));
        seen[v] = 1;
        ++covered;
      }
      for (int q : layer.partitions[p].deps)
        require(q >= 0 && q < static_cast<int>(p), ErrorKind::validation,
                "structure: dependency edge does not point to an earlier "
                "partition (layer " +
                    std::to_string(layer.layer_index) + ", partition " +
                    std::to_string(p) + ")");
    }
    require(covered == s.num_variables, ErrorKind::validation,
            "structure: layer scopes do not cover all variables");
  }
  const auto& root = s.layers.back();
  require(root.partitions.size() == 1, ErrorKind::validation,
          "structure: final layer must have a single partition");
}

VariableOrder induced_order(const CircuitStructure& s) {
  validate_structure(s);
  std::vector<int> by_rank;
  by_rank.reserve(s.num_variables);
  emit_order(s, s.num_layers() - 1, 0, by_rank);
  require(static_cast<int>(by_rank.size()) == s.num_variables,
          ErrorKind::validation, "structure: order does not cover variables");
  VariableOrder order;
  order.by_rank = by_rank;
  order.rank.assign(s.num_variables, -1);
  for (int r = 0; r < s.num_variables; ++r) {
    require(order.rank[by_rank[r]] == -1, ErrorKind::validation,
            "structure: variable emitted twice");
    order.rank[by_rank[r]] = r;
  }
  // every dependency edge must be refined by the order
  for (const auto& layer : s.layers) {
    for (const auto& part : layer.partitions) {
      int lo = s.num_variables;
      for (int v : part.scope) lo = std::min(lo, order.rank[v]);
      for (int q : part.deps)
        for (int v : layer.partitions[q].scope)
          require(order.rank[v] < lo, ErrorKind::validation,
                  "structure: dependency edge violates the induced order");
    }
  }
  return order;
}

uint64_t CircuitStructure::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](uint64_t x) {
    h ^= x;
    h *= 0x100000001b3ull;
  };
  mix(static_cast<uint64_t>(num_variables));
  mix(static_cast<uint64_t>(num_components));
  mix(static_cast<uint64_t>(num_leaf_components));
  mix(static_cast<uint64_t>(nu));
  mix(static_cast<uint64_t>(kind));
  mix(static_cast<uint64_t>(grid_rows));
  mix(static_cast<uint64_t>(grid_cols));
  for (const auto& layer : layers) {
    mix(static_cast<uint64_t>(layer.rows));
    mix(static_cast<uint64_t>(layer.cols));
    mix(static_cast<uint64_t>(layer.merge_axis + 2));
    for (const auto& p : layer.partitions) {
      for (int v : p.scope) mix(static_cast<uint64_t>(v) + 1);
      for (int q : p.deps) mix(static_cast<uint64_t>(q) + 0x1000);
      mix(static_cast<uint64_t>(p.children[0] + 2));
      mix(static_cast<uint64_t>(p.children[1] + 2));
    }
  }
  return h;
}

CircuitStructure build_1d_structure(int num_vars, int num_components,
                                    int num_leaf_components, int nu,
                                    LayerKind kind) {
  require(num_vars >= 1, ErrorKind::validation,
          "build_1d_structure: need at least one variable");
  require(num_components >= 1 && num_leaf_components >= 1 && nu >= 0,
          ErrorKind::validation, "build_1d_structure: bad hyperparameters");
  CircuitStructure s;
  s.num_variables = num_vars;
  s.num_components = num_components;
  s.num_leaf_components = num_leaf_components;
  s.nu = nu;
  s.kind = kind;
  s.grid_rows = 1;
  s.grid_cols = num_vars;

  PartitionLayout leaf;
  leaf.layer_index = 0;
  leaf.rows = 1;
  leaf.cols = num_vars;
  leaf.partitions.resize(num_vars);
  for (int v = 0; v < num_vars; ++v) leaf.partitions[v].scope = {v};
  s.layers.push_back(std::move(leaf));

  while (static_cast<int>(s.layers.back().partitions.size()) > 1) {
    PartitionLayout next = merge_layer(s.layers.back(), 1);
    append_deps_1d(next, nu);
    s.layers.push_back(std::move(next));
  }
  s.order = induced_order(s);
  return s;
}

CircuitStructure build_2d_structure(int height, int width, int num_components,
                                    int num_leaf_components, LayerKind kind) {
  require(height >= 1 && width >= 1, ErrorKind::validation,
          "build_2d_structure: grid must be at least 1x1");
  require(num_components >= 1 && num_leaf_components >= 1,
          ErrorKind::validation, "build_2d_structure: bad hyperparameters");
  CircuitStructure s;
  s.num_variables = height * width;
  s.num_components = num_components;
  s.num_leaf_components = num_leaf_components;
  s.nu = 3;  // half-kernel neighborhood size
  s.kind = kind;
  s.grid_rows = height;
  s.grid_cols = width;

  PartitionLayout leaf;
  leaf.layer_index = 0;
  leaf.rows = height;
  leaf.cols = width;
  leaf.partitions.resize(static_cast<size_t>(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      leaf.partitions[r * width + c].scope = {r * width + c};
  s.layers.push_back(std::move(leaf));

  int axis = 1;  // columns first
  while (static_cast<int>(s.layers.back().partitions.size()) > 1) {
    const auto& prev = s.layers.back();
    int use = axis;
    if (use == 1 && prev.cols == 1) use = 0;
    if (use == 0 && prev.rows == 1) use = 1;
    PartitionLayout next = merge_layer(prev, use);
    append_deps_2d(next);
    s.layers.push_back(std::move(next));
    axis = 1 - use;
  }
  s.order = induced_order(s);
  return s;
}

std::optional<QueryViolation> validate_query(
    const CircuitStructure& s, const std::vector<int>& marginalized) {
  std::vector<char> marg(s.num_variables, 0);
  for (int v : marginalized) {
    require(v >= 0 && v < s.num_variables, ErrorKind::query,
            "validate_query: variable id out of range");
    marg[v] = 1;
  }
  int max_evidence_rank = -1, evidence_var = -1;
  int min_marg_rank = s.num_variables, marg_var = -1;
  for (int v = 0; v < s.num_variables; ++v) {
    int r = s.order.rank[v];
    if (marg[v]) {
      if (r < min_marg_rank) {
        min_marg_rank = r;
        marg_var = v;
      }
    } else if (r > max_evidence_rank) {
      max_evidence_rank = r;
      evidence_var = v;
    }
  }
  if (marg_var >= 0 && min_marg_rank < max_evidence_rank)
    return QueryViolation{evidence_var, marg_var};
  return std::nullopt;
}

}  // namespace pnc
