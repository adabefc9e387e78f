#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pnc/numerics.hpp"
#include "pnc/structure.hpp"

namespace pnc {

enum class LeafMode { categorical, two_input_continuous };

struct ModelSpec {
  bool two_d = false;
  int num_vars = 8;  // 1-D
  int height = 0;    // 2-D
  int width = 0;
  int num_components = 2;       // N_C
  int num_leaf_components = 2;  // N_D
  int num_categories = 2;
  int nu = 1;
  LayerKind kind = LayerKind::neural;
  LeafMode leaf_mode = LeafMode::categorical;
  int weight_net_depth = 1;  // 1 or 2 masked convolutions
  int num_classes = 1;

  int variable_count() const { return two_d ? height * width : num_vars; }
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;
  size_t size = 0;
};

class ParameterStore {
public:
  int add(std::string name, std::vector<int> shape);
  int index_of(const std::string& name) const;  // -1 if absent

  std::span<double> view(int idx);
  std::span<const double> view(int idx) const;
  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  size_t size() const { return values_.size(); }

  const std::vector<TensorInfo>& tensors() const { return infos_; }

private:
  std::vector<double> values_;
  std::vector<TensorInfo> infos_;
  std::map<std::string, int> by_name_;
};

// Forward-pass cache consumed by the reverse pass.
struct EvalTrace {
  int class_index = 0;
  std::vector<int> values;
  std::vector<char> marginalized;
  std::vector<double> leaf_vals;             // [V, N_D]
  std::vector<std::vector<double>> sum_out;  // per layer, [P, N_C]
  std::vector<std::vector<double>> prod_out; // per layer (l >= 1), [P, N_C]
  std::vector<std::vector<double>> logw;     // neural layers, [P, N_C, N_C]
  std::vector<std::vector<double>> hidden;   // depth-2 post-tanh activations
  std::vector<std::vector<double>> quot_pre; // quotient layers, [P, N_C]
  double root = 0.0;
};

class Model {
public:
  explicit Model(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const CircuitStructure& structure() const { return structure_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  uint64_t fingerprint() const;

  // Near-uniform start: small leaf logits, zero sum logits, scaled kernels.
  void init_params(uint64_t seed);
  // Uniform(-scale, scale) everywhere; used for seeded random models.
  void randomize(uint64_t seed, double scale = 1.0);

  // Leaf log-values after marginalization init, shape [V, N_D].
  std::vector<double> init_leaves(std::span<const int> values,
                                  std::span<const char> marginalized,
                                  int class_index = 0) const;

  // Log-density of the evidence with the given variables marginalized out.
  // The caller is responsible for query validation.
  double forward(std::span<const int> values, std::span<const char> marginalized,
                 int class_index = 0, EvalTrace* trace = nullptr) const;

  // Accumulates d(grad_root * root) / d(params) into grads (flat layout).
  void backward(const EvalTrace& trace, double grad_root,
                std::span<double> grads) const;

private:
  struct LayerHandles {
    int plain_w = -1;            // plain / quotient weight logits
    int conv_w[2] = {-1, -1};
    int conv_b[2] = {-1, -1};
    std::vector<numerics::KernelTap> taps;
  };

  void register_params();
  numerics::HalfKernelView kernel_view(int layer, int depth) const;
  std::span<const double> class_tensor(const std::vector<int>& bank,
                                       int cls) const;

  void sum_layer_forward(int l, const std::vector<double>& prod,
                         std::vector<double>& out, EvalTrace* trace) const;
  void sum_layer_backward(int l, const EvalTrace& trace,
                          const std::vector<double>& grad_out,
                          std::vector<double>& grad_prod,
                          std::span<double> grads) const;

  ModelSpec spec_;
  CircuitStructure structure_;
  ParameterStore params_;
  std::vector<int> leaf_cat_;  // per class; empty in two-input mode
  std::vector<int> leaf_mix_;  // per class
  std::vector<int> root_w_;    // per class
  std::vector<LayerHandles> layer_;  // indexed by layer; used for 1..L-2
};

}  // namespace pnc
