#include "pnc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pnc {

using numerics::kLogFloor;
using numerics::kNegInf;

int ParameterStore::add(std::string name, std::vector<int> shape) {
  size_t sz = 1;
  for (int d : shape) sz *= static_cast<size_t>(d);
  TensorInfo info{std::move(name), std::move(shape), values_.size(), sz};
  values_.resize(values_.size() + sz, 0.0);
  int idx = static_cast<int>(infos_.size());
  by_name_[info.name] = idx;
  infos_.push_back(std::move(info));
  return idx;
}

int ParameterStore::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

std::span<double> ParameterStore::view(int idx) {
  const auto& t = infos_.at(idx);
  return std::span<double>(values_).subspan(t.offset, t.size);
}

std::span<const double> ParameterStore::view(int idx) const {
  const auto& t = infos_.at(idx);
  return std::span<const double>(values_).subspan(t.offset, t.size);
}

namespace {

CircuitStructure build_from_spec(const ModelSpec& spec) {
  if (spec.two_d)
    return build_2d_structure(spec.height, spec.width, spec.num_components,
                              spec.num_leaf_components, spec.kind);
  return build_1d_structure(spec.num_vars, spec.num_components,
                            spec.num_leaf_components, spec.nu, spec.kind);
}

std::string class_prefix(const ModelSpec& spec, int cls) {
  if (spec.num_classes == 1) return "";
  return "class" + std::to_string(cls) + ".";
}

}  // namespace

Model::Model(const ModelSpec& spec)
    : spec_(spec), structure_(build_from_spec(spec)) {
  require(spec_.num_classes >= 1, ErrorKind::config, "num_classes must be >= 1");
  require(spec_.num_categories >= 2, ErrorKind::config,
          "need at least two categories");
  require(spec_.weight_net_depth == 1 || spec_.weight_net_depth == 2,
          ErrorKind::config, "weight_net_depth must be 1 or 2");
  if (spec_.leaf_mode == LeafMode::two_input_continuous)
    require(spec_.num_leaf_components == 2, ErrorKind::config,
            "two-input leaves require exactly two leaf components");
  register_params();
}

void Model::register_params() {
  const int V = spec_.variable_count();
  const int NC = spec_.num_components, ND = spec_.num_leaf_components;
  const int L = structure_.num_layers();
  layer_.resize(L);

  for (int cls = 0; cls < spec_.num_classes; ++cls) {
    std::string pre = class_prefix(spec_, cls);
    if (spec_.leaf_mode == LeafMode::categorical)
      leaf_cat_.push_back(
          params_.add(pre + "leaf.cat", {V, ND, spec_.num_categories}));
    leaf_mix_.push_back(params_.add(pre + "leaf.mix", {V, NC, ND}));
  }

  for (int l = 1; l < L - 1; ++l) {
    auto& h = layer_[l];
    const auto& lay = structure_.layers[l];
    const int P = static_cast<int>(lay.partitions.size());
    std::string pre = "sum" + std::to_string(l) + ".";
    if (spec_.two_d) {
      h.taps = {{-1, -1}, {-1, 0}, {0, -1}};
    } else {
      for (int k = 1; k <= spec_.nu; ++k) h.taps.push_back({0, -k});
    }
    switch (spec_.kind) {
      case LayerKind::plain_sum:
      case LayerKind::quotient:
        h.plain_w = params_.add(pre + "w", {P, NC, NC});
        break;
      case LayerKind::neural: {
        const int T = static_cast<int>(h.taps.size());
        const int out = NC * NC;
        if (spec_.weight_net_depth == 1) {
          h.conv_w[0] = params_.add(pre + "k0.w", {T, out, NC});
          h.conv_b[0] = params_.add(pre + "k0.b", {out});
        } else {
          const int hidden = NC * NC;
          h.conv_w[0] = params_.add(pre + "k0.w", {T, hidden, NC});
          h.conv_b[0] = params_.add(pre + "k0.b", {hidden});
          h.conv_w[1] = params_.add(pre + "k1.w", {T, out, hidden});
          h.conv_b[1] = params_.add(pre + "k1.b", {out});
        }
        break;
      }
    }
  }

  for (int cls = 0; cls < spec_.num_classes; ++cls)
    root_w_.push_back(params_.add(class_prefix(spec_, cls) + "root.w", {NC}));
}

uint64_t Model::fingerprint() const {
  uint64_t h = structure_.fingerprint();
  auto mix = [&h](uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  mix(static_cast<uint64_t>(spec_.leaf_mode));
  mix(static_cast<uint64_t>(spec_.num_categories));
  mix(static_cast<uint64_t>(spec_.weight_net_depth));
  mix(static_cast<uint64_t>(spec_.num_classes));
  return h;
}

void Model::init_params(uint64_t seed) {
  Rng rng(seed);
  for (int idx : leaf_cat_) {
    auto t = params_.view(idx);
    for (double& x : t) x = rng.uniform(-0.01, 0.01);
  }
  for (int idx : leaf_mix_)
    std::fill(params_.view(idx).begin(), params_.view(idx).end(), 0.0);
  for (const auto& h : layer_) {
    if (h.plain_w >= 0)
      std::fill(params_.view(h.plain_w).begin(), params_.view(h.plain_w).end(),
                0.0);
    for (int d = 0; d < 2; ++d) {
      if (h.conv_w[d] < 0) continue;
      const auto& info = params_.tensors()[h.conv_w[d]];
      double fan_in =
          static_cast<double>(info.shape[0]) * info.shape[2];  // taps * in
      double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
      for (double& x : params_.view(h.conv_w[d])) x = rng.uniform(-bound, bound);
      std::fill(params_.view(h.conv_b[d]).begin(),
                params_.view(h.conv_b[d]).end(), 0.0);
    }
  }
  for (int idx : root_w_)
    std::fill(params_.view(idx).begin(), params_.view(idx).end(), 0.0);
}

void Model::randomize(uint64_t seed, double scale) {
  Rng rng(seed);
  for (double& x : params_.flat()) x = rng.uniform(-scale, scale);
}

std::span<const double> Model::class_tensor(const std::vector<int>& bank,
                                            int cls) const {
  return params_.view(bank.at(cls));
}

std::vector<double> Model::init_leaves(std::span<const int> values,
                                       std::span<const char> marginalized,
                                       int class_index) const {
  const int V = spec_.variable_count();
  const int ND = spec_.num_leaf_components, K = spec_.num_categories;
  require(static_cast<int>(marginalized.size()) == V, ErrorKind::internal,
          "init_leaves: bad marginalization mask");
  std::vector<double> leaf(static_cast<size_t>(V) * ND, 0.0);
  std::span<const double> cat;
  if (spec_.leaf_mode == LeafMode::categorical)
    cat = class_tensor(leaf_cat_, class_index);
  for (int v = 0; v < V; ++v) {
    if (marginalized[v]) continue;  // log 1 for every component
    require(v < static_cast<int>(values.size()), ErrorKind::data,
            "init_leaves: missing evidence value");
    const int x = values[v];
    require(x >= 0 && x < K, ErrorKind::data,
            "init_leaves: value out of category range for variable " +
                std::to_string(v));
    if (spec_.leaf_mode == LeafMode::categorical) {
      for (int d = 0; d < ND; ++d) {
        auto row = cat.subspan((static_cast<size_t>(v) * ND + d) * K, K);
        leaf[v * ND + d] = row[x] - numerics::log_sum_exp(row);
      }
    } else {
      const double t = static_cast<double>(x) / (K - 1);
      leaf[v * ND + 0] = std::max(t > 0.0 ? std::log(t) : kNegInf, kLogFloor);
      leaf[v * ND + 1] =
          std::max(t < 1.0 ? std::log1p(-t) : kNegInf, kLogFloor);
    }
  }
  return leaf;
}

numerics::HalfKernelView Model::kernel_view(int l, int depth) const {
  const auto& h = layer_[l];
  const auto& info = params_.tensors()[h.conv_w[depth]];
  numerics::HalfKernelView k;
  k.taps = h.taps;
  k.out_channels = info.shape[1];
  k.in_channels = info.shape[2];
  k.weights = params_.view(h.conv_w[depth]);
  k.bias = params_.view(h.conv_b[depth]);
  return k;
}

void Model::sum_layer_forward(int l, const std::vector<double>& prod,
                              std::vector<double>& out,
                              EvalTrace* trace) const {
  const auto& lay = structure_.layers[l];
  const int P = static_cast<int>(lay.partitions.size());
  const int NC = spec_.num_components;
  const auto& h = layer_[l];
  out.assign(static_cast<size_t>(P) * NC, 0.0);

  switch (spec_.kind) {
    case LayerKind::plain_sum: {
      auto w = params_.view(h.plain_w);
      std::vector<double> lw(NC);
      for (int p = 0; p < P; ++p) {
        for (int c = 0; c < NC; ++c) {
          auto logits = w.subspan((static_cast<size_t>(p) * NC + c) * NC, NC);
          numerics::log_softmax(logits, lw);
          out[p * NC + c] = numerics::weighted_log_sum(
              std::span<const double>(prod).subspan(p * NC, NC), lw);
        }
      }
      break;
    }
    case LayerKind::quotient: {
      auto w = params_.view(h.plain_w);
      std::vector<double> pre(static_cast<size_t>(P) * NC, 0.0);
      for (int p = 0; p < P; ++p)
        for (int q : lay.partitions[p].deps)
          for (int c = 0; c < NC; ++c)
            pre[p * NC + c] += std::max(prod[q * NC + c], kLogFloor);
      std::vector<double> lw(NC), num(NC), den(NC);
      for (int p = 0; p < P; ++p) {
        for (int c = 0; c < NC; ++c) {
          auto logits = w.subspan((static_cast<size_t>(p) * NC + c) * NC, NC);
          numerics::log_softmax(logits, lw);
          for (int j = 0; j < NC; ++j) {
            den[j] = lw[j] + pre[p * NC + j];
            num[j] = den[j] + prod[p * NC + j];
          }
          out[p * NC + c] =
              numerics::log_sum_exp(num) - numerics::log_sum_exp(den);
        }
      }
      if (trace) trace->quot_pre[l] = std::move(pre);
      break;
    }
    case LayerKind::neural: {
      numerics::GridShape grid{lay.rows, lay.cols};
      std::vector<double> logits;
      std::vector<double> hidden;
      if (spec_.weight_net_depth == 1) {
        logits.resize(static_cast<size_t>(P) * NC * NC);
        numerics::masked_convolve(grid, prod, kernel_view(l, 0), kLogFloor,
                                  logits);
      } else {
        auto k0 = kernel_view(l, 0);
        hidden.resize(static_cast<size_t>(P) * k0.out_channels);
        numerics::masked_convolve(grid, prod, k0, kLogFloor, hidden);
        for (double& x : hidden) x = std::tanh(x);
        logits.resize(static_cast<size_t>(P) * NC * NC);
        numerics::masked_convolve(grid, hidden, kernel_view(l, 1), kNegInf,
                                  logits);
      }
      std::vector<double> logw(logits.size());
      for (int p = 0; p < P; ++p) {
        for (int c = 0; c < NC; ++c) {
          size_t off = (static_cast<size_t>(p) * NC + c) * NC;
          std::span<double> row(logw.data() + off, NC);
          numerics::log_softmax(
              std::span<const double>(logits.data() + off, NC), row);
          out[p * NC + c] = numerics::weighted_log_sum(
              std::span<const double>(prod).subspan(p * NC, NC), row);
        }
      }
      if (trace) {
        trace->logw[l] = std::move(logw);
        if (spec_.weight_net_depth == 2) trace->hidden[l] = std::move(hidden);
      }
      break;
    }
  }
}

double Model::forward(std::span<const int> values,
                      std::span<const char> marginalized, int class_index,
                      EvalTrace* trace) const {
  require(class_index >= 0 && class_index < spec_.num_classes,
          ErrorKind::query, "forward: class index out of range");
  const int L = structure_.num_layers();
  const int NC = spec_.num_components, ND = spec_.num_leaf_components;
  const int V = spec_.variable_count();

  if (trace) {
    trace->class_index = class_index;
    trace->values.assign(values.begin(), values.end());
    trace->marginalized.assign(marginalized.begin(), marginalized.end());
    trace->sum_out.assign(L, {});
    trace->prod_out.assign(L, {});
    trace->logw.assign(L, {});
    trace->hidden.assign(L, {});
    trace->quot_pre.assign(L, {});
  }

  std::vector<double> leaf = init_leaves(values, marginalized, class_index);

  // leaf sum: N_D -> N_C with constant softmax weights
  auto mix = class_tensor(leaf_mix_, class_index);
  std::vector<double> cur(static_cast<size_t>(V) * NC);
  std::vector<double> lw(ND);
  for (int v = 0; v < V; ++v) {
    for (int c = 0; c < NC; ++c) {
      auto logits = mix.subspan((static_cast<size_t>(v) * NC + c) * ND, ND);
      numerics::log_softmax(logits, lw);
      cur[v * NC + c] = numerics::weighted_log_sum(
          std::span<const double>(leaf).subspan(v * ND, ND), lw);
    }
  }
  if (trace) {
    trace->leaf_vals = leaf;
    trace->sum_out[0] = cur;
  }

  for (int l = 1; l < L; ++l) {
    const auto& lay = structure_.layers[l];
    const int P = static_cast<int>(lay.partitions.size());
    std::vector<double> prod(static_cast<size_t>(P) * NC);
    for (int p = 0; p < P; ++p) {
      const auto& part = lay.partitions[p];
      for (int c = 0; c < NC; ++c) {
        double v = cur[part.children[0] * NC + c];
        if (part.children[1] >= 0) v += cur[part.children[1] * NC + c];
        prod[p * NC + c] = v;
      }
    }
    if (trace) trace->prod_out[l] = prod;
    if (l == L - 1) {
      cur = std::move(prod);
      break;
    }
    std::vector<double> next;
    sum_layer_forward(l, prod, next, trace);
    if (trace) trace->sum_out[l] = next;
    cur = std::move(next);
  }

  // root sum: N_C -> 1
  auto root_logits = class_tensor(root_w_, class_index);
  std::vector<double> rlw(NC);
  numerics::log_softmax(root_logits, rlw);
  double root = numerics::weighted_log_sum(
      std::span<const double>(cur).subspan(0, NC), rlw);
  if (trace) trace->root = root;
  return root;
}

void Model::sum_layer_backward(int l, const EvalTrace& trace,
                               const std::vector<double>& grad_out,
                               std::vector<double>& grad_prod,
                               std::span<double> grads) const {
  const auto& lay = structure_.layers[l];
  const int P = static_cast<int>(lay.partitions.size());
  const int NC = spec_.num_components;
  const auto& h = layer_[l];
  const auto& prod = trace.prod_out[l];
  const auto& out = trace.sum_out[l];
  grad_prod.assign(static_cast<size_t>(P) * NC, 0.0);

  switch (spec_.kind) {
    case LayerKind::plain_sum: {
      auto w = params_.view(h.plain_w);
      auto gw = grads.subspan(params_.tensors()[h.plain_w].offset,
                              params_.tensors()[h.plain_w].size);
      std::vector<double> lw(NC), glw(NC);
      for (int p = 0; p < P; ++p) {
        for (int c = 0; c < NC; ++c) {
          size_t off = (static_cast<size_t>(p) * NC + c) * NC;
          numerics::log_softmax(w.subspan(off, NC), lw);
          const double g = grad_out[p * NC + c], o = out[p * NC + c];
          std::fill(glw.begin(), glw.end(), 0.0);
          for (int j = 0; j < NC; ++j) {
            double t = std::exp(lw[j] + prod[p * NC + j] - o);
            glw[j] = g * t;
            grad_prod[p * NC + j] += g * t;
          }
          numerics::log_softmax_backward(lw, glw, gw.subspan(off, NC));
        }
      }
      break;
    }
    case LayerKind::quotient: {
      auto w = params_.view(h.plain_w);
      auto gw = grads.subspan(params_.tensors()[h.plain_w].offset,
                              params_.tensors()[h.plain_w].size);
      const auto& pre = trace.quot_pre[l];
      std::vector<double> grad_pre(static_cast<size_t>(P) * NC, 0.0);
      std::vector<double> lw(NC), num(NC), den(NC), glw(NC);
      for (int p = 0; p < P; ++p) {
        for (int c = 0; c < NC; ++c) {
          size_t off = (static_cast<size_t>(p) * NC + c) * NC;
          numerics::log_softmax(w.subspan(off, NC), lw);
          for (int j = 0; j < NC; ++j) {
            den[j] = lw[j] + pre[p * NC + j];
            num[j] = den[j] + prod[p * NC + j];
          }
          const double A = numerics::log_sum_exp(num);
          const double B = numerics::log_sum_exp(den);
          const double g = grad_out[p * NC + c];
          std::fill(glw.begin(), glw.end(), 0.0);
          for (int j = 0; j < NC; ++j) {
            const double a = std::exp(num[j] - A), b = std::exp(den[j] - B);
            glw[j] = g * (a - b);
            grad_pre[p * NC + j] += g * (a - b);
            grad_prod[p * NC + j] += g * a;
          }
          numerics::log_softmax_backward(lw, glw, gw.subspan(off, NC));
        }
      }
      for (int p = 0; p < P; ++p)
        for (int q : lay.partitions[p].deps)
          for (int c = 0; c < NC; ++c)
            if (prod[q * NC + c] > kLogFloor)
              grad_prod[q * NC + c] += grad_pre[p * NC + c];
      break;
    }
    case LayerKind::neural: {
      const auto& logw = trace.logw[l];
      std::vector<double> grad_logits(logw.size(), 0.0);
      std::vector<double> glw(NC);
      for (int p = 0; p < P; ++p) {
        for (int c = 0; c < NC; ++c) {
          size_t off = (static_cast<size_t>(p) * NC + c) * NC;
          std::span<const double> row(logw.data() + off, NC);
          const double g = grad_out[p * NC + c], o = out[p * NC + c];
          std::fill(glw.begin(), glw.end(), 0.0);
          for (int j = 0; j < NC; ++j) {
            double t = std::exp(row[j] + prod[p * NC + j] - o);
            glw[j] = g * t;
            grad_prod[p * NC + j] += g * t;
          }
          numerics::log_softmax_backward(
              row, glw, std::span<double>(grad_logits.data() + off, NC));
        }
      }
      numerics::GridShape grid{lay.rows, lay.cols};
      auto grad_of = [&](int idx) {
        const auto& info = params_.tensors()[idx];
        return grads.subspan(info.offset, info.size);
      };
      if (spec_.weight_net_depth == 1) {
        numerics::masked_convolve_backward(
            grid, prod, kernel_view(l, 0), kLogFloor, grad_logits, grad_prod,
            grad_of(h.conv_w[0]), grad_of(h.conv_b[0]));
      } else {
        const auto& hid = trace.hidden[l];
        std::vector<double> grad_hidden(hid.size(), 0.0);
        numerics::masked_convolve_backward(
            grid, hid, kernel_view(l, 1), kNegInf, grad_logits, grad_hidden,
            grad_of(h.conv_w[1]), grad_of(h.conv_b[1]));
        // back through tanh to the pre-activation
        for (size_t i = 0; i < hid.size(); ++i)
          grad_hidden[i] *= 1.0 - hid[i] * hid[i];
        numerics::masked_convolve_backward(
            grid, prod, kernel_view(l, 0), kLogFloor, grad_hidden, grad_prod,
            grad_of(h.conv_w[0]), grad_of(h.conv_b[0]));
      }
      break;
    }
  }
}

void Model::backward(const EvalTrace& trace, double grad_root,
                     std::span<double> grads) const {
  require(grads.size() == params_.size(), ErrorKind::internal,
          "backward: gradient buffer size mismatch");
  require(!trace.sum_out.empty(), ErrorKind::internal,
          "backward: missing forward trace");
  const int L = structure_.num_layers();
  const int NC = spec_.num_components, ND = spec_.num_leaf_components;
  const int V = spec_.variable_count();
  const int cls = trace.class_index;

  auto grad_of = [&](int idx) {
    const auto& info = params_.tensors()[idx];
    return grads.subspan(info.offset, info.size);
  };

  // root sum
  const std::vector<double>& root_in =
      L > 1 ? trace.prod_out[L - 1] : trace.sum_out[0];
  auto root_logits = class_tensor(root_w_, cls);
  std::vector<double> rlw(NC), grlw(NC, 0.0);
  numerics::log_softmax(root_logits, rlw);
  std::vector<double> grad_cur(NC, 0.0);
  for (int j = 0; j < NC; ++j) {
    double t = std::exp(rlw[j] + root_in[j] - trace.root);
    grlw[j] = grad_root * t;
    grad_cur[j] += grad_root * t;
  }
  numerics::log_softmax_backward(rlw, grlw, grad_of(root_w_.at(cls)));

  // walk layers top-down: product backward, then the sum backward below it
  for (int l = L - 1; l >= 1; --l) {
    const auto& lay = structure_.layers[l];
    const int P = static_cast<int>(lay.partitions.size());
    std::vector<double> grad_prod;
    if (l == L - 1) {
      grad_prod = std::move(grad_cur);
    } else {
      sum_layer_backward(l, trace, grad_cur, grad_prod, grads);
    }
    const int Pprev = static_cast<int>(structure_.layers[l - 1].partitions.size());
    grad_cur.assign(static_cast<size_t>(Pprev) * NC, 0.0);
    for (int p = 0; p < P; ++p) {
      const auto& part = lay.partitions[p];
      for (int c = 0; c < NC; ++c) {
        grad_cur[part.children[0] * NC + c] += grad_prod[p * NC + c];
        if (part.children[1] >= 0)
          grad_cur[part.children[1] * NC + c] += grad_prod[p * NC + c];
      }
    }
  }

  // leaf sum
  auto mix = class_tensor(leaf_mix_, cls);
  auto gmix = grad_of(leaf_mix_.at(cls));
  const auto& leaf = trace.leaf_vals;
  std::vector<double> grad_leaf(leaf.size(), 0.0);
  std::vector<double> lw(ND), glw(ND);
  for (int v = 0; v < V; ++v) {
    for (int c = 0; c < NC; ++c) {
      size_t off = (static_cast<size_t>(v) * NC + c) * ND;
      numerics::log_softmax(mix.subspan(off, ND), lw);
      const double g = grad_cur[v * NC + c], o = trace.sum_out[0][v * NC + c];
      std::fill(glw.begin(), glw.end(), 0.0);
      for (int d = 0; d < ND; ++d) {
        double t = std::exp(lw[d] + leaf[v * ND + d] - o);
        glw[d] = g * t;
        grad_leaf[v * ND + d] += g * t;
      }
      numerics::log_softmax_backward(lw, glw, gmix.subspan(off, ND));
    }
  }

  // leaf distributions (categorical mode only; two-input leaves carry no
  // parameters and marginalized variables contribute nothing)
  if (spec_.leaf_mode == LeafMode::categorical) {
    const int K = spec_.num_categories;
    auto cat = class_tensor(leaf_cat_, cls);
    auto gcat = grad_of(leaf_cat_.at(cls));
    std::vector<double> sm(K);
    for (int v = 0; v < V; ++v) {
      if (trace.marginalized[v]) continue;
      const int x = trace.values[v];
      for (int d = 0; d < ND; ++d) {
        const double g = grad_leaf[v * ND + d];
        if (g == 0.0) continue;
        size_t off = (static_cast<size_t>(v) * ND + d) * K;
        auto row = cat.subspan(off, K);
        double z = numerics::log_sum_exp(row);
        for (int k = 0; k < K; ++k) sm[k] = std::exp(row[k] - z);
        auto grow = gcat.subspan(off, K);
        for (int k = 0; k < K; ++k) grow[k] -= g * sm[k];
        grow[x] += g;
      }
    }
  }
}

}  // namespace pnc
