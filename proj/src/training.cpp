#include "pnc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "pnc/inference.hpp"

namespace pnc {

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorKind::config, "learning_rate must be > 0");
  require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
  require(epochs >= 0, ErrorKind::config, "epochs must be >= 0");
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::config,
          "val_fraction must be in (0, 1)");
  require(threads >= 1, ErrorKind::config, "threads must be >= 1");
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const TrainConfig& cfg) {
  require(params.size() == grads.size(), ErrorKind::internal,
          "adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  require(state.m.size() == params.size(), ErrorKind::internal,
          "adam_step: state shape mismatch");
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
  }
}

namespace {

struct SampleLoss {
  double loss = 0.0;
  bool correct = false;
};

// Loss and gradient for one sample; grads may be null for evaluation.
SampleLoss sample_pass(const Model& model, std::span<const int> values,
                       int label, Objective objective,
                       std::span<double> grads, double scale) {
  SampleLoss out;
  const std::vector<char> mask(model.spec().variable_count(), 0);
  if (objective == Objective::nll) {
    if (grads.empty()) {
      out.loss = -model.forward(values, mask, 0);
    } else {
      EvalTrace trace;
      out.loss = -model.forward(values, mask, 0, &trace);
      model.backward(trace, -scale, grads);
    }
    return out;
  }

  const int n = model.spec().num_classes;
  require(label >= 0 && label < n, ErrorKind::data,
          "cross-entropy objective requires labels in range");
  std::vector<EvalTrace> traces(grads.empty() ? 0 : n);
  std::vector<double> logp(n);
  for (int k = 0; k < n; ++k)
    logp[k] = model.forward(values, mask, k,
                            grads.empty() ? nullptr : &traces[k]);
  const double z = numerics::log_sum_exp(logp);
  out.loss = z - logp[label];
  int argmax = 0;
  for (int k = 1; k < n; ++k)
    if (logp[k] > logp[argmax]) argmax = k;
  out.correct = argmax == label;
  if (!grads.empty()) {
    for (int k = 0; k < n; ++k) {
      const double coeff = std::exp(logp[k] - z) - (k == label ? 1.0 : 0.0);
      model.backward(traces[k], coeff * scale, grads);
    }
  }
  return out;
}

std::vector<int> sample_values(const Dataset& data, int idx) {
  auto img = data.image(idx);
  return std::vector<int>(img.begin(), img.end());
}

BatchResult run_batch(const Model& model, const Dataset& data,
                      std::span<const int> indices, Objective objective,
                      std::span<double> grads, int threads) {
  require(!indices.empty(), ErrorKind::data, "empty batch");
  if (objective == Objective::cross_entropy)
    require(data.has_labels, ErrorKind::data,
            "cross-entropy objective requires labels");
  const double scale = 1.0 / static_cast<double>(indices.size());
  const int nthreads =
      std::max(1, std::min<int>(threads, static_cast<int>(indices.size())));

  if (nthreads == 1) {
    BatchResult res;
    for (int idx : indices) {
      auto vals = sample_values(data, idx);
      auto s = sample_pass(model, vals, data.has_labels ? data.labels[idx] : -1,
                           objective, grads, scale);
      res.loss += s.loss * scale;
      res.correct += s.correct ? 1 : 0;
    }
    return res;
  }

  std::vector<std::vector<double>> partial(
      nthreads, std::vector<double>(grads.empty() ? 0 : grads.size(), 0.0));
  std::vector<BatchResult> results(nthreads);
  std::vector<std::thread> workers;
  const size_t chunk = (indices.size() + nthreads - 1) / nthreads;
  for (int t = 0; t < nthreads; ++t) {
    workers.emplace_back([&, t] {
      const size_t begin = t * chunk;
      const size_t end = std::min(indices.size(), begin + chunk);
      for (size_t i = begin; i < end; ++i) {
        auto vals = sample_values(data, indices[i]);
        auto s = sample_pass(
            model, vals, data.has_labels ? data.labels[indices[i]] : -1,
            objective, grads.empty() ? std::span<double>() : partial[t], scale);
        results[t].loss += s.loss * scale;
        results[t].correct += s.correct ? 1 : 0;
      }
    });
  }
  for (auto& w : workers) w.join();
  BatchResult res;
  for (int t = 0; t < nthreads; ++t) {  // fixed reduction order
    res.loss += results[t].loss;
    res.correct += results[t].correct;
    for (size_t i = 0; i < partial[t].size(); ++i) grads[i] += partial[t][i];
  }
  return res;
}

}  // namespace

BatchResult loss_and_gradients(const Model& model, const Dataset& data,
                               std::span<const int> indices,
                               Objective objective, std::span<double> grads,
                               int threads) {
  require(grads.size() == model.params().size(), ErrorKind::internal,
          "loss_and_gradients: gradient buffer size mismatch");
  return run_batch(model, data, indices, objective, grads, threads);
}

BatchResult evaluate(const Model& model, const Dataset& data,
                     Objective objective, int threads) {
  std::vector<int> indices(data.num_samples());
  std::iota(indices.begin(), indices.end(), 0);
  return run_batch(model, data, indices, objective, {}, threads);
}

std::string format_trace_line(const EpochRecord& r) {
  char buf[160];
  if (r.acc < 0.0)
    std::snprintf(buf, sizeof buf, "epoch=%d split=%s nll=%.6f bpd=%.6f acc=na",
                  r.epoch, r.split.c_str(), r.nll, r.bpd);
  else
    std::snprintf(buf, sizeof buf,
                  "epoch=%d split=%s nll=%.6f bpd=%.6f acc=%.4f", r.epoch,
                  r.split.c_str(), r.nll, r.bpd, r.acc);
  return buf;
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  require(data.num_samples() > 0, ErrorKind::data, "empty dataset");
  require(data.dims() == model.spec().variable_count(), ErrorKind::data,
          "dataset dimensions do not match the model");
  if (cfg.objective == Objective::cross_entropy)
    require(data.has_labels, ErrorKind::data,
            "cross-entropy objective requires labels");

  TrainResult result;
  if (cfg.epochs == 0) return result;

  auto [train_set, val_set] = split(data, cfg.val_fraction, cfg.seed);
  require(train_set.num_samples() > 0 && val_set.num_samples() > 0,
          ErrorKind::data, "dataset too small for the requested split");

  const int dims = data.dims();
  std::vector<int> order(train_set.num_samples());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed ^ 0x5DEECE66Dull);
  AdamState opt;
  std::vector<double> grads(model.params().size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = train_set.num_samples() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(static_cast<uint64_t>(i) + 1)]);

    double train_loss = 0.0;
    int train_correct = 0;
    int seen = 0;
    for (int begin = 0; begin < train_set.num_samples();
         begin += cfg.batch_size) {
      const int count =
          std::min(cfg.batch_size, train_set.num_samples() - begin);
      std::fill(grads.begin(), grads.end(), 0.0);
      auto res = loss_and_gradients(
          model, train_set,
          std::span<const int>(order.data() + begin, count), cfg.objective,
          grads, cfg.threads);
      if (cfg.weight_decay > 0.0) {
        auto p = model.params().flat();
        for (size_t i = 0; i < grads.size(); ++i)
          grads[i] += cfg.weight_decay * p[i];
      }
      adam_step(model.params().flat(), grads, opt, cfg);
      train_loss += res.loss * count;
      train_correct += res.correct;
      seen += count;
    }
    train_loss /= seen;

    EpochRecord tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.nll = train_loss;
    tr.bpd = bits_per_dimension(train_loss, dims);
    if (cfg.objective == Objective::cross_entropy)
      tr.acc = static_cast<double>(train_correct) / seen;
    result.trace.push_back(tr);

    auto val = evaluate(model, val_set, cfg.objective, cfg.threads);
    EpochRecord vr;
    vr.epoch = epoch;
    vr.split = "val";
    vr.nll = val.loss;
    vr.bpd = bits_per_dimension(val.loss, dims);
    if (cfg.objective == Objective::cross_entropy)
      vr.acc = static_cast<double>(val.correct) / val_set.num_samples();
    result.trace.push_back(vr);

    if (result.best_epoch < 0 || val.loss < result.best_metric) {
      result.best_metric = val.loss;
      result.best_epoch = epoch;
      auto p = model.params().flat();
      result.best_params.assign(p.begin(), p.end());
    }
  }

  auto p = model.params().flat();
  std::copy(result.best_params.begin(), result.best_params.end(), p.begin());
  return result;
}

GradCheckReport check_gradients(Model& model, std::span<const int> values,
                                int label) {
  require(model.params().size() <= 100000, ErrorKind::validation,
          "check_gradients: model too large for exhaustive perturbation");
  const Objective objective =
      label >= 0 ? Objective::cross_entropy : Objective::nll;
  std::vector<double> analytic(model.params().size(), 0.0);
  sample_pass(model, values, label, objective, analytic, 1.0);

  auto loss_at = [&]() {
    return sample_pass(model, values, label, objective, {}, 1.0).loss;
  };

  const double step = 1e-6;
  GradCheckReport report;
  auto params = model.params().flat();
  for (const auto& info : model.params().tensors()) {
    GradCheckReport::Group group;
    group.name = info.name;
    for (size_t i = info.offset; i < info.offset + info.size; ++i) {
      const double saved = params[i];
      params[i] = saved + step;
      const double hi = loss_at();
      params[i] = saved - step;
      const double lo = loss_at();
      params[i] = saved;
      const double fd = (hi - lo) / (2.0 * step);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(fd), 1e-3});
      group.max_rel_err =
          std::max(group.max_rel_err, std::abs(analytic[i] - fd) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace pnc
