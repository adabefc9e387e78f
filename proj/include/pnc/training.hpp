#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pnc/data.hpp"
#include "pnc/model.hpp"

namespace pnc {

enum class Objective { nll, cross_entropy };

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 50;
  int epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  Objective objective = Objective::nll;
  uint64_t seed = 0;
  double val_fraction = 0.1;
  double weight_decay = 0.0;
  int threads = 1;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int64_t step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const TrainConfig& cfg);

struct BatchResult {
  double loss = 0.0;   // mean over the batch
  int correct = 0;     // cross-entropy only
};

// Mean loss over the indexed samples plus exact gradients accumulated into
// `grads` (scaled by 1/batch). Per-sample passes may run on `threads`
// workers; partial gradients are reduced in a fixed order.
BatchResult loss_and_gradients(const Model& model, const Dataset& data,
                               std::span<const int> indices,
                               Objective objective, std::span<double> grads,
                               int threads = 1);

// Evaluation only (no gradients).
BatchResult evaluate(const Model& model, const Dataset& data,
                     Objective objective, int threads = 1);

struct EpochRecord {
  int epoch = 0;
  std::string split;
  double nll = 0.0;
  double bpd = 0.0;
  double acc = -1.0;  // < 0 means not applicable
};

std::string format_trace_line(const EpochRecord& r);

struct TrainResult {
  std::vector<double> best_params;
  int best_epoch = -1;
  double best_metric = 0.0;
  std::vector<EpochRecord> trace;
};

// Deterministic epoch loop with validation-based selection. On return the
// model holds the best-validation parameters.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg);

struct GradCheckReport {
  struct Group {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<Group> groups;
  double max_rel_err = 0.0;
};

// Central finite differences (step 1e-6) against the analytic gradients of
// the per-sample loss. label < 0 checks the generative NLL.
GradCheckReport check_gradients(Model& model, std::span<const int> values,
                                int label = -1);

}  // namespace pnc
