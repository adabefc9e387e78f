#include "pnc/inference.hpp"

#include <cmath>
#include <string>

namespace pnc {

namespace {

std::vector<char> marg_mask(const Model& model,
                            const std::vector<int>& marginalized) {
  std::vector<char> mask(model.spec().variable_count(), 0);
  for (int v : marginalized) {
    require(v >= 0 && v < static_cast<int>(mask.size()), ErrorKind::query,
            "marginalized variable id out of range");
    mask[v] = 1;
  }
  return mask;
}

void check_suffix(const Model& model, const std::vector<int>& marginalized) {
  auto violation = validate_query(model.structure(), marginalized);
  if (violation)
    fail(ErrorKind::query,
         "marginalized set is not an order-suffix: variable " +
             std::to_string(violation->marginalized_var) +
             " precedes evidence variable " +
             std::to_string(violation->evidence_var) +
             " in the induced order");
}

}  // namespace

double log_density(const Model& model, std::span<const int> assignment,
                   int class_index) {
  require(static_cast<int>(assignment.size()) ==
              model.spec().variable_count(),
          ErrorKind::data, "log_density: assignment must cover all variables");
  std::vector<char> mask(model.spec().variable_count(), 0);
  return model.forward(assignment, mask, class_index);
}

double log_marginal(const Model& model, std::span<const int> values,
                    const std::vector<int>& marginalized, int class_index) {
  check_suffix(model, marginalized);
  auto mask = marg_mask(model, marginalized);
  return model.forward(values, mask, class_index);
}

double log_conditional(const Model& model, std::span<const int> values,
                       const std::vector<int>& query_set,
                       const std::vector<int>& marginalized, int class_index) {
  std::vector<int> both = marginalized;
  both.insert(both.end(), query_set.begin(), query_set.end());
  check_suffix(model, marginalized);
  check_suffix(model, both);
  if (query_set.empty()) return 0.0;
  double joint = log_marginal(model, values, marginalized, class_index);
  double evidence = log_marginal(model, values, both, class_index);
  return joint - evidence;
}

std::vector<double> class_posterior(const Model& model,
                                    std::span<const int> assignment) {
  const int n = model.spec().num_classes;
  require(n > 1, ErrorKind::query,
          "class_posterior: model is generative (single class)");
  std::vector<double> logp(n);
  for (int k = 0; k < n; ++k) logp[k] = log_density(model, assignment, k);
  double z = numerics::log_sum_exp(logp);
  std::vector<double> post(n);
  for (int k = 0; k < n; ++k) post[k] = std::exp(logp[k] - z);
  return post;
}

double bits_per_dimension(double mean_nll_nats, int num_dims) {
  require(num_dims >= 1, ErrorKind::internal,
          "bits_per_dimension: need at least one dimension");
  return mean_nll_nats / (std::log(2.0) * num_dims);
}

}  // namespace pnc
