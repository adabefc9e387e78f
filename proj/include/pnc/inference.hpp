#pragma once

#include <span>
#include <vector>

#include "pnc/model.hpp"

namespace pnc {

// Full-evidence log-density.
double log_density(const Model& model, std::span<const int> assignment,
                   int class_index = 0);

// Log-marginal of the evidence with `marginalized` integrated out. The
// marginalized set must be a suffix of the induced variable order; entries of
// `values` at marginalized positions are ignored.
double log_marginal(const Model& model, std::span<const int> values,
                    const std::vector<int>& marginalized, int class_index = 0);

// log p(x_query | x_evidence) with `marginalized` integrated out, where
// evidence = all variables outside query_set and marginalized.
double log_conditional(const Model& model, std::span<const int> values,
                       const std::vector<int>& query_set,
                       const std::vector<int>& marginalized,
                       int class_index = 0);

// Softmax over per-class log-densities (uniform class prior).
std::vector<double> class_posterior(const Model& model,
                                    std::span<const int> assignment);

double bits_per_dimension(double mean_nll_nats, int num_dims);

}  // namespace pnc
