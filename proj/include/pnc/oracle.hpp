#pragma once

#include <vector>

#include "pnc/model.hpp"

namespace pnc {

// Exhaustive joint table over all assignments, indexed in mixed-radix order
// with variable 0 as the most significant digit.
struct JointTable {
  int num_vars = 0;
  int num_categories = 0;
  std::vector<double> log_mass;

  size_t index_of(const std::vector<int>& assignment) const;
  std::vector<int> assignment_of(size_t index) const;
};

// Evaluates the model's full-evidence density at every assignment. Refuses
// state spaces larger than 2^20.
JointTable enumerate_joint(const Model& model, int class_index = 0);

// Brute-force marginal: sums the joint over all completions of the
// marginalized variables. Defined for any subset, suffix or not.
double oracle_marginal(const JointTable& table, const std::vector<int>& values,
                       const std::vector<char>& marginalized);

}  // namespace pnc
