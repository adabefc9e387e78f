#include "pnc/oracle.hpp"

#include "pnc/inference.hpp"

namespace pnc {

size_t JointTable::index_of(const std::vector<int>& assignment) const {
  size_t idx = 0;
  for (int v = 0; v < num_vars; ++v)
    idx = idx * num_categories + static_cast<size_t>(assignment[v]);
  return idx;
}

std::vector<int> JointTable::assignment_of(size_t index) const {
  std::vector<int> a(num_vars);
  for (int v = num_vars - 1; v >= 0; --v) {
    a[v] = static_cast<int>(index % num_categories);
    index /= num_categories;
  }
  return a;
}

JointTable enumerate_joint(const Model& model, int class_index) {
  const int V = model.spec().variable_count();
  const int K = model.spec().num_categories;
  double states = 1.0;
  for (int v = 0; v < V; ++v) states *= K;
  require(states <= static_cast<double>(1 << 20), ErrorKind::validation,
          "enumerate_joint: state space too large");
  JointTable table;
  table.num_vars = V;
  table.num_categories = K;
  table.log_mass.resize(static_cast<size_t>(states));
  std::vector<int> a(V, 0);
  for (size_t idx = 0; idx < table.log_mass.size(); ++idx) {
    table.log_mass[idx] = log_density(model, a, class_index);
    for (int v = V - 1; v >= 0; --v) {  // mixed-radix increment
      if (++a[v] < K) break;
      a[v] = 0;
    }
  }
  return table;
}

double oracle_marginal(const JointTable& table, const std::vector<int>& values,
                       const std::vector<char>& marginalized) {
  require(static_cast<int>(marginalized.size()) == table.num_vars,
          ErrorKind::internal, "oracle_marginal: bad mask");
  std::vector<int> free_vars;
  for (int v = 0; v < table.num_vars; ++v)
    if (marginalized[v]) free_vars.push_back(v);
  std::vector<int> a = values;
  a.resize(table.num_vars, 0);
  size_t completions = 1;
  for (size_t i = 0; i < free_vars.size(); ++i)
    completions *= static_cast<size_t>(table.num_categories);
  std::vector<double> terms;
  terms.reserve(completions);
  for (size_t n = 0; n < completions; ++n) {
    size_t rest = n;
    for (int v : free_vars) {
      a[v] = static_cast<int>(rest % table.num_categories);
      rest /= table.num_categories;
    }
    terms.push_back(table.log_mass[table.index_of(a)]);
  }
  return numerics::log_sum_exp(terms);
}

}  // namespace pnc
