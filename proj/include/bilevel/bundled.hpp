#pragma once

#include "bilevel/problem.hpp"

#include <functional>
#include <string>
#include <vector>

namespace bilevel {

// Problems shipped under data/ are also embedded into the library so the CLI
// and tests can run without knowing where the source tree lives.
std::vector<std::string> bundled_problem_ids();
const std::string& bundled_problem_text(const std::string& id);
BilevelProblem load_bundled(const std::string& id);

// Closed-form reference data for a bundled problem: the exact value function,
// the penalty-growth witness sequence and the k-threshold beyond which that
// sequence certifies a violation, plus the objective value at the candidate
// the sequence converges to.  Used to cross-check numerics and to seed
// searches; everything here is re-verified numerically wherever it is used.
struct AnalyticProblemData {
  std::string id;
  std::function<double(const Eigen::VectorXd&)> value_fn;
  std::function<double(double)> calmness_threshold;
  std::function<Eigen::VectorXd(int)> witness_x;
  std::function<Eigen::VectorXd(int)> witness_y;
  std::function<double(double, int)> penalized_value;
  double reference_value = 0.0;
};

// Returns nullptr when no closed-form data is recorded for the id.
const AnalyticProblemData* analytic_data(const std::string& id);

}  // namespace bilevel
