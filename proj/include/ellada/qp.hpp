#ifndef ELLADA_QP_HPP
#define ELLADA_QP_HPP

#include "ellada/problem.hpp"

#include <random>

namespace ellada {

/// One agent's quadratic data: f = 1/2 x^T Q x + c^T x, psi = E x - e,
/// optional box bounds lo <= x <= hi as phi rows.
struct QpAgentData {
  Matrix Q;
  Vector c;
  Matrix E;  // 0 x n when unconstrained
  Vector e;
  Vector lo, hi;   // empty when unbounded
  Vector anchor;   // a known psi-feasible (interior) point, when equalities exist
  bool bounded() const { return lo.size() > 0; }
};

/// A distributed QP instance together with the raw data needed by the
/// monolithic oracle.
struct QpProblem {
  std::vector<QpAgentData> data;
  DistributedProblem problem;
  Vector x0;  // strictly interior start point
};

struct QpOptions {
  int agents = 3;
  int dim_min = 2, dim_max = 5;
  double edge_prob = 0.5;
  int overlap_min = 1, overlap_max = 2;
  int equalities_max = 1;  // per agent
  bool bounded = false;    // add box constraints (barrier path)
  unsigned seed = 1;
};

QpProblem make_random_qp(const QpOptions& opts);

/// Direct monolithic KKT solve of the consistency-constrained QP (no bounds):
/// min sum_i f_i(x_i) s.t. E_i x_i = e_i and D_je x_j = D_ie x_i per edge.
/// The reference oracle for the distributed solvers.
Vector solve_qp_monolithic(const QpProblem& qp);

/// Loads a distributed QP from the structured JSON description (see README
/// for the schema). Throws std::runtime_error with a line-anchored message
/// on malformed input.
QpProblem load_qp_file(const std::string& path);

}  // namespace ellada

#endif
