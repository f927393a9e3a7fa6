#ifndef ELLADA_PROBLEM_HPP
#define ELLADA_PROBLEM_HPP

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ellada {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when a problem description violates a structural precondition
/// (duplicate edges, selector/dimension mismatches, ...).
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Directed interaction graph: nodes are agents 0..n-1, an edge (j,i)
/// means "j is a parent of i" (some of j's variables appear in i's model).
struct Digraph {
  int node_count = 0;
  std::vector<std::pair<int, int>> edges;

  void validate() const;  // throws StructuralError
};

/// Bipartite reformulation of a digraph: agent nodes on one side, one
/// overlap-variable node per digraph edge on the other. Every edge node
/// has exactly two incident bipartite edges (parent side, child side).
struct BipartiteStructure {
  int agent_count = 0;
  std::vector<std::pair<int, int>> edge_nodes;       // sorted by (src, dst)
  std::vector<std::pair<int, int>> bipartite_edges;  // (agent, edge index), sorted

  int edge_index(int src, int dst) const;
};

BipartiteStructure build_bipartite(const Digraph& g);

/// 0/1 selection pattern with exactly one unit entry per row; maps an
/// agent variable to the overlap variable it shares on one bipartite edge.
/// Stored dense so defective patterns stay representable for diagnostics.
struct SelectorMatrix {
  Matrix entries;

  int rows() const { return static_cast<int>(entries.rows()); }
  int cols() const { return static_cast<int>(entries.cols()); }
  Vector apply(const Vector& xi) const { return entries * xi; }
  bool valid() const;

  /// picks[r] = index of the agent variable copied into overlap row r
  static SelectorMatrix pick(int cols, const std::vector<int>& picks);
};

/// One row block of the stacked coupling constraint
/// D_ie x_i - xbar_e + z_ie = 0, identified by a bipartite edge (agent, edge).
struct CouplingBlock {
  int agent = 0;
  int edge = 0;
  int row0 = 0;
  int rows = 0;
  int agent_col0 = 0;  // column offset of agent's variables in stacked x
  int edge_col0 = 0;   // column offset of the overlap variable in stacked xbar
};

/// Stacked coupling Ax + B xbar + z = 0 in the canonical E2 ordering
/// (lexicographic by (agent id, edge id)). B^T B = 2 I by construction.
struct StackedCoupling {
  Matrix A;  // row_dim x x_dim
  Matrix B;  // row_dim x xbar_dim
  std::vector<CouplingBlock> blocks;
  std::vector<int> agent_col0, agent_dims;
  std::vector<int> edge_col0, edge_dims;

  int x_dim() const { return static_cast<int>(A.cols()); }
  int xbar_dim() const { return static_cast<int>(B.cols()); }
  int row_dim() const { return static_cast<int>(A.rows()); }
  int agent_count() const { return static_cast<int>(agent_dims.size()); }
  int edge_count() const { return static_cast<int>(edge_dims.size()); }

  // Blocks of one agent are contiguous under the canonical ordering.
  std::pair<int, int> agent_row_range(int agent) const;  // (row0, rows)
  Vector agent_x(const Vector& x, int agent) const {
    return x.segment(agent_col0[agent], agent_dims[agent]);
  }
};

StackedCoupling assemble_coupling(
    const BipartiteStructure& bip,
    const std::map<std::pair<int, int>, SelectorMatrix>& selectors,
    const std::vector<int>& agent_dims);

/// Smooth agent subproblem: min f_i(xi) s.t. phi_i(xi) <= 0, psi_i(xi) = 0.
/// Evaluators are std::functions so tank, QP and randomized test problems
/// share one representation. Hessian evaluators are optional; the NLP
/// falls back to SR1 when they are absent.
struct AgentSubproblem {
  int dim = 0;

  std::function<double(const Vector&)> f;
  std::function<Vector(const Vector&)> f_grad;
  std::function<Matrix(const Vector&)> f_hess;  // optional

  int phi_count = 0;
  std::function<Vector(const Vector&)> phi;      // optional when phi_count == 0
  std::function<Matrix(const Vector&)> phi_jac;
  std::function<Matrix(const Vector&, const Vector&)> phi_hess_dot;  // sum_c mu_c H(phi_c)

  int psi_count = 0;
  std::function<Vector(const Vector&)> psi;
  std::function<Matrix(const Vector&)> psi_jac;
  std::function<Matrix(const Vector&, const Vector&)> psi_hess_dot;  // sum_c nu_c H(psi_c)

  Vector strict_interior;   // declared point with phi < 0 elementwise
  double f_lower = 0.0;     // declared lower bound of f on the feasible set
  bool has_f_lower = false;

  bool has_exact_hessians() const {
    return static_cast<bool>(f_hess) && (phi_count == 0 || static_cast<bool>(phi_hess_dot)) &&
           (psi_count == 0 || static_cast<bool>(psi_hess_dot));
  }
};

/// Decomposed problem in the bipartite, slack-augmented, stacked form
///   min sum_i f_i(x_i) + g(xbar)  s.t. Ax + B xbar + z = 0, z = 0, x in X.
/// Shipped problems fix g == 0 and Xbar = R^n; `g_value`/`g_oracle_override`
/// are the hook for a separable convex g.
struct DistributedProblem {
  std::vector<AgentSubproblem> agents;
  Digraph digraph;
  BipartiteStructure bipartite;
  std::map<std::pair<int, int>, SelectorMatrix> selectors;
  StackedCoupling coupling;

  std::function<double(const Vector&)> g_value;  // optional, default 0
  std::function<Vector(const StackedCoupling&, const Vector&, double)> g_oracle_override;

  int agent_count() const { return static_cast<int>(agents.size()); }
  double f_total(const Vector& x_stacked) const;
  double g_total(const Vector& xbar) const { return g_value ? g_value(xbar) : 0.0; }
  /// sum_i sum_c ln(-phi_c(x_i)); throws std::domain_error outside the interior
  double log_barrier_sum(const Vector& x_stacked) const;

  void finalize();  // builds bipartite + coupling from digraph/selectors/agents
};

/// Pure structural checks of the declarations behind Assumptions 1, 2, 5.
/// Returns human-readable diagnostics; empty means no defect found.
std::vector<std::string> validate_problem(const DistributedProblem& p);

}  // namespace ellada

#endif
