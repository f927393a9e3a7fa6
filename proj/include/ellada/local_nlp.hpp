#ifndef ELLADA_LOCAL_NLP_HPP
#define ELLADA_LOCAL_NLP_HPP

#include "ellada/problem.hpp"

namespace ellada {

/// chi(x) = f(x) - b * sum_c ln(-phi_c(x)) + (rho/2) ||D x + v||^2.
/// Defined only on {x : phi(x) < 0}; value/gradient throw std::domain_error
/// outside. D is the agent's block of the stacked coupling matrix, v the
/// coordinator-side offset restricted to the agent's rows.
class BarrierObjective {
 public:
  BarrierObjective() = default;
  BarrierObjective(const AgentSubproblem* agent, double b, double rho, Matrix D, Vector v);

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;
  /// Hessian including barrier and proximal curvature; empty when the agent
  /// lacks exact Hessians (solver then runs SR1).
  Matrix hessian(const Vector& x) const;
  bool has_exact_hessian() const;

  bool in_domain(const Vector& x) const;
  /// Longest step <= 1 keeping a 0.995 fraction of the distance to the
  /// phi = 0 boundary (linearized; callers re-check in_domain on trial points).
  double fraction_to_boundary(const Vector& x, const Vector& dx) const;

  /// mu_c = -b / phi_c(x), the barrier-implied inequality multipliers
  Vector barrier_multipliers(const Vector& x) const;

  const AgentSubproblem* agent() const { return agent_; }
  double barrier_coefficient() const { return b_; }
  double rho() const { return rho_; }
  const Matrix& prox_matrix() const { return D_; }
  const Vector& prox_offset() const { return v_; }

 private:
  const AgentSubproblem* agent_ = nullptr;
  double b_ = 0.0;
  double rho_ = 0.0;
  Matrix D_;       // 0 x dim when the agent has no coupling rows
  Vector v_;
};

BarrierObjective build_objective(const AgentSubproblem& agent, double b, double rho,
                                 const Matrix& D, const Vector& v);

/// Approximate stationary point of  min chi(x) s.t. psi(x) = 0.
struct NlpResult {
  Vector x;
  Vector nu;             // equality multipliers
  Vector mu;             // barrier multipliers, mu_c * phi_c(x) = -b exactly
  double d4_norm = 0.0;  // || grad chi + J_psi^T nu ||
  double d5_norm = 0.0;  // || psi ||
  double objective_initial = 0.0;
  double objective_final = 0.0;
  int iterations = 0;
  bool success = false;
  std::string message;
};

struct NlpOptions {
  int max_iterations = 200;
  double boundary_fraction = 0.995;
  double armijo = 1e-4;
  double alpha_min = 1e-12;
  double tau_init = 1e-8;    // Hessian regularization seed, grows x10
  double merit_margin = 1.1; // merit penalty kept above margin * ||nu||_inf
  // roundoff allowance on the descent clause chi(x) <= chi(x0): comparing to
  // the last ulp deadlocks when x0 is already the minimizer
  double descent_slack = 1e-12;
};

/// Assumption-6 style solver: damped Newton on the KKT system with inertia
/// repair by tau*I, a fraction-to-boundary cap, and backtracking on the
/// l1 merit function. Success guarantees d4 <= eps4, d5 <= eps5 and
/// chi(x) <= chi(x0). Stateless; one instance per agent, not re-entrant.
class EqualityNlpSolver {
 public:
  explicit EqualityNlpSolver(NlpOptions opts = {}) : opts_(opts) {}

  NlpResult solve(const Vector& x0, const BarrierObjective& obj, double eps4, double eps5,
                  const Vector* nu_warm = nullptr) const;

  const NlpOptions& options() const { return opts_; }

 private:
  NlpOptions opts_;
};

NlpResult solve_equality_nlp(const Vector& x0, const BarrierObjective& obj, double eps4,
                             double eps5, const NlpOptions& opts = {});

}  // namespace ellada

#endif
