#ifndef ELLADA_COORDINATOR_HPP
#define ELLADA_COORDINATOR_HPP

#include "ellada/problem.hpp"

#include <array>

namespace ellada {

/// One full primal-dual iterate. z, y and the row blocks of A share one
/// partition; after every y-update, lambda + beta z + y = 0 to machine
/// precision.
struct IterateState {
  Vector x;      // stacked agent variables
  Vector x_bar;  // overlap variables
  Vector z;      // slacks, one block per bipartite edge
  Vector y;      // inner duals, same shape as z
  double aug_lagrangian = 0.0;
};

/// Outer-layer state: duals lambda in [lambda_lo, lambda_hi], slack penalty
/// beta with rho = 2 beta, barrier parameter b, and the previous ||z||.
struct OuterState {
  Vector lambda;
  double lambda_lo = -10.0;
  double lambda_hi = 10.0;
  double beta = 1.0;
  double rho = 2.0;
  double b = 1e-8;
  double gamma = 2.0;   // penalty amplification ratio
  double omega = 0.75;  // required slack shrink ratio
  int k = 0;
  double z_prev_norm = 0.0;
};

/// The three inner termination norms.
struct InnerResiduals {
  double eps1 = 0.0;  // || rho A^T (B xbar+ + z+ - B xbar - z) ||
  double eps2 = 0.0;  // || rho B^T (z+ - z) ||
  double eps3 = 0.0;  // || A x+ + B xbar+ + z+ ||
};

/// Closed-form xbar minimizer for g == 0 and B^T B = 2I: xbar = -(1/2) B^T v
/// with v = Ax + z + y/rho. Each overlap variable is the average of its two
/// incident residual contributions.
Vector g_oracle(const StackedCoupling& coupling, const Vector& v, double rho);

/// z+ = -(rho/(rho+beta)) (Ax + B xbar + y/rho) - (1/(rho+beta)) lambda
Vector z_update(const StackedCoupling& coupling, const IterateState& state,
                const OuterState& outer);

/// y+ = y + rho (Ax + B xbar + z+); afterwards lambda + beta z+ + y+ = 0
Vector y_update(const StackedCoupling& coupling, const IterateState& state,
                const OuterState& outer);

InnerResiduals inner_residuals(const StackedCoupling& coupling, const IterateState& prev,
                               const IterateState& next, const OuterState& outer);

/// lambda+ = clip(lambda + beta z); beta+ = gamma beta if ||z|| > omega ||z_prev||;
/// rho+ = 2 beta+; z_prev_norm refreshed.
OuterState outer_update(const OuterState& outer, const Vector& z_new);

/// L = f + g + y^T(Ax+Bxbar+z) + (rho/2)||Ax+Bxbar+z||^2 + lambda^T z + (beta/2)||z||^2,
/// minus b * sum ln(-phi) when with_barrier. Indicator terms are not evaluated;
/// iterates stay strictly interior for phi and eps5-feasible for psi.
double augmented_lagrangian(const DistributedProblem& problem, const IterateState& state,
                            const OuterState& outer, bool with_barrier);

/// Approximate-KKT certificate assembled from the last inner iteration's
/// residuals plus the agents' NLP residuals.
struct StationarityVerdict {
  bool pass = false;
  double d1_surrogate = 0.0;  // nlp d4 + eps1
  double d2_surrogate = 0.0;  // eps2
  double d3 = 0.0;            // || Ax + B xbar ||
  double d4 = 0.0;
  double d5 = 0.0;
  double d6 = 0.0;  // barrier parameter
};

StationarityVerdict check_stationarity(const StackedCoupling& coupling, const IterateState& state,
                                       const OuterState& outer, double nlp_d4, double nlp_d5,
                                       const InnerResiduals& last,
                                       const std::array<double, 6>& tol);

/// Variant taking the precomputed stacked Ax (the coordinator never holds x).
StationarityVerdict check_stationarity_ax(const StackedCoupling& coupling, const Vector& Ax,
                                          const Vector& xbar, const OuterState& outer,
                                          double nlp_d4, double nlp_d5, const InnerResiduals& last,
                                          const std::array<double, 6>& tol);

}  // namespace ellada

#endif
