#include "ellada/coordinator.hpp"

namespace ellada {

Vector g_oracle(const StackedCoupling& coupling, const Vector& v, double rho) {
  (void)rho;  // the g == 0 closed form is rho-independent; kept for the G-hook signature
  return -0.5 * (coupling.B.transpose() * v);
}

Vector z_update(const StackedCoupling& coupling, const IterateState& state,
                const OuterState& outer) {
  const double c1 = outer.rho / (outer.rho + outer.beta);
  const double c2 = 1.0 / (outer.rho + outer.beta);
  return -c1 * (coupling.A * state.x + coupling.B * state.x_bar + state.y / outer.rho) -
         c2 * outer.lambda;
}

Vector y_update(const StackedCoupling& coupling, const IterateState& state,
                const OuterState& outer) {
  return state.y + outer.rho * (coupling.A * state.x + coupling.B * state.x_bar + state.z);
}

InnerResiduals inner_residuals(const StackedCoupling& coupling, const IterateState& prev,
                               const IterateState& next, const OuterState& outer) {
  InnerResiduals r;
  Vector dw = coupling.B * next.x_bar + next.z - coupling.B * prev.x_bar - prev.z;
  r.eps1 = (outer.rho * (coupling.A.transpose() * dw)).norm();
  r.eps2 = (outer.rho * (coupling.B.transpose() * (next.z - prev.z))).norm();
  r.eps3 = (coupling.A * next.x + coupling.B * next.x_bar + next.z).norm();
  return r;
}

OuterState outer_update(const OuterState& outer, const Vector& z_new) {
  OuterState next = outer;
  next.lambda = (outer.lambda + outer.beta * z_new)
                    .cwiseMax(outer.lambda_lo)
                    .cwiseMin(outer.lambda_hi);
  double zn = z_new.norm();
  next.beta = (zn > outer.omega * outer.z_prev_norm) ? outer.gamma * outer.beta : outer.beta;
  next.rho = 2.0 * next.beta;
  next.z_prev_norm = zn;
  next.k = outer.k + 1;
  return next;
}

double augmented_lagrangian(const DistributedProblem& problem, const IterateState& state,
                            const OuterState& outer, bool with_barrier) {
  const StackedCoupling& c = problem.coupling;
  Vector res = c.A * state.x + c.B * state.x_bar + state.z;
  double L = problem.f_total(state.x) + problem.g_total(state.x_bar);
  L += state.y.dot(res) + 0.5 * outer.rho * res.squaredNorm();
  L += outer.lambda.dot(state.z) + 0.5 * outer.beta * state.z.squaredNorm();
  if (with_barrier) L -= outer.b * problem.log_barrier_sum(state.x);
  return L;
}

StationarityVerdict check_stationarity_ax(const StackedCoupling& coupling, const Vector& Ax,
                                          const Vector& xbar, const OuterState& outer,
                                          double nlp_d4, double nlp_d5, const InnerResiduals& last,
                                          const std::array<double, 6>& tol) {
  StationarityVerdict v;
  v.d1_surrogate = nlp_d4 + last.eps1;
  v.d2_surrogate = last.eps2;
  v.d3 = (Ax + coupling.B * xbar).norm();
  v.d4 = nlp_d4;
  v.d5 = nlp_d5;
  v.d6 = outer.b;
  v.pass = v.d1_surrogate <= tol[0] && v.d2_surrogate <= tol[1] && v.d3 <= tol[2] &&
           v.d4 <= tol[3] && v.d5 <= tol[4] && v.d6 <= tol[5];
  return v;
}

StationarityVerdict check_stationarity(const StackedCoupling& coupling, const IterateState& state,
                                       const OuterState& outer, double nlp_d4, double nlp_d5,
                                       const InnerResiduals& last,
                                       const std::array<double, 6>& tol) {
  return check_stationarity_ax(coupling, coupling.A * state.x, state.x_bar, outer, nlp_d4, nlp_d5,
                               last, tol);
}

}  // namespace ellada
