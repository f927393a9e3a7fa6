#include "ellada/anderson.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace ellada {

void AndersonParams::validate() const {
  if (memory_max < 1) throw std::invalid_argument("anderson memory M must be >= 1");
  if (!(eta_theta >= 0.0 && eta_theta < 1.0))
    throw std::invalid_argument("eta_theta must lie in [0,1)");
  if (!(eta_w > 0.0 && eta_w < 1.0)) throw std::invalid_argument("eta_w must lie in (0,1)");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (eta_L < 0.0 || eta_wtilde < 0.0)
    throw std::invalid_argument("safeguard scales must be nonnegative");
}

void AndersonState::reset(int dim) {
  H_inv = Matrix::Identity(dim, dim);
  basis.clear();
  m = 0;
}

double record_scale(AndersonState& state, const StackedCoupling& coupling, const Vector& xbar0,
                    const Vector& z0, const Vector& xbar1, const Vector& z1, double beta) {
  double val = beta * (coupling.B * (xbar1 - xbar0)).squaredNorm() +
               0.5 * beta * (z1 - z0).squaredNorm();
  state.L_tilde_0 = val;
  state.scale_recorded = true;
  return val;
}

double regularize_theta(double raw, double eta) {
  if (std::abs(raw) > eta) return 0.0;
  double sgn = raw < 0.0 ? -1.0 : 1.0;  // sign(0) := +1
  return (eta * sgn - raw) / (1.0 - raw);
}

void push_secant(AndersonState& state, const Vector& delta_w, const Vector& delta_h,
                 const AndersonParams& params) {
  const int n = static_cast<int>(delta_w.size());
  if (state.H_inv.rows() != n) state.reset(n);

  double dw_norm = delta_w.norm();
  if (dw_norm == 0.0) return;  // no secant information at an exact fixed point

  Vector dhat = delta_w;
  for (const Vector& b : state.basis) {
    double bs = b.squaredNorm();
    if (bs > 0.0) dhat -= (b.dot(delta_w) / bs) * b;
  }

  bool memory_full = state.m + 1 > params.memory_max;
  bool degenerate = dhat.norm() < params.eta_w * dw_norm;
  if (memory_full || degenerate) {
    state.reset(n);
    state.restarts += 1;
    state.basis.push_back(delta_w);  // first basis vector of the fresh memory
    return;
  }

  double raw = dhat.dot(state.H_inv * delta_h) / dhat.squaredNorm();
  double theta = regularize_theta(raw, params.eta_theta);
  Vector dh_tilde = (1.0 - theta) * delta_h + theta * delta_w;

  Vector H_dh = state.H_inv * dh_tilde;
  double denom = dhat.dot(H_dh);
  if (std::abs(denom) < 1e-300) return;  // regularization failed to separate; keep H

  Eigen::RowVectorXd dhatT_H = dhat.transpose() * state.H_inv;
  state.H_inv += ((delta_w - H_dh) * dhatT_H) / denom;
  state.basis.push_back(dhat);
  state.m += 1;

#ifndef NDEBUG
  assert(within_lemma6_bound(state, params));
#endif
}

Vector propose(const AndersonState& state, const Vector& w_current, const Vector& h0_of_w) {
  if (state.H_inv.rows() != w_current.size()) return h0_of_w;  // H = I before any secant
  return w_current - state.H_inv * (w_current - h0_of_w);
}

SafeguardDecision safeguard(AndersonState& state, const StackedCoupling& coupling,
                            const Vector& w, const Vector& w_candidate, const Vector& Ax,
                            const OuterState& outer, const AndersonParams& params) {
  const int nb = coupling.xbar_dim();
  const int nz = coupling.row_dim();
  Vector xbar = w.head(nb), z = w.tail(nz);
  Vector xbar_t = w_candidate.head(nb), z_t = w_candidate.tail(nz);

  Vector y = -outer.lambda - outer.beta * z;
  Vector y_t = -outer.lambda - outer.beta * z_t;

  Vector Bxbar = coupling.B * xbar;
  Vector Bxbar_t = coupling.B * xbar_t;

  SafeguardDecision d;
  double increase = outer.lambda.dot(z_t - z) +
                    0.5 * outer.beta * (z_t.squaredNorm() - z.squaredNorm()) +
                    y_t.dot(Ax + Bxbar_t + z_t) - y.dot(Ax + Bxbar + z);
  const Vector& z_ref = params.corrected_increase_form ? z : z_t;
  increase += 0.5 * outer.rho *
              ((Ax + Bxbar_t + z_t).squaredNorm() - (Ax + Bxbar + z_ref).squaredNorm());
  d.increase = increase;

  double r1 = static_cast<double>(state.accepted) + 1.0;
  d.budget = state.L_tilde_0 * params.eta_L * std::pow(r1, -(1.0 + params.sigma));
  d.step_sq = (w_candidate - w).squaredNorm();
  d.step_budget = (state.L_tilde_0 / outer.beta) * params.eta_wtilde / std::sqrt(r1);

  d.accepted = (d.increase <= d.budget) && (d.step_sq <= d.step_budget);
  if (d.accepted) {
    state.accepted += 1;
    if (d.increase > 0.0) state.accepted_increase_sum += d.increase;
  }
  return d;
}

double lemma6_log_bound(const AndersonParams& params, int dim) {
  const double M = static_cast<double>(params.memory_max);
  const double N = static_cast<double>(dim);
  // inner bracket: 3 (1 + theta + eta_w)^M eta_w^{-N} - 2, handled in logs
  double a = std::log(3.0) + M * std::log1p(params.eta_theta + params.eta_w) -
             N * std::log(params.eta_w);
  double log_bracket = (a < 50.0) ? std::log(std::exp(a) - 2.0) : a;
  double theta = params.eta_theta > 0.0 ? params.eta_theta : 1.0;
  return -M * std::log(theta) + (N - 1.0) * log_bracket;
}

bool within_lemma6_bound(const AndersonState& state, const AndersonParams& params) {
  if (state.H_inv.size() == 0) return true;
  double fro = state.H_inv.norm();
  if (!std::isfinite(fro)) return false;
  return std::log(fro) <= lemma6_log_bound(params, state.dim());
}

}  // namespace ellada
