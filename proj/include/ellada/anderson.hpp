#ifndef ELLADA_ANDERSON_HPP
#define ELLADA_ANDERSON_HPP

#include "ellada/coordinator.hpp"
#include "ellada/problem.hpp"

namespace ellada {

/// Hyperparameters of the regularized, restarted, safeguarded Type-I
/// acceleration on w = (xbar, z).
struct AndersonParams {
  int memory_max = 10;        // M
  double eta_theta = 0.5;     // regularization threshold
  double eta_w = 0.05;        // restart orthogonality threshold
  double eta_L = 0.01;        // safeguard Lagrangian-increase scale
  double eta_wtilde = 0.01;   // safeguard step-size scale
  double sigma = 1.0;         // safeguard decay exponent
  bool enabled = true;
  /// Lagrangian-increase formula as printed subtracts ||Ax + B xbar + z~||^2;
  /// switching this on uses z in that term instead.
  bool corrected_increase_form = false;

  void validate() const;  // throws std::invalid_argument
};

/// Multi-secant memory and inverse-Jacobian estimate for one outer round.
struct AndersonState {
  Matrix H_inv;
  std::vector<Vector> basis;  // orthogonalized secant directions
  int m = 0;                  // secants incorporated into H_inv since last restart
  int accepted = 0;           // R+
  int restarts = 0;
  double L_tilde_0 = 0.0;
  bool scale_recorded = false;
  double accepted_increase_sum = 0.0;  // running sum of accepted positive increases

  void reset(int dim);
  int dim() const { return static_cast<int>(H_inv.rows()); }
};

/// L~0 = beta ||B xbar1 - B xbar0||^2 + (beta/2) ||z1 - z0||^2, the expected
/// decrease of the first plain iteration, used as the safeguard scale.
double record_scale(AndersonState& state, const StackedCoupling& coupling, const Vector& xbar0,
                    const Vector& z0, const Vector& xbar1, const Vector& z1, double beta);

/// phi(theta; eta) = (eta sign(theta) - theta)/(1 - theta) if |theta| <= eta, else 0.
/// sign(0) is taken as +1.
double regularize_theta(double raw, double eta);

/// Incorporate one secant pair (delta_w, delta_h). Gram-Schmidt against the
/// stored basis; restarts (m <- 0, H <- I, keep delta_w as first basis vector,
/// no rank-one update) when memory would exceed M or orthogonalization
/// degrades; otherwise theta-perturbs delta_h and applies the
/// Sherman-Morrison rank-one update.
void push_secant(AndersonState& state, const Vector& delta_w, const Vector& delta_h,
                 const AndersonParams& params);

/// w~ = w - H_inv (w - h0(w))
Vector propose(const AndersonState& state, const Vector& w_current, const Vector& h0_of_w);

struct SafeguardDecision {
  bool accepted = false;
  double increase = 0.0;     // L~(w, w~; Ax)
  double budget = 0.0;       // L~0 eta_L (R+ + 1)^{-(1+sigma)}
  double step_sq = 0.0;      // ||w~ - w||^2
  double step_budget = 0.0;  // (L~0/beta) eta_w~ / sqrt(1+R+)
};

/// Accept the candidate iff the Lagrangian increase and the step size stay
/// within the decaying budgets; on accept R+ is incremented (the caller
/// resets y to -lambda - beta z~).
SafeguardDecision safeguard(AndersonState& state, const StackedCoupling& coupling,
                            const Vector& w, const Vector& w_candidate, const Vector& Ax,
                            const OuterState& outer, const AndersonParams& params);

/// log of the Lemma-6 conditioning bound (the bound itself overflows double
/// at realistic N); compare against log ||H_inv||.
double lemma6_log_bound(const AndersonParams& params, int dim);

/// true iff log ||H_inv||_F <= lemma6_log_bound (Frobenius dominates the 2-norm)
bool within_lemma6_bound(const AndersonState& state, const AndersonParams& params);

}  // namespace ellada

#endif
