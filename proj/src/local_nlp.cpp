#include "ellada/local_nlp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>
#include <limits>

namespace ellada {

BarrierObjective::BarrierObjective(const AgentSubproblem* agent, double b, double rho, Matrix D,
                                   Vector v)
    : agent_(agent), b_(b), rho_(rho), D_(std::move(D)), v_(std::move(v)) {
  if (b_ <= 0.0 && agent_->phi_count > 0) {
    throw std::invalid_argument("barrier coefficient must be positive");
  }
  if (rho_ < 0.0) throw std::invalid_argument("penalty rho must be nonnegative");
  if (D_.rows() != v_.size()) {
    throw std::invalid_argument("proximal offset does not match the agent's coupling rows");
  }
}

BarrierObjective build_objective(const AgentSubproblem& agent, double b, double rho,
                                 const Matrix& D, const Vector& v) {
  return BarrierObjective(&agent, b, rho, D, v);
}

bool BarrierObjective::in_domain(const Vector& x) const {
  if (agent_->phi_count == 0) return true;
  Vector ph = agent_->phi(x);
  return (ph.array() < 0.0).all();
}

double BarrierObjective::value(const Vector& x) const {
  double val = agent_->f(x);
  if (agent_->phi_count > 0) {
    Vector ph = agent_->phi(x);
    for (int c = 0; c < ph.size(); ++c) {
      if (ph[c] >= 0.0) {
        throw std::domain_error("barrier objective evaluated outside {phi < 0}: phi_" +
                                std::to_string(c) + " = " + std::to_string(ph[c]));
      }
      val -= b_ * std::log(-ph[c]);
    }
  }
  if (D_.rows() > 0) val += 0.5 * rho_ * (D_ * x + v_).squaredNorm();
  return val;
}

Vector BarrierObjective::gradient(const Vector& x) const {
  Vector g = agent_->f_grad(x);
  if (agent_->phi_count > 0) {
    Vector mu = barrier_multipliers(x);  // throws outside the domain
    g += agent_->phi_jac(x).transpose() * mu;
  }
  if (D_.rows() > 0) g += rho_ * (D_.transpose() * (D_ * x + v_));
  return g;
}

Matrix BarrierObjective::hessian(const Vector& x) const {
  const int n = static_cast<int>(x.size());
  Matrix H = agent_->f_hess ? agent_->f_hess(x) : Matrix();
  if (H.size() == 0) return H;  // caller falls back to SR1
  if (agent_->phi_count > 0) {
    Vector ph = agent_->phi(x);
    Vector mu = barrier_multipliers(x);
    Matrix Jphi = agent_->phi_jac(x);
    for (int c = 0; c < ph.size(); ++c) {
      H += (b_ / (ph[c] * ph[c])) * (Jphi.row(c).transpose() * Jphi.row(c));
    }
    if (agent_->phi_hess_dot) H += agent_->phi_hess_dot(x, mu);
  }
  if (D_.rows() > 0) H += rho_ * (D_.transpose() * D_);
  if (H.rows() != n) throw std::logic_error("agent Hessian has wrong dimensions");
  return H;
}

bool BarrierObjective::has_exact_hessian() const {
  return static_cast<bool>(agent_->f_hess) &&
         (agent_->phi_count == 0 || static_cast<bool>(agent_->phi_hess_dot));
}

double BarrierObjective::fraction_to_boundary(const Vector& x, const Vector& dx) const {
  if (agent_->phi_count == 0) return 1.0;
  Vector ph = agent_->phi(x);
  Vector dphi = agent_->phi_jac(x) * dx;
  double alpha = 1.0;
  for (int c = 0; c < ph.size(); ++c) {
    if (dphi[c] > 0.0) alpha = std::min(alpha, 0.995 * (-ph[c]) / dphi[c]);
  }
  return alpha;
}

Vector BarrierObjective::barrier_multipliers(const Vector& x) const {
  if (agent_->phi_count == 0) return Vector();
  Vector ph = agent_->phi(x);
  Vector mu(ph.size());
  for (int c = 0; c < ph.size(); ++c) {
    if (ph[c] >= 0.0) {
      throw std::domain_error("barrier multipliers requested outside {phi < 0}");
    }
    mu[c] = -b_ / ph[c];
  }
  return mu;
}

namespace {

// Least-squares equality multipliers: argmin_nu ||g + J^T nu||. A QR solve
// keeps the residual floor at backward-error level even when the penalty
// terms inflate ||g|| by several orders of magnitude.
Vector multiplier_estimate(const Matrix& J, const Vector& g) {
  if (J.rows() == 0) return Vector();
  return Eigen::ColPivHouseholderQR<Matrix>(J.transpose()).solve(-g);
}

struct KktStep {
  Vector dx;
  Vector nu_next;
  double tau = 0.0;
  bool ok = false;
};

// Newton step on [W + tau I, J^T; J, 0] via the Schur complement with W
// regularized until positive definite (spec's inertia repair).
KktStep kkt_solve(const Matrix& W, const Matrix& J, const Vector& g, const Vector& psi,
                  double tau_init) {
  KktStep out;
  const int n = static_cast<int>(W.rows());
  double tau = 0.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    Matrix Wr = W;
    if (tau > 0.0) Wr.diagonal().array() += tau;
    Eigen::LLT<Matrix> llt(Wr);
    if (llt.info() != Eigen::Success) {
      tau = (tau == 0.0) ? tau_init : tau * 10.0;
      continue;
    }
    if (J.rows() == 0) {
      out.dx = llt.solve(-g);
      out.dx -= llt.solve((Wr * out.dx + g).eval());  // one refinement pass
      out.nu_next = Vector();
      out.tau = tau;
      out.ok = true;
      return out;
    }
    Matrix WinvJt = llt.solve(J.transpose());
    Vector Winvg = llt.solve(g);
    Matrix S = J * WinvJt;
    Eigen::LLT<Matrix> sllt(S);
    if (sllt.info() != Eigen::Success) {
      double dual_reg = 1e-12;
      for (int k = 0; k < 12 && sllt.info() != Eigen::Success; ++k, dual_reg *= 10.0) {
        Matrix Sr = S;
        Sr.diagonal().array() += dual_reg;
        sllt.compute(Sr);
      }
      if (sllt.info() != Eigen::Success) {
        tau = (tau == 0.0) ? tau_init : tau * 10.0;
        continue;
      }
    }
    out.nu_next = sllt.solve(psi - J * Winvg);
    out.dx = -llt.solve(g + J.transpose() * out.nu_next);
    // iterative refinement on the full KKT system; the penalty-dominated
    // blocks get ill-conditioned as the outer layer amplifies rho
    for (int pass = 0; pass < 2; ++pass) {
      Vector r1 = Wr * out.dx + J.transpose() * out.nu_next + g;
      Vector r2 = J * out.dx + psi;
      Vector dnu = sllt.solve(r2 - J * llt.solve(r1));
      Vector ddx = -llt.solve(r1 + J.transpose() * dnu);
      out.dx += ddx;
      out.nu_next += dnu;
    }
    out.tau = tau;
    out.ok = true;
    return out;
  }
  (void)n;
  return out;
}

}  // namespace

NlpResult EqualityNlpSolver::solve(const Vector& x0, const BarrierObjective& obj, double eps4,
                                   double eps5, const Vector* nu_warm) const {
  const AgentSubproblem& agent = *obj.agent();
  const int n = static_cast<int>(x0.size());
  const int m = agent.psi_count;

  NlpResult res;
  res.x = x0;
  if (eps4 <= 0.0 || eps5 <= 0.0) {
    res.message = "tolerances must be positive";
    return res;
  }
  if (!obj.in_domain(x0)) {
    res.message = "initial point is not strictly interior (phi(x0) < 0 required)";
    return res;
  }

  const double chi0 = obj.value(x0);
  res.objective_initial = chi0;
  const double psi_l1_start = m > 0 ? agent.psi(x0).lpNorm<1>() : 0.0;

  Vector x = x0;
  Vector nu = (nu_warm && nu_warm->size() == m) ? *nu_warm : Vector::Zero(m);
  double pi_merit = 1.0;

  const bool exact_hess = obj.has_exact_hessian();
  Matrix Bsr1;  // quasi-Newton Lagrangian Hessian when exact ones are absent
  if (!exact_hess) Bsr1 = Matrix::Identity(n, n);
  Vector g_prev, step_prev;
  Matrix J_prev;

  // fallback payload when the cap is hit: iterate with the best residual score
  double best_score = std::numeric_limits<double>::infinity();
  Vector best_x = x0, best_nu = nu;
  double best_d4 = 0, best_d5 = 0;
  int since_improvement = 0;

  for (int it = 0; it <= opts_.max_iterations; ++it) {
    Vector g = obj.gradient(x);
    Vector psi = m > 0 ? agent.psi(x) : Vector();
    Matrix J = m > 0 ? agent.psi_jac(x) : Matrix(0, n);

    Vector nu_ls = multiplier_estimate(J, g);
    Vector rd = g;
    if (m > 0) rd += J.transpose() * nu_ls;
    double d4 = rd.norm();
    double d5 = m > 0 ? psi.norm() : 0.0;

    double score = d4 / eps4 + d5 / eps5;
    bool improved = score < 0.999 * best_score;
    if (score < best_score) {
      best_score = score;
      best_x = x;
      best_nu = nu_ls;
      best_d4 = d4;
      best_d5 = d5;
    }

    // descent clause in merit form: chi + pi ||psi||_1 must not rise. From an
    // exactly feasible start this is the plain chi(x) <= chi(x0); from an
    // eps5-feasible warm start it concedes exactly the restoration effect.
    double chix = obj.value(x);
    double psi_l1_x = m > 0 ? psi.lpNorm<1>() : 0.0;
    if (d4 <= eps4 && d5 <= eps5 &&
        chix + pi_merit * psi_l1_x <=
            chi0 + pi_merit * psi_l1_start +
                opts_.descent_slack * std::max(1.0, std::abs(chi0))) {
      res.x = x;
      res.nu = nu_ls;
      res.mu = obj.barrier_multipliers(x);
      res.d4_norm = d4;
      res.d5_norm = d5;
      res.objective_final = chix;
      res.iterations = it;
      res.success = true;
      return res;
    }
    if (it == opts_.max_iterations) break;
    if (improved) {
      since_improvement = 0;
    } else if (++since_improvement > 15) {
      break;  // stagnating at the attainable floor; fail fast with the best iterate
    }

    if (!exact_hess && step_prev.size() == n) {
      // SR1 on the Lagrangian: y = grad L(x, nu) - grad L(x_prev, nu), same nu
      Vector yv = g - g_prev;
      if (m > 0) yv += (J - J_prev).transpose() * nu;
      Vector r = yv - Bsr1 * step_prev;
      double rs = r.dot(step_prev);
      if (std::abs(rs) > 1e-8 * r.norm() * step_prev.norm()) {
        Bsr1 += (r * r.transpose()) / rs;
      }
    }

    Matrix W = exact_hess ? obj.hessian(x) : Bsr1;
    if (exact_hess && m > 0 && agent.psi_hess_dot) W += agent.psi_hess_dot(x, nu);

    KktStep step = kkt_solve(W, J, g, psi, opts_.tau_init);
    if (!step.ok) {
      res.x = best_x;
      res.nu = best_nu;
      res.mu = obj.barrier_multipliers(best_x);
      res.d4_norm = best_d4;
      res.d5_norm = best_d5;
      res.objective_final = obj.value(best_x);
      res.iterations = it;
      res.message = "KKT system could not be regularized to a descent direction";
      return res;
    }

    if (m > 0) {
      double nu_inf = step.nu_next.lpNorm<Eigen::Infinity>();
      pi_merit = std::max(pi_merit, opts_.merit_margin * nu_inf + 0.1);
    }
    double psi_l1 = m > 0 ? psi.lpNorm<1>() : 0.0;
    double merit0 = chix + pi_merit * psi_l1;
    double dmerit = g.dot(step.dx) - pi_merit * psi_l1;
    if (dmerit > 0.0) dmerit = 0.0;  // still require plain decrease below

    double alpha = obj.fraction_to_boundary(x, step.dx);
    bool interior_failure = false;
    bool accepted = false;
    Vector trial;
    // local phase: once the achievable merit decrease falls below the
    // evaluation noise of chi, the Armijo comparison is meaningless; take
    // the (boundary-capped) Newton step as long as it stays interior
    const double noise = 16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(merit0));
    if (-dmerit * alpha <= noise) {
      trial = x + alpha * step.dx;
      while (!obj.in_domain(trial) && alpha >= opts_.alpha_min) {
        interior_failure = true;
        alpha *= 0.5;
        trial = x + alpha * step.dx;
      }
      accepted = alpha >= opts_.alpha_min;
    }
    while (!accepted && alpha >= opts_.alpha_min) {
      trial = x + alpha * step.dx;
      if (!obj.in_domain(trial)) {
        interior_failure = true;
        alpha *= 0.5;
        continue;
      }
      interior_failure = false;
      double merit_t = obj.value(trial) + pi_merit * (m > 0 ? agent.psi(trial).lpNorm<1>() : 0.0);
      if (merit_t <= merit0 + opts_.armijo * alpha * dmerit + noise) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      res.x = best_x;
      res.nu = best_nu;
      res.mu = obj.barrier_multipliers(best_x);
      res.d4_norm = best_d4;
      res.d5_norm = best_d5;
      res.objective_final = obj.value(best_x);
      res.iterations = it + 1;
      res.message = interior_failure
                        ? "line search could not keep the iterate strictly interior"
                        : "line search failed to decrease the merit function";
      return res;
    }

    if (!exact_hess) {
      g_prev = g;
      J_prev = J;
      step_prev = alpha * step.dx;
    }
    x = trial;
    if (m > 0) nu = (1.0 - alpha) * nu + alpha * step.nu_next;
    res.iterations = it + 1;
  }

  res.x = best_x;
  res.nu = best_nu;
  res.mu = obj.barrier_multipliers(best_x);
  res.d4_norm = best_d4;
  res.d5_norm = best_d5;
  res.objective_final = obj.value(best_x);
  {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "no iterate reached the requested tolerances (best d4=%.3e vs %.3e, "
                  "d5=%.3e vs %.3e, chi-chi0=%.3e; n=%d m=%d rho=%.3g b=%.3g iters=%d)",
                  best_d4, eps4, best_d5, eps5, res.objective_final - chi0, n, m, obj.rho(),
                  obj.barrier_coefficient(), res.iterations);
    res.message = buf;
  }
  return res;
}

NlpResult solve_equality_nlp(const Vector& x0, const BarrierObjective& obj, double eps4,
                             double eps5, const NlpOptions& opts) {
  return EqualityNlpSolver(opts).solve(x0, obj, eps4, eps5);
}

}  // namespace ellada
