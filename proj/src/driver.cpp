#include "ellada/driver.hpp"

#include <cassert>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace ellada {

std::pair<ToleranceSchedule, BarrierSchedule> default_schedules(Variant v) {
  ToleranceSchedule t;
  BarrierSchedule b;
  if (v == Variant::Ell) {
    t.outer_base = {1e-2, 1e-2, 1e-1, 1e-8};
    t.final_tols = {1e-4, 1e-4, 1e-3, 1e-6, 1e-6, 1e-6};
    t.inner_rule = ToleranceSchedule::InnerRule::Fixed;
    b.fixed = true;
    b.fixed_value = 1e-8;
  } else {
    t.outer_base = {100.0, 100.0, 0.1, 100.0};
    t.final_tols = {1.0, 1.0, 1e-3, 1.0, 1e-3, 1e-4};
    t.pi_ratio = 1e-3;
    t.inner_rule = ToleranceSchedule::InnerRule::Quadratic;
    t.inner_coeff = 40.0;
    b.fixed = false;
    b.initial = 1e-1;
    b.b_min = 1e-4;
    b.b_max = 1e-1;
    b.coeff = 25.0;
  }
  return {t, b};
}

void IterationLog::write_csv(std::ostream& os) const {
  os << "k,r,L_b,eps1,eps2,eps3,eps4,eps5,beta,rho,b,accel_accepted,nlp_iters\n";
  char buf[512];
  for (const auto& rec : inner) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", rec.k,
                  rec.r, rec.L_b, rec.eps1, rec.eps2, rec.eps3, rec.eps4_tol, rec.eps5_tol,
                  rec.beta, rec.rho, rec.b, rec.accel_accepted ? 1 : 0, rec.nlp_iters);
    os << buf;
  }
}

SolverDriver::SolverDriver(const DistributedProblem& problem, SolverParams params)
    : problem_(&problem), params_(params), runtime_(problem, params.runtime) {}

SolveResult SolverDriver::run_ell(const Vector& x0, std::optional<ToleranceSchedule> sched) {
  auto [t, b] = default_schedules(Variant::Ell);
  return run(Variant::Ell, x0, sched.value_or(t), b, AndersonParams{});
}

SolveResult SolverDriver::run_ella(const Vector& x0, std::optional<ToleranceSchedule> sched,
                                   std::optional<BarrierSchedule> barrier) {
  auto [t, b] = default_schedules(Variant::Ella);
  return run(Variant::Ella, x0, sched.value_or(t), barrier.value_or(b), AndersonParams{});
}

SolveResult SolverDriver::run_ellada(const Vector& x0, std::optional<ToleranceSchedule> sched,
                                     std::optional<BarrierSchedule> barrier,
                                     AndersonParams accel) {
  auto [t, b] = default_schedules(Variant::Ellada);
  return run(Variant::Ellada, x0, sched.value_or(t), barrier.value_or(b), accel);
}

namespace {

double lagrangian_from_parts(const StackedCoupling& c, double f_sum, double barrier_sum,
                             double g_val, const Vector& Ax, const Vector& xbar, const Vector& z,
                             const Vector& y, const OuterState& outer) {
  Vector res = Ax + c.B * xbar + z;
  double L = f_sum + g_val + y.dot(res) + 0.5 * outer.rho * res.squaredNorm() +
             outer.lambda.dot(z) + 0.5 * outer.beta * z.squaredNorm();
  return L - outer.b * barrier_sum;
}

}  // namespace

SolveResult SolverDriver::run(Variant variant, const Vector& x0, const ToleranceSchedule& sched,
                              const BarrierSchedule& barrier, const AndersonParams& accel) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  SolveResult out;
  const bool use_accel = variant == Variant::Ellada && accel.enabled;
  if (use_accel) accel.validate();

  {
    auto diags = validate_problem(*problem_);
    if (!diags.empty()) {
      std::ostringstream os;
      os << "problem validation failed:";
      for (const auto& d : diags) os << "\n  - " << d;
      out.status = SolveStatus::InvalidProblem;
      out.message = os.str();
      return out;
    }
  }

  const StackedCoupling& c = problem_->coupling;
  const int rows = c.row_dim();
  const int nb = c.xbar_dim();

  runtime_.reset(x0);
  std::uint64_t global_round = 0;

  OuterState outer;
  outer.lambda = Vector::Constant(
      rows, std::min(params_.lambda_hi, std::max(params_.lambda_lo, params_.lambda_init)));
  outer.lambda_lo = params_.lambda_lo;
  outer.lambda_hi = params_.lambda_hi;
  outer.beta = params_.beta_init;
  outer.rho = 2.0 * outer.beta;
  outer.gamma = params_.gamma;
  outer.omega = params_.omega;
  outer.b = variant == Variant::Ell ? params_.ell_barrier : barrier.first();
  outer.k = 1;

  WaveResult eval = runtime_.evaluate(global_round++);
  if (!eval.ok) {
    out.status = SolveStatus::NlpFailure;
    out.message = eval.message;
    return out;
  }
  Vector Ax = eval.Ax;
  double f_cur = eval.f_sum, barrier_cur = eval.barrier_sum;

  Vector xbar = problem_->g_oracle_override ? problem_->g_oracle_override(c, Ax, outer.rho)
                                            : g_oracle(c, Ax, outer.rho);
  Vector z = -(Ax + c.B * xbar);
  outer.z_prev_norm = z.norm();
  Vector y;

  InnerResiduals last_res;
  double last_d4 = 0.0, last_d5 = 0.0;

  auto g_val = [&](const Vector& xb) { return problem_->g_total(xb); };

  for (int k = 1; k <= params_.max_outer; ++k) {
    outer.k = k;
    outer.rho = 2.0 * outer.beta;  // Lemma 1 precondition
    y = -outer.lambda - outer.beta * z;

    const double e1k = sched.eps1_k(k), e2k = sched.eps2_k(k), e3k = sched.eps3_k(k);
    const double e4k = sched.eps4_k(k), e5k = sched.eps5_k(k);
    // eps4^{k,0}: the round's ultimate inner tolerance, loosened by the
    // residual level carried over from the previous round (same rule as the
    // in-round update; the first round has no residual history)
    double eps4_kr = variant == Variant::Ell
                         ? params_.ell_nlp_tol
                         : (k == 1 ? e4k : sched.next_eps4(last_res.eps1, e4k, e4k));
    double eps5_kr = variant == Variant::Ell ? params_.ell_nlp_tol : sched.pi(eps4_kr);

    AndersonState astate;
    astate.reset(nb + rows);
    Vector w_tilde(nb + rows), w_prev;
    w_tilde << xbar, z;

    double L_prev = lagrangian_from_parts(c, f_cur, barrier_cur, g_val(xbar), Ax, xbar, z, y,
                                          outer);
    bool cap_hit = false;
    int r = 0;

    while (true) {
      const auto t_iter = clock::now();

      WaveResult plain = runtime_.x_update(xbar, z, y, outer.rho, outer.b, eps4_kr, eps5_kr,
                                           /*trial=*/false, global_round);
      if (!plain.ok) {
        out.status = SolveStatus::NlpFailure;
        out.message = "inner iteration (" + std::to_string(k) + "," + std::to_string(r) +
                      "): " + plain.message;
        out.state = IterateState{runtime_.gather_x(), xbar, z, y, L_prev};
        out.outer = outer;
        out.wall_seconds = seconds_since(t_start);
        return out;
      }

      Vector xbar_t_cur, z_t_cur, y_t_cur;
      WaveResult trial;
      bool have_trial = false;
      bool trial_was_fresh = false;
      if (use_accel) {
        xbar_t_cur = w_tilde.head(nb);
        z_t_cur = w_tilde.tail(rows);
        y_t_cur = -outer.lambda - outer.beta * z_t_cur;
        bool same_subproblem = (nb == 0 || (xbar_t_cur.array() == xbar.array()).all()) &&
                               (rows == 0 || ((z_t_cur.array() == z.array()).all() &&
                                              (y_t_cur.array() == y.array()).all()));
        if (same_subproblem) {
          trial = plain;  // identical subproblem; the trial sequence coincides here
          have_trial = true;
        } else {
          trial = runtime_.x_update(xbar_t_cur, z_t_cur, y_t_cur, outer.rho, outer.b, eps4_kr,
                                    eps5_kr, /*trial=*/true, global_round);
          have_trial = true;
          trial_was_fresh = true;
          if (!trial.ok) {
            out.status = SolveStatus::NlpFailure;
            out.message = "trial solve (" + std::to_string(k) + "," + std::to_string(r) +
                          "): " + trial.message;
            out.state = IterateState{runtime_.gather_x(), xbar, z, y, L_prev};
            out.outer = outer;
            out.wall_seconds = seconds_since(t_start);
            return out;
          }
        }
      }
      global_round++;

      Vector Ax_prev = Ax;  // A x^{k,r}, the safeguard's reference
      Ax = plain.Ax;
      f_cur = plain.f_sum;
      barrier_cur = plain.barrier_sum;

      Vector xbar_new = problem_->g_oracle_override
                            ? problem_->g_oracle_override(c, Ax + z + y / outer.rho, outer.rho)
                            : blockwise::xbar_update(c, Ax, z, y, outer.rho);
      Vector z_new = blockwise::z_update(c, Ax, xbar_new, y, outer.lambda, outer.rho, outer.beta);
      Vector y_new = blockwise::y_update(c, Ax, xbar_new, z_new, y, outer.rho);

      bool accepted = false;
      SafeguardDecision sg{};
      bool proposed = false;
      if (use_accel && have_trial) {
        Vector xbar_t_new = blockwise::xbar_update(c, trial.Ax, z_t_cur, y_t_cur, outer.rho);
        Vector z_t_new = blockwise::z_update(c, trial.Ax, xbar_t_new, y_t_cur, outer.lambda,
                                             outer.rho, outer.beta);
        Vector w_tilde_plus(nb + rows), w_cur(nb + rows), w_plus(nb + rows);
        w_tilde_plus << xbar_t_new, z_t_new;
        w_cur << xbar, z;
        w_plus << xbar_new, z_new;

        if (r == 0) {
          record_scale(astate, c, xbar, z, xbar_new, z_new, outer.beta);
          w_prev = w_cur;
          w_tilde = w_plus;
        } else {
          Vector delta_w = w_tilde - w_prev;
          Vector delta_h = w_tilde - w_tilde_plus - w_prev + w_cur;
          push_secant(astate, delta_w, delta_h, accel);
          Vector proposal = propose(astate, w_cur, w_plus);
          SafeguardDecision dec = safeguard(astate, c, w_cur, proposal, Ax_prev, outer, accel);
          sg = dec;
          proposed = true;
          if (dec.accepted) {
            xbar_new = proposal.head(nb);
            z_new = proposal.tail(rows);
            y_new = -outer.lambda - outer.beta * z_new;
            accepted = true;
          }
          w_prev = w_cur;
          w_tilde = proposal;
        }
      }

      InnerRecord rec;
      rec.k = k;
      rec.r = r;
      rec.eps1 = (outer.rho * (c.A.transpose() * (c.B * (xbar_new - xbar) + (z_new - z)))).norm();
      rec.eps2 = (outer.rho * (c.B.transpose() * (z_new - z))).norm();
      rec.eps3 = (Ax + c.B * xbar_new + z_new).norm();
      rec.eps4_tol = eps4_kr;
      rec.eps5_tol = eps5_kr;
      rec.beta = outer.beta;
      rec.rho = outer.rho;
      rec.b = outer.b;
      rec.accel_accepted = accepted;
      rec.accel_proposed = proposed;
      rec.accel_increase = sg.increase;
      rec.accel_budget = sg.budget;
      rec.accel_step_sq = sg.step_sq;
      rec.accel_step_budget = sg.step_budget;
      rec.nlp_iters = plain.nlp_iterations + (trial_was_fresh ? trial.nlp_iterations : 0);
      rec.nlp_iters_plain = plain.nlp_iterations;
      rec.dual_identity = (outer.lambda + outer.beta * z_new + y_new).norm();
      rec.primal_link =
          ((Ax + c.B * xbar_new + z_new) + (outer.beta / outer.rho) * (z_new - z)).norm();
      rec.descent_quad = outer.beta * (c.B * (xbar_new - xbar)).squaredNorm() +
                         0.5 * outer.beta * (z_new - z).squaredNorm();
      rec.nlp_d4 = plain.d4;
      rec.nlp_d5 = plain.d5;

      double L_new = lagrangian_from_parts(c, f_cur, barrier_cur, g_val(xbar_new), Ax, xbar_new,
                                           z_new, y_new, outer);
      rec.L_b = L_new;
      rec.wall_seconds = seconds_since(t_iter);

      if (params_.check_invariants) {
        assert(rec.dual_identity <= 1e-10);
        if (!accepted) {
          assert(L_new - L_prev + rec.descent_quad <= 1e-8 * std::max(1.0, std::abs(L_prev)));
          assert(rec.primal_link <= 1e-8);
        }
      }
      L_prev = L_new;

      last_res = InnerResiduals{rec.eps1, rec.eps2, rec.eps3};
      last_d4 = plain.d4;
      last_d5 = plain.d5;

      xbar = xbar_new;
      z = z_new;
      y = y_new;

      if (variant != Variant::Ell) {
        eps4_kr = sched.next_eps4(rec.eps1, e4k, eps4_kr);
        eps5_kr = sched.pi(eps4_kr);
      }

      out.log.inner.push_back(rec);
      out.total_inner += 1;
      out.total_nlp_newton += rec.nlp_iters;
      ++r;

      bool eq18 = rec.eps1 <= e1k && rec.eps2 <= e2k && rec.eps3 <= e3k;
      bool inner_tols_ok = variant == Variant::Ell || (eps4_kr <= e4k && eps5_kr <= e5k);
      if (eq18 && inner_tols_ok) break;
      if (r >= params_.max_inner) {
        cap_hit = true;
        break;
      }
    }

    StationarityVerdict verdict = check_stationarity_ax(c, Ax, xbar, outer, last_d4, last_d5,
                                                        last_res, sched.final_tols);

    OuterRecord orec;
    orec.k = k;
    orec.z_norm = z.norm();
    orec.lambda_min = rows > 0 ? outer.lambda.minCoeff() : 0.0;
    orec.lambda_max = rows > 0 ? outer.lambda.maxCoeff() : 0.0;
    orec.beta = outer.beta;
    orec.rho = outer.rho;
    orec.b = outer.b;
    orec.inner_count = r;
    orec.verdict = verdict.pass;
    orec.inner_cap_hit = cap_hit;
    orec.anderson_restarts = astate.restarts;
    orec.anderson_accepted = astate.accepted;
    orec.anderson_scale = astate.L_tilde_0;

    bool schedule_done = variant == Variant::Ell ||
                         (e4k <= sched.final_tols[3] && e5k <= sched.final_tols[4] &&
                          outer.b <= sched.final_tols[5]);
    orec.certificate = verdict;

    OuterState next = outer_update(outer, z);
    orec.beta_amplified = next.beta > outer.beta;
    out.log.outer.push_back(orec);
    out.outer_rounds = k;

    if (verdict.pass && schedule_done) {
      out.status = SolveStatus::Converged;
      out.state = IterateState{runtime_.gather_x(), xbar, z, y, L_prev};
      out.outer = outer;
      out.certificate = verdict;
      out.wall_seconds = seconds_since(t_start);
      return out;
    }

    next.b = variant == Variant::Ell ? params_.ell_barrier : barrier.next(e3k);
    outer = next;
  }

  out.status = SolveStatus::OuterCapExceeded;
  out.message = "outer iteration cap (" + std::to_string(params_.max_outer) + ") exceeded";
  out.state = IterateState{runtime_.gather_x(), xbar, z, y, 0.0};
  out.outer = outer;
  out.certificate = check_stationarity(c, out.state, outer, last_d4, last_d5, last_res,
                                       sched.final_tols);
  out.wall_seconds = seconds_since(t_start);
  return out;
}

}  // namespace ellada
