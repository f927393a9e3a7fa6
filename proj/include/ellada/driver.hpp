#ifndef ELLADA_DRIVER_HPP
#define ELLADA_DRIVER_HPP

#include "ellada/anderson.hpp"
#include "ellada/coordinator.hpp"
#include "ellada/runtime.hpp"
#include "ellada/schedules.hpp"

#include <iosfwd>
#include <optional>

namespace ellada {

struct SolverParams {
  double beta_init = 1.0;
  double lambda_init = 0.0;
  double lambda_lo = -10.0;
  double lambda_hi = 10.0;
  double omega = 0.75;
  double gamma = 2.0;
  int max_outer = 100;
  int max_inner = 2000;
  double ell_nlp_tol = 1e-7;  // emulated-exact x-minimization for the basic variant
  double ell_barrier = 1e-8;
  bool check_invariants = false;  // per-iteration descent/dual-identity asserts
  RuntimeOptions runtime;
};

struct InnerRecord {
  int k = 0, r = 0;
  double L_b = 0.0;
  double eps1 = 0.0, eps2 = 0.0, eps3 = 0.0;
  double eps4_tol = 0.0, eps5_tol = 0.0;  // NLP tolerances used this iteration
  double beta = 0.0, rho = 0.0, b = 0.0;
  bool accel_accepted = false;
  bool accel_proposed = false;
  double accel_increase = 0.0, accel_budget = 0.0;     // safeguard bound 1
  double accel_step_sq = 0.0, accel_step_budget = 0.0; // safeguard bound 2
  int nlp_iters = 0;
  int nlp_iters_plain = 0;  // main-sequence solves only (trial wave excluded)
  double wall_seconds = 0.0;
  double dual_identity = 0.0;    // ||lambda + beta z + y||
  double primal_link = 0.0;      // ||(Ax+Bxbar+z) + (beta/rho)(z+ - z)||
  double descent_quad = 0.0;     // beta||B dxbar||^2 + (beta/2)||dz||^2
  double nlp_d4 = 0.0, nlp_d5 = 0.0;
};

struct OuterRecord {
  int k = 0;
  double z_norm = 0.0;
  double lambda_min = 0.0, lambda_max = 0.0;
  double beta = 0.0, rho = 0.0, b = 0.0;
  int inner_count = 0;
  bool verdict = false;
  bool inner_cap_hit = false;
  bool beta_amplified = false;
  int anderson_restarts = 0;
  int anderson_accepted = 0;
  double anderson_scale = 0.0;  // L~0 of this round
  StationarityVerdict certificate;
};

struct IterationLog {
  std::vector<InnerRecord> inner;
  std::vector<OuterRecord> outer;

  /// CSV columns: k,r,L_b,eps1,eps2,eps3,eps4,eps5,beta,rho,b,accel_accepted,nlp_iters
  void write_csv(std::ostream& os) const;
};

enum class SolveStatus { Converged, OuterCapExceeded, NlpFailure, InvalidProblem };

struct SolveResult {
  SolveStatus status = SolveStatus::InvalidProblem;
  bool converged() const { return status == SolveStatus::Converged; }
  IterateState state;   // terminal iterate (x gathered from the agents)
  OuterState outer;
  StationarityVerdict certificate;
  IterationLog log;
  long total_inner = 0;
  long total_nlp_newton = 0;
  int outer_rounds = 0;
  double wall_seconds = 0.0;
  std::string message;
};

/// Orchestrates ELL / ELLA / ELLADA over one DistributedProblem. One core
/// loop runs all three: with exact NLP tolerances and acceleration disabled
/// the trajectories coincide.
class SolverDriver {
 public:
  SolverDriver(const DistributedProblem& problem, SolverParams params);

  SolveResult run_ell(const Vector& x0, std::optional<ToleranceSchedule> sched = {});
  SolveResult run_ella(const Vector& x0, std::optional<ToleranceSchedule> sched = {},
                       std::optional<BarrierSchedule> barrier = {});
  SolveResult run_ellada(const Vector& x0, std::optional<ToleranceSchedule> sched = {},
                         std::optional<BarrierSchedule> barrier = {},
                         AndersonParams accel = {});

  SolveResult run(Variant variant, const Vector& x0, const ToleranceSchedule& sched,
                  const BarrierSchedule& barrier, const AndersonParams& accel);

  DistributedRuntime& runtime() { return runtime_; }

 private:
  const DistributedProblem* problem_;
  SolverParams params_;
  DistributedRuntime runtime_;
};

}  // namespace ellada

#endif
