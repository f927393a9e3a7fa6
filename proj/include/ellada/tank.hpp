#ifndef ELLADA_TANK_HPP
#define ELLADA_TANK_HPP

#include "ellada/driver.hpp"
#include "ellada/local_nlp.hpp"
#include "ellada/problem.hpp"

#include <array>
#include <optional>

namespace ellada {

/// Quadruple-tank plant. Defaults are the benchmark parameter table; the
/// nominal steady state zeroes the vector field to <= 1e-2 per component.
struct TankModel {
  std::array<double, 4> A{28.0, 32.0, 28.0, 32.0};      // cross sections (cm^2)
  std::array<double, 4> a{3.145, 2.525, 3.145, 2.525};  // outlet areas (cm^2)
  double gamma1 = 0.43, gamma2 = 0.34;                  // valve splits
  double k1 = 3.14, k2 = 3.29;                          // pump gains (cm^3/(V s))
  double eps_h = 1e-6;                                  // sqrt smoothing knee

  Vector h_ss() const { return (Vector(4) << 12.44, 13.17, 4.73, 4.99).finished(); }
  Vector v_ss() const { return (Vector(2) << 3.15, 3.15).finished(); }

  /// sqrt(h) smoothed as h / sqrt(max(h, eps_h)) near zero
  double level_outflow(double h) const { return h / std::sqrt(std::max(h, eps_h)); }
  double level_outflow_d1(double h) const {
    return h >= eps_h ? 0.5 / std::sqrt(h) : 1.0 / std::sqrt(eps_h);
  }
  double level_outflow_d2(double h) const {
    return h >= eps_h ? -0.25 / (h * std::sqrt(h)) : 0.0;
  }
};

/// dh/dt for state h >= 0 (smoothing region tolerated); h below -eps_h is a
/// domain error.
Vector dynamics_rhs(const TankModel& model, const Vector& h, const Vector& v);

enum class Discretization { ImplicitEuler, Radau2 };

struct OcpSpec {
  int horizon = 40;      // N steps of dt covering T = 400 s
  double dt = 10.0;      // sampling time (s)
  double q_state = 1.0;  // per-tank stage weight
  double r_input = 0.01;
  double v_min = 2.5, v_max = 3.5;
  Discretization disc = Discretization::ImplicitEuler;
};

/// Where the upstream state of a subsystem comes from.
enum class UpstreamMode {
  Coupled,            // overlap variables + coupling constraints (the real thing)
  FrozenMeasurement,  // held at the current measured value (decentralized)
  FrozenTrajectory,   // held at a supplied prediction (feedforward)
};

/// Index helpers for one agent's stacked trajectory variables. Each owned
/// tank is a stage-augmented trajectory of length 1 + m N (grid point t at
/// index t*m); inputs follow; an upstream copy block comes last when coupled.
struct TankAgentLayout {
  int N = 0, m = 1;
  std::vector<int> tanks;      // owned tank ids (0-based)
  int pump = 0;                // owned pump id
  std::vector<int> tank_off;   // offset of each owned tank's trajectory
  int input_off = 0;           // offset of the input block (length N)
  int copy_off = -1;           // offset of the upstream copy block, -1 if none
  int upstream_tank = -1;      // which tank the copy mirrors
  int dim = 0;

  int traj_len() const { return 1 + m * N; }
  int grid_index(int tank_pos, int t) const { return tank_off[tank_pos] + t * m; }
  int input_index(int t) const { return input_off + t; }
};

/// Decomposition into 2 subsystems: agent 0 = {h1, h4, v1} + copy of h3,
/// agent 1 = {h2, h3, v2} + copy of h4; digraph edges (1->0) via h3 and
/// (0->1) via h4.
struct SubsystemDecomposition {
  DistributedProblem problem;
  std::array<TankAgentLayout, 2> layouts;
};

SubsystemDecomposition build_subsystem_ocp(
    const TankModel& model, const OcpSpec& ocp, const Vector& x_now,
    UpstreamMode mode = UpstreamMode::Coupled,
    const std::array<Vector, 2>& frozen_upstream = {});  // stage trajectories, per agent

/// Feasible initial stacked point: the discretized dynamics simulated
/// forward from the measurement under v = v_ss, copies consistent with the
/// parent (so psi(x0) ~ 0, z0 = 0, and the NLP descent clause is satisfiable
/// from the start, the warm-start requirement).
Vector initial_stacked_point(const SubsystemDecomposition& d, const TankModel& model,
                             const OcpSpec& ocp, const Vector& x_now);

struct OcpSolution {
  bool success = false;
  Vector v0;      // first input to apply
  Matrix h_grid;  // (N+1) x n_tanks grid trajectory
  Matrix v_grid;  // N x n_inputs
  double cost = 0.0;
  int newton_iterations = 0;
  Vector raw;  // full decision vector, reusable as a warm start
  std::string message;
};

/// Monolithic barrier-Newton solve of the undecomposed OCP (the reference
/// oracle for the distributed solves).
OcpSolution solve_centralized(const TankModel& model, const OcpSpec& ocp, const Vector& x_now,
                              const Vector* warm_start = nullptr);

/// One subsystem solved alone with its upstream frozen (decentralized /
/// feedforward baselines).
OcpSolution solve_subsystem_frozen(const TankModel& model, const OcpSpec& ocp, int agent,
                                   const Vector& x_now, UpstreamMode mode,
                                   const Vector& frozen_upstream_traj,
                                   const Vector* warm_start = nullptr);

enum class ControllerKind { Centralized, Decentralized, Feedforward, ElladaDistributed };

struct ClosedLoopOptions {
  ControllerKind controller = ControllerKind::Centralized;
  int steps = 20;
  Variant variant = Variant::Ellada;  // distributed controller's algorithm
  SolverParams solver;
  AndersonParams accel;
  /// Finals for the distributed solves. The benchmark's printed finals mix
  /// tolerance regimes across variants; closed-loop comparisons against the
  /// monolithic oracle default to the equalized (tight) finals instead.
  bool equalize_finals = true;
  std::optional<ToleranceSchedule> schedule;
  std::optional<BarrierSchedule> barrier;
  double integration_rtol = 1e-8;
  double integration_atol = 1e-10;
  bool warm_start = true;
};

struct ClosedLoopStep {
  double t = 0.0;
  Vector h;  // state at the sampling instant (before applying v)
  Vector v;  // applied input
  long solve_iters = 0;  // inner iterations (distributed) or Newton steps
  double solve_time = 0.0;
  long nlp_newton = 0;
};

struct ClosedLoopLog {
  std::vector<ClosedLoopStep> steps;
  bool completed = false;
  double quadratic_cost = 0.0;  // sum_t q||h - h_ss||^2 + r||v - v_ss||^2
  std::string failure;
};

ClosedLoopLog closed_loop(const TankModel& model, const OcpSpec& ocp,
                          const ClosedLoopOptions& options, const Vector& x0);

}  // namespace ellada

#endif
