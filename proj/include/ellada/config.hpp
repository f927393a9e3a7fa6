#ifndef ELLADA_CONFIG_HPP
#define ELLADA_CONFIG_HPP

#include "ellada/driver.hpp"
#include "ellada/qp.hpp"
#include "ellada/tank.hpp"

#include <string>

namespace ellada {

/// Fully resolved run configuration: benchmark defaults baked in, every
/// field overridable from a JSON config file and a few CLI flags. Unknown
/// keys are rejected with a line-anchored message.
struct RunConfig {
  std::string problem = "tank";  // tank | qp | custom
  std::string algo = "ellada";   // ell | ella | ellada
  std::string out_dir = "out";
  unsigned seed = 1;
  int staleness = 0;  // 0 = synchronous
  std::string plot = "svg";  // svg | png | none
  std::string custom_file;

  Vector tank_x0 = (Vector(4) << 12.6, 12.4, 5.0, 4.5).finished();
  OcpSpec ocp;
  QpOptions qp;

  SolverParams solver;
  ToleranceSchedule schedule;
  BarrierSchedule barrier;
  AndersonParams anderson;
  bool schedule_overridden = false;  // else per-variant defaults apply
  bool lambda_bound_set = false;     // +-10 is the tank setting; QPs default wider

  int closed_loop_steps = 20;
  std::string controller = "all";  // centralized|decentralized|feedforward|ellada|all
  bool warm_start = true;

  Variant variant() const;
  ToleranceSchedule effective_schedule() const;
  BarrierSchedule effective_barrier() const;

  /// Serialized resolved configuration (written next to the outputs).
  std::string echo_json() const;
};

/// Parse a JSON config file; throws std::runtime_error carrying
/// "<path>:<line>: ..." on malformed input or unknown keys.
RunConfig load_config(const std::string& path);

/// Apply one "key=value" override (dotted keys, e.g. solver.max_outer=50).
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace ellada

#endif
