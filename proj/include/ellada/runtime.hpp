#ifndef ELLADA_RUNTIME_HPP
#define ELLADA_RUNTIME_HPP

#include "ellada/local_nlp.hpp"
#include "ellada/problem.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ellada {

/// Coordinator -> agent: per-incident-edge offsets -xbar_e + z_ie + y_ie/rho
/// plus the scalars of the current round. `evaluate_only` asks for the
/// agent's current values without solving.
struct ToAgentMessage {
  int agent = 0;
  std::uint64_t round = 0;
  bool trial = false;
  bool evaluate_only = false;
  double rho = 0.0, b = 0.0, eps4 = 0.0, eps5 = 0.0;
  std::vector<std::pair<int, Vector>> offsets;  // (edge index, offset block)
};

/// Agent -> coordinator: per-incident-edge coupling blocks D_ie x_i, the NLP
/// residuals, objective pieces for the Lagrangian, and the finish signal.
struct FromAgentMessage {
  int agent = 0;
  std::uint64_t round = 0;
  bool trial = false;
  std::vector<std::pair<int, Vector>> coupling_blocks;
  double d4 = 0.0, d5 = 0.0;
  double f_value = 0.0;
  double log_barrier_sum = 0.0;  // sum_c ln(-phi_c(x_i))
  int nlp_iterations = 0;
  bool success = true;
  bool finish = true;
  std::string message;
};

/// Binary frame encoding (little-endian, 8-byte f64 payloads) shared by the
/// in-process and loopback-socket transports; see README for the layout.
std::vector<std::uint8_t> encode(const ToAgentMessage& m);
std::vector<std::uint8_t> encode(const FromAgentMessage& m);
ToAgentMessage decode_to_agent(const std::uint8_t* data, std::size_t len);
FromAgentMessage decode_from_agent(const std::uint8_t* data, std::size_t len);

/// Owns one agent's local state (x, warm-start multipliers) and solves its
/// block of the stacked x-update. A `trial` message is solved from the state
/// the agent held *before* its last plain update, matching the accelerated
/// algorithm's parallel plain/trial structure. Not re-entrant.
class AgentWorker {
 public:
  AgentWorker(const DistributedProblem& problem, int agent, NlpOptions opts);

  FromAgentMessage handle(const ToAgentMessage& msg);

  void set_state(const Vector& x);
  const Vector& state() const { return x_cur_; }

 private:
  Vector stack_offsets(const ToAgentMessage& msg) const;
  FromAgentMessage snapshot(const ToAgentMessage& msg, const Vector& x) const;

  const DistributedProblem* problem_;
  int agent_;
  const AgentSubproblem* sub_;
  Matrix D_;                     // stacked selector rows, canonical edge order
  std::vector<int> edge_order_;  // incident edges in canonical order
  EqualityNlpSolver solver_;
  Vector x_cur_, x_prev_, nu_;
};

enum class TransportKind { InProcess, LoopbackSocket };

struct RuntimeOptions {
  TransportKind transport = TransportKind::InProcess;
  int staleness = 0;  // 0 = synchronous; S > 0 = bounded staleness
  bool parallel = true;
  int port = 0;  // 0 = pick a free loopback port
  NlpOptions nlp;
};

/// Result of one x-update wave across all agents, reduced for the
/// coordinator: the stacked Ax plus aggregate residuals/objective pieces.
struct WaveResult {
  Vector Ax;
  double d4 = 0.0, d5 = 0.0;  // sqrt of blockwise sums of squares
  double f_sum = 0.0;
  double barrier_sum = 0.0;
  int nlp_iterations = 0;
  bool ok = true;
  std::string message;
};

/// Coordinator-side execution fabric. Composes per-edge offset messages from
/// the stacked coordinator variables, dispatches them over the configured
/// transport (one logical worker per agent), and reassembles the replies.
/// Under bounded asynchrony, agent i re-solves only on rounds with
/// (round + i) mod (S+1) == 0 and its last blocks are reused otherwise.
class DistributedRuntime {
 public:
  DistributedRuntime(const DistributedProblem& problem, RuntimeOptions opts);
  ~DistributedRuntime();

  DistributedRuntime(const DistributedRuntime&) = delete;
  DistributedRuntime& operator=(const DistributedRuntime&) = delete;

  void reset(const Vector& x0_stacked);

  WaveResult x_update(const Vector& xbar, const Vector& z, const Vector& y, double rho, double b,
                      double eps4, double eps5, bool trial, std::uint64_t round);
  WaveResult evaluate(std::uint64_t round);

  /// Final-solution extraction (not part of the iteration wire protocol).
  Vector gather_x() const;

  const DistributedProblem& problem() const { return *problem_; }
  int port() const { return port_; }  // bound loopback port, socket transport only

 private:
  ToAgentMessage compose(int agent, const Vector& xbar, const Vector& z, const Vector& y,
                         double rho, double b, double eps4, double eps5, bool trial,
                         bool evaluate_only, std::uint64_t round) const;
  std::vector<FromAgentMessage> dispatch(const std::vector<ToAgentMessage>& msgs);
  WaveResult reduce(const std::vector<FromAgentMessage>& replies) const;

  const DistributedProblem* problem_;
  RuntimeOptions opts_;
  std::vector<std::unique_ptr<AgentWorker>> workers_;

  struct SocketState;
  std::unique_ptr<SocketState> socket_;
  int port_ = 0;

  std::vector<std::optional<FromAgentMessage>> last_plain_, last_trial_;
};

/// Stateless helpers mirroring the coordinator math blockwise (per bipartite
/// edge), used by the runtime and by the stacked-vs-blockwise equivalence
/// tests.
namespace blockwise {
Vector assemble_Ax(const StackedCoupling& c, const std::vector<FromAgentMessage>& replies);
Vector xbar_update(const StackedCoupling& c, const Vector& Ax, const Vector& z, const Vector& y,
                   double rho);
Vector z_update(const StackedCoupling& c, const Vector& Ax, const Vector& xbar, const Vector& y,
                const Vector& lambda, double rho, double beta);
Vector y_update(const StackedCoupling& c, const Vector& Ax, const Vector& xbar,
                const Vector& z_new, const Vector& y, double rho);
}  // namespace blockwise

}  // namespace ellada

#endif
