#include "ellada/runtime.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <future>
#include <map>
#include <thread>

namespace ellada {

// ---------------------------------------------------------------------------
// wire format
// ---------------------------------------------------------------------------

namespace {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
void put_vec(std::vector<std::uint8_t>& out, const Vector& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (int i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw std::runtime_error("truncated frame");
  }
  std::uint8_t u8() {
    need(1);
    return *p++;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(*p++) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(*p++) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  Vector vec() {
    std::uint32_t n = u32();
    Vector v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = f64();
    return v;
  }
};

constexpr std::uint8_t kToAgentTag = 1;
constexpr std::uint8_t kFromAgentTag = 2;

}  // namespace

std::vector<std::uint8_t> encode(const ToAgentMessage& m) {
  std::vector<std::uint8_t> out;
  put_u8(out, kToAgentTag);
  put_u8(out, static_cast<std::uint8_t>((m.trial ? 1 : 0) | (m.evaluate_only ? 2 : 0)));
  put_u32(out, static_cast<std::uint32_t>(m.agent));
  put_u64(out, m.round);
  put_f64(out, m.rho);
  put_f64(out, m.b);
  put_f64(out, m.eps4);
  put_f64(out, m.eps5);
  put_u32(out, static_cast<std::uint32_t>(m.offsets.size()));
  for (const auto& [edge, v] : m.offsets) {
    put_u32(out, static_cast<std::uint32_t>(edge));
    put_vec(out, v);
  }
  return out;
}

std::vector<std::uint8_t> encode(const FromAgentMessage& m) {
  std::vector<std::uint8_t> out;
  put_u8(out, kFromAgentTag);
  put_u8(out, static_cast<std::uint8_t>((m.trial ? 1 : 0) | (m.success ? 2 : 0) |
                                        (m.finish ? 4 : 0)));
  put_u32(out, static_cast<std::uint32_t>(m.agent));
  put_u64(out, m.round);
  put_f64(out, m.d4);
  put_f64(out, m.d5);
  put_f64(out, m.f_value);
  put_f64(out, m.log_barrier_sum);
  put_u32(out, static_cast<std::uint32_t>(m.nlp_iterations));
  put_u32(out, static_cast<std::uint32_t>(m.coupling_blocks.size()));
  for (const auto& [edge, v] : m.coupling_blocks) {
    put_u32(out, static_cast<std::uint32_t>(edge));
    put_vec(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(m.message.size()));
  out.insert(out.end(), m.message.begin(), m.message.end());
  return out;
}

ToAgentMessage decode_to_agent(const std::uint8_t* data, std::size_t len) {
  Reader r{data, data + len};
  if (r.u8() != kToAgentTag) throw std::runtime_error("wrong frame tag for to-agent message");
  ToAgentMessage m;
  std::uint8_t flags = r.u8();
  m.trial = flags & 1;
  m.evaluate_only = flags & 2;
  m.agent = static_cast<int>(r.u32());
  m.round = r.u64();
  m.rho = r.f64();
  m.b = r.f64();
  m.eps4 = r.f64();
  m.eps5 = r.f64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    int edge = static_cast<int>(r.u32());
    m.offsets.emplace_back(edge, r.vec());
  }
  return m;
}

FromAgentMessage decode_from_agent(const std::uint8_t* data, std::size_t len) {
  Reader r{data, data + len};
  if (r.u8() != kFromAgentTag) throw std::runtime_error("wrong frame tag for from-agent message");
  FromAgentMessage m;
  std::uint8_t flags = r.u8();
  m.trial = flags & 1;
  m.success = flags & 2;
  m.finish = flags & 4;
  m.agent = static_cast<int>(r.u32());
  m.round = r.u64();
  m.d4 = r.f64();
  m.d5 = r.f64();
  m.f_value = r.f64();
  m.log_barrier_sum = r.f64();
  m.nlp_iterations = static_cast<int>(r.u32());
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    int edge = static_cast<int>(r.u32());
    m.coupling_blocks.emplace_back(edge, r.vec());
  }
  std::uint32_t mlen = r.u32();
  r.need(mlen);
  m.message.assign(reinterpret_cast<const char*>(r.p), mlen);
  return m;
}

// ---------------------------------------------------------------------------
// agent worker
// ---------------------------------------------------------------------------

AgentWorker::AgentWorker(const DistributedProblem& problem, int agent, NlpOptions opts)
    : problem_(&problem), agent_(agent), sub_(&problem.agents[agent]), solver_(opts) {
  int rows = 0;
  for (const auto& blk : problem.coupling.blocks) {
    if (blk.agent == agent) {
      edge_order_.push_back(blk.edge);
      rows += blk.rows;
    }
  }
  D_ = Matrix::Zero(rows, sub_->dim);
  int r0 = 0;
  for (int e : edge_order_) {
    const SelectorMatrix& sel = problem.selectors.at({agent, e});
    D_.block(r0, 0, sel.rows(), sel.cols()) = sel.entries;
    r0 += sel.rows();
  }
  x_cur_ = Vector::Zero(sub_->dim);
  x_prev_ = x_cur_;
  nu_ = Vector::Zero(sub_->psi_count);
}

void AgentWorker::set_state(const Vector& x) {
  x_cur_ = x;
  x_prev_ = x;
  nu_.setZero();
}

Vector AgentWorker::stack_offsets(const ToAgentMessage& msg) const {
  std::map<int, const Vector*> by_edge;
  for (const auto& [edge, v] : msg.offsets) by_edge[edge] = &v;
  Vector v(D_.rows());
  int r0 = 0;
  for (int e : edge_order_) {
    auto it = by_edge.find(e);
    if (it == by_edge.end()) throw std::runtime_error("missing offset for incident edge");
    v.segment(r0, it->second->size()) = *it->second;
    r0 += static_cast<int>(it->second->size());
  }
  if (r0 != D_.rows()) throw std::runtime_error("offset blocks do not cover the agent's rows");
  return v;
}

FromAgentMessage AgentWorker::snapshot(const ToAgentMessage& msg, const Vector& x) const {
  FromAgentMessage out;
  out.agent = agent_;
  out.round = msg.round;
  out.trial = msg.trial;
  out.f_value = sub_->f(x);
  if (sub_->phi_count > 0) {
    Vector ph = sub_->phi(x);
    double s = 0.0;
    for (int c = 0; c < ph.size(); ++c) {
      if (ph[c] >= 0.0) throw std::domain_error("agent iterate left the strict interior");
      s += std::log(-ph[c]);
    }
    out.log_barrier_sum = s;
  }
  for (int e : edge_order_) {
    const SelectorMatrix& sel = problem_->selectors.at({agent_, e});
    out.coupling_blocks.emplace_back(e, sel.apply(x));
  }
  return out;
}

FromAgentMessage AgentWorker::handle(const ToAgentMessage& msg) {
  if (msg.evaluate_only) return snapshot(msg, x_cur_);

  const Vector& start = msg.trial ? x_prev_ : x_cur_;
  BarrierObjective obj(sub_, msg.b, msg.rho, D_, stack_offsets(msg));
  NlpResult res = solver_.solve(start, obj, msg.eps4, msg.eps5, nu_.size() ? &nu_ : nullptr);

  FromAgentMessage out = snapshot(msg, res.x);
  out.d4 = res.d4_norm;
  out.d5 = res.d5_norm;
  out.nlp_iterations = res.iterations;
  out.success = res.success;
  out.message = res.message;
  if (!msg.trial && res.success) {
    x_prev_ = x_cur_;
    x_cur_ = res.x;
    nu_ = res.nu;
  }
  return out;
}

// ---------------------------------------------------------------------------
// blockwise coordinator math
// ---------------------------------------------------------------------------

namespace blockwise {

Vector assemble_Ax(const StackedCoupling& c, const std::vector<FromAgentMessage>& replies) {
  Vector Ax = Vector::Zero(c.row_dim());
  std::map<std::pair<int, int>, const Vector*> by_key;
  for (const auto& rep : replies) {
    for (const auto& [edge, v] : rep.coupling_blocks) by_key[{rep.agent, edge}] = &v;
  }
  for (const auto& blk : c.blocks) {
    auto it = by_key.find({blk.agent, blk.edge});
    if (it == by_key.end()) throw std::runtime_error("missing coupling block in agent replies");
    Ax.segment(blk.row0, blk.rows) = *it->second;
  }
  return Ax;
}

Vector xbar_update(const StackedCoupling& c, const Vector& Ax, const Vector& z, const Vector& y,
                   double rho) {
  Vector xbar = Vector::Zero(c.xbar_dim());
  std::vector<bool> started(c.edge_count(), false);
  for (const auto& blk : c.blocks) {  // canonical order matches the stacked row order
    auto v = Ax.segment(blk.row0, blk.rows) + z.segment(blk.row0, blk.rows) +
             y.segment(blk.row0, blk.rows) / rho;
    if (!started[blk.edge]) {
      xbar.segment(blk.edge_col0, blk.rows) = v;
      started[blk.edge] = true;
    } else {
      xbar.segment(blk.edge_col0, blk.rows) += v;
    }
  }
  return 0.5 * xbar;
}

Vector z_update(const StackedCoupling& c, const Vector& Ax, const Vector& xbar, const Vector& y,
                const Vector& lambda, double rho, double beta) {
  const double c1 = rho / (rho + beta);
  const double c2 = 1.0 / (rho + beta);
  Vector z(c.row_dim());
  for (const auto& blk : c.blocks) {
    z.segment(blk.row0, blk.rows) =
        -c1 * (Ax.segment(blk.row0, blk.rows) - xbar.segment(blk.edge_col0, blk.rows) +
               y.segment(blk.row0, blk.rows) / rho) -
        c2 * lambda.segment(blk.row0, blk.rows);
  }
  return z;
}

Vector y_update(const StackedCoupling& c, const Vector& Ax, const Vector& xbar,
                const Vector& z_new, const Vector& y, double rho) {
  Vector out(c.row_dim());
  for (const auto& blk : c.blocks) {
    out.segment(blk.row0, blk.rows) =
        y.segment(blk.row0, blk.rows) +
        rho * (Ax.segment(blk.row0, blk.rows) - xbar.segment(blk.edge_col0, blk.rows) +
               z_new.segment(blk.row0, blk.rows));
  }
  return out;
}

}  // namespace blockwise

// ---------------------------------------------------------------------------
// socket transport
// ---------------------------------------------------------------------------

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    ssize_t n = ::write(fd, data, len);
    if (n <= 0) throw std::runtime_error("socket write failed");
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

bool read_all(int fd, std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    ssize_t n = ::read(fd, data, len);
    if (n == 0) return false;  // orderly shutdown
    if (n < 0) throw std::runtime_error("socket read failed");
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

void write_frame(int fd, const std::vector<std::uint8_t>& payload) {
  std::uint8_t hdr[4];
  std::uint32_t len = static_cast<std::uint32_t>(payload.size());
  for (int i = 0; i < 4; ++i) hdr[i] = static_cast<std::uint8_t>(len >> (8 * i));
  write_all(fd, hdr, 4);
  write_all(fd, payload.data(), payload.size());
}

bool read_frame(int fd, std::vector<std::uint8_t>& payload) {
  std::uint8_t hdr[4];
  if (!read_all(fd, hdr, 4)) return false;
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(hdr[i]) << (8 * i);
  payload.resize(len);
  if (len > 0 && !read_all(fd, payload.data(), len)) return false;
  return true;
}

}  // namespace

struct DistributedRuntime::SocketState {
  int listen_fd = -1;
  std::vector<int> server_fds;
  std::vector<int> client_fds;
  std::vector<std::thread> threads;

  ~SocketState() {
    for (int fd : client_fds) {
      if (fd >= 0) ::close(fd);
    }
    for (auto& t : threads) {
      if (t.joinable()) t.join();
    }
    for (int fd : server_fds) {
      if (fd >= 0) ::close(fd);
    }
    if (listen_fd >= 0) ::close(listen_fd);
  }
};

// ---------------------------------------------------------------------------
// runtime
// ---------------------------------------------------------------------------

DistributedRuntime::DistributedRuntime(const DistributedProblem& problem, RuntimeOptions opts)
    : problem_(&problem), opts_(opts) {
  const int n = problem.agent_count();
  for (int i = 0; i < n; ++i) {
    workers_.push_back(std::make_unique<AgentWorker>(problem, i, opts.nlp));
  }
  last_plain_.resize(n);
  last_trial_.resize(n);

  if (opts_.transport == TransportKind::LoopbackSocket) {
    socket_ = std::make_unique<SocketState>();
    socket_->listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (socket_->listen_fd < 0) throw std::runtime_error("could not create listen socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(opts_.port));
    int one = 1;
    ::setsockopt(socket_->listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(socket_->listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      throw std::runtime_error("could not bind loopback port");
    }
    socklen_t alen = sizeof(addr);
    ::getsockname(socket_->listen_fd, reinterpret_cast<sockaddr*>(&addr), &alen);
    port_ = ntohs(addr.sin_port);
    if (::listen(socket_->listen_fd, n) != 0) throw std::runtime_error("listen failed");

    socket_->server_fds.assign(n, -1);
    socket_->client_fds.assign(n, -1);
    for (int i = 0; i < n; ++i) {
      int cfd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (cfd < 0 || ::connect(cfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw std::runtime_error("could not connect to loopback agent host");
      }
      int nodelay = 1;
      ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &nodelay, sizeof(nodelay));
      int sfd = ::accept(socket_->listen_fd, nullptr, nullptr);
      if (sfd < 0) throw std::runtime_error("accept failed");
      // hello frame binds this connection to one agent
      std::vector<std::uint8_t> hello;
      put_u32(hello, static_cast<std::uint32_t>(i));
      write_frame(cfd, hello);
      std::vector<std::uint8_t> buf;
      if (!read_frame(sfd, buf) || buf.size() != 4) throw std::runtime_error("bad hello frame");
      Reader r{buf.data(), buf.data() + buf.size()};
      int agent = static_cast<int>(r.u32());
      socket_->client_fds[i] = cfd;
      socket_->server_fds[agent] = sfd;
      AgentWorker* worker = workers_[agent].get();
      socket_->threads.emplace_back([worker, sfd]() {
        std::vector<std::uint8_t> frame;
        while (read_frame(sfd, frame)) {
          FromAgentMessage reply;
          try {
            reply = worker->handle(decode_to_agent(frame.data(), frame.size()));
          } catch (const std::exception& e) {
            reply.success = false;
            reply.message = e.what();
          }
          write_frame(sfd, encode(reply));
        }
      });
    }
  }
}

DistributedRuntime::~DistributedRuntime() = default;

void DistributedRuntime::reset(const Vector& x0_stacked) {
  for (int i = 0; i < problem_->agent_count(); ++i) {
    workers_[i]->set_state(problem_->coupling.agent_x(x0_stacked, i));
    last_plain_[i].reset();
    last_trial_[i].reset();
  }
}

ToAgentMessage DistributedRuntime::compose(int agent, const Vector& xbar, const Vector& z,
                                           const Vector& y, double rho, double b, double eps4,
                                           double eps5, bool trial, bool evaluate_only,
                                           std::uint64_t round) const {
  ToAgentMessage m;
  m.agent = agent;
  m.round = round;
  m.trial = trial;
  m.evaluate_only = evaluate_only;
  m.rho = rho;
  m.b = b;
  m.eps4 = eps4;
  m.eps5 = eps5;
  if (!evaluate_only) {
    for (const auto& blk : problem_->coupling.blocks) {
      if (blk.agent != agent) continue;
      Vector off = -xbar.segment(blk.edge_col0, blk.rows) + z.segment(blk.row0, blk.rows) +
                    y.segment(blk.row0, blk.rows) / rho;
      m.offsets.emplace_back(blk.edge, std::move(off));
    }
  }
  return m;
}

std::vector<FromAgentMessage> DistributedRuntime::dispatch(
    const std::vector<ToAgentMessage>& msgs) {
  std::vector<FromAgentMessage> replies(msgs.size());
  if (opts_.transport == TransportKind::InProcess) {
    // group by agent, preserve per-agent order, parallelize across agents
    std::map<int, std::vector<std::size_t>> by_agent;
    for (std::size_t i = 0; i < msgs.size(); ++i) by_agent[msgs[i].agent].push_back(i);
    std::vector<std::future<void>> futs;
    for (auto& [agent, idxs] : by_agent) {
      auto work = [this, agent = agent, &idxs, &msgs, &replies]() {
        for (std::size_t i : idxs) {
          try {
            replies[i] = workers_[agent]->handle(msgs[i]);
          } catch (const std::exception& e) {
            replies[i].agent = agent;
            replies[i].success = false;
            replies[i].message = e.what();
          }
        }
      };
      if (opts_.parallel) {
        futs.push_back(std::async(std::launch::async, work));
      } else {
        work();
      }
    }
    for (auto& f : futs) f.get();
  } else {
    // write all request frames first, then collect replies per connection
    std::map<int, std::vector<std::size_t>> by_agent;
    for (std::size_t i = 0; i < msgs.size(); ++i) {
      by_agent[msgs[i].agent].push_back(i);
      write_frame(socket_->client_fds[msgs[i].agent], encode(msgs[i]));
    }
    for (auto& [agent, idxs] : by_agent) {
      for (std::size_t i : idxs) {
        std::vector<std::uint8_t> frame;
        if (!read_frame(socket_->client_fds[agent], frame)) {
          throw std::runtime_error("agent connection closed mid-round");
        }
        replies[i] = decode_from_agent(frame.data(), frame.size());
      }
    }
  }
  return replies;
}

WaveResult DistributedRuntime::reduce(const std::vector<FromAgentMessage>& replies) const {
  WaveResult w;
  double d4sq = 0.0, d5sq = 0.0;
  for (const auto& rep : replies) {
    d4sq += rep.d4 * rep.d4;
    d5sq += rep.d5 * rep.d5;
    w.f_sum += rep.f_value;
    w.barrier_sum += rep.log_barrier_sum;
    w.nlp_iterations += rep.nlp_iterations;
    if (!rep.success) {
      w.ok = false;
      w.message = "agent " + std::to_string(rep.agent) + ": " + rep.message;
    }
  }
  if (!w.ok) return w;
  w.Ax = blockwise::assemble_Ax(problem_->coupling, replies);
  w.d4 = std::sqrt(d4sq);
  w.d5 = std::sqrt(d5sq);
  return w;
}

WaveResult DistributedRuntime::x_update(const Vector& xbar, const Vector& z, const Vector& y,
                                        double rho, double b, double eps4, double eps5, bool trial,
                                        std::uint64_t round) {
  const int n = problem_->agent_count();
  const double split = std::sqrt(static_cast<double>(n));
  auto& cache = trial ? last_trial_ : last_plain_;

  std::vector<ToAgentMessage> msgs;
  std::vector<int> fresh;
  for (int i = 0; i < n; ++i) {
    bool scheduled = opts_.staleness <= 0 ||
                     (round + static_cast<std::uint64_t>(i)) % (opts_.staleness + 1) == 0 ||
                     !cache[i].has_value();
    if (scheduled) {
      msgs.push_back(compose(i, xbar, z, y, rho, b, eps4 / split, eps5 / split, trial, false,
                             round));
      fresh.push_back(i);
    }
  }
  std::vector<FromAgentMessage> got = dispatch(msgs);
  for (std::size_t j = 0; j < got.size(); ++j) cache[fresh[j]] = got[j];

  std::vector<FromAgentMessage> all;
  all.reserve(n);
  for (int i = 0; i < n; ++i) all.push_back(*cache[i]);
  return reduce(all);
}

WaveResult DistributedRuntime::evaluate(std::uint64_t round) {
  const int n = problem_->agent_count();
  std::vector<ToAgentMessage> msgs;
  for (int i = 0; i < n; ++i) {
    msgs.push_back(compose(i, Vector(), Vector(), Vector(), 1.0, 1.0, 1.0, 1.0, false, true,
                           round));
  }
  return reduce(dispatch(msgs));
}

Vector DistributedRuntime::gather_x() const {
  Vector x(problem_->coupling.x_dim());
  for (int i = 0; i < problem_->agent_count(); ++i) {
    x.segment(problem_->coupling.agent_col0[i], problem_->coupling.agent_dims[i]) =
        workers_[i]->state();
  }
  return x;
}

}  // namespace ellada
