#include <doctest.h>

#include "ellada/runtime.hpp"
#include "ellada/coordinator.hpp"
#include "ellada/qp.hpp"

#include <random>

using namespace ellada;

namespace {

QpProblem coupled_qp(unsigned seed, int agents = 3) {
  QpOptions opts;
  opts.agents = agents;
  opts.edge_prob = 0.8;
  opts.seed = seed;
  return make_random_qp(opts);
}

}  // namespace

TEST_CASE("message frames round-trip through the binary schema") {
  ToAgentMessage m;
  m.agent = 3;
  m.round = 77;
  m.trial = true;
  m.rho = 2.5;
  m.b = 1e-4;
  m.eps4 = 0.125;
  m.eps5 = 1.25e-4;
  m.offsets.emplace_back(0, (Vector(2) << 1.5, -2.25).finished());
  m.offsets.emplace_back(2, (Vector(1) << 0.0625).finished());
  auto bytes = encode(m);
  ToAgentMessage back = decode_to_agent(bytes.data(), bytes.size());
  CHECK(back.agent == m.agent);
  CHECK(back.round == m.round);
  CHECK(back.trial == m.trial);
  CHECK(back.rho == m.rho);
  CHECK(back.eps5 == m.eps5);
  REQUIRE(back.offsets.size() == 2);
  CHECK(back.offsets[0].second == m.offsets[0].second);
  CHECK(back.offsets[1].first == 2);

  FromAgentMessage f;
  f.agent = 1;
  f.round = 9;
  f.d4 = 3.5e-7;
  f.d5 = 0.0;
  f.f_value = -12.75;
  f.log_barrier_sum = 3.25;
  f.nlp_iterations = 4;
  f.success = true;
  f.finish = true;
  f.message = "ok";
  f.coupling_blocks.emplace_back(1, (Vector(3) << 1, 2, 3).finished());
  auto fb = encode(f);
  FromAgentMessage fback = decode_from_agent(fb.data(), fb.size());
  CHECK(fback.agent == 1);
  CHECK(fback.d4 == f.d4);
  CHECK(fback.f_value == f.f_value);
  CHECK(fback.message == "ok");
  REQUIRE(fback.coupling_blocks.size() == 1);
  CHECK(fback.coupling_blocks[0].second == f.coupling_blocks[0].second);

  CHECK_THROWS(decode_from_agent(bytes.data(), bytes.size()));  // wrong tag
  CHECK_THROWS(decode_to_agent(bytes.data(), bytes.size() - 3));  // truncated
}

TEST_CASE("message locality: offsets cover exactly the agent's incident edges") {
  QpProblem qp = coupled_qp(41);
  const StackedCoupling& c = qp.problem.coupling;
  RuntimeOptions ro;
  DistributedRuntime rt(qp.problem, ro);
  rt.reset(qp.x0);

  // drive one wave and inspect the composed messages via the public encode
  // path: compose() is private, so check the reply structure instead
  Vector xbar = Vector::Zero(c.xbar_dim()), z = Vector::Zero(c.row_dim()),
         y = Vector::Zero(c.row_dim());
  WaveResult w = rt.x_update(xbar, z, y, 2.0, 1e-2, 10.0, 10.0, false, 0);
  REQUIRE(w.ok);
  CHECK(w.Ax.size() == c.row_dim());

  // every block row of Ax equals D_ie x_i of the worker's state
  Vector x = rt.gather_x();
  for (const auto& blk : c.blocks) {
    Vector expect = qp.problem.selectors.at({blk.agent, blk.edge}).apply(c.agent_x(x, blk.agent));
    CHECK((w.Ax.segment(blk.row0, blk.rows) - expect).norm() == 0.0);
  }
}

TEST_CASE("blockwise round is bit-identical to stacked coordinator updates") {
  std::mt19937 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int done = 0;
  for (unsigned seed = 1; seed < 80 && done < 50; ++seed) {
    QpProblem qp = coupled_qp(seed, 2 + static_cast<int>(seed % 4));
    const StackedCoupling& c = qp.problem.coupling;
    if (c.row_dim() == 0) continue;
    ++done;

    // random incoming agent blocks and coordinator state
    std::vector<FromAgentMessage> replies(qp.problem.agent_count());
    Vector x = Vector::NullaryExpr(c.x_dim(), [&](Eigen::Index) { return gauss(rng); });
    for (int i = 0; i < qp.problem.agent_count(); ++i) {
      replies[i].agent = i;
      for (const auto& blk : c.blocks) {
        if (blk.agent != i) continue;
        replies[i].coupling_blocks.emplace_back(
            blk.edge, qp.problem.selectors.at({i, blk.edge}).apply(c.agent_x(x, i)));
      }
    }
    IterateState st;
    st.x = x;
    st.x_bar = Vector::NullaryExpr(c.xbar_dim(), [&](Eigen::Index) { return gauss(rng); });
    st.z = Vector::NullaryExpr(c.row_dim(), [&](Eigen::Index) { return gauss(rng); });
    st.y = Vector::NullaryExpr(c.row_dim(), [&](Eigen::Index) { return gauss(rng); });
    OuterState outer;
    outer.lambda = Vector::NullaryExpr(c.row_dim(), [&](Eigen::Index) { return gauss(rng); });
    outer.beta = 1.5;
    outer.rho = 3.0;

    Vector Ax = blockwise::assemble_Ax(c, replies);
    CHECK((Ax.array() == (c.A * x).array()).all());

    // stacked path: xbar from the g-oracle, then z, then y
    Vector v = c.A * st.x + st.z + st.y / outer.rho;
    Vector xbar_stacked = g_oracle(c, v, outer.rho);
    IterateState st2 = st;
    st2.x_bar = xbar_stacked;
    Vector z_stacked = z_update(c, st2, outer);
    IterateState st3 = st2;
    st3.z = z_stacked;
    Vector y_stacked = y_update(c, st3, outer);

    Vector xbar_block = blockwise::xbar_update(c, Ax, st.z, st.y, outer.rho);
    Vector z_block = blockwise::z_update(c, Ax, xbar_block, st.y, outer.lambda, outer.rho,
                                         outer.beta);
    Vector y_block = blockwise::y_update(c, Ax, xbar_block, z_block, st.y, outer.rho);

    CHECK((xbar_block.array() == xbar_stacked.array()).all());
    CHECK((z_block.array() == z_stacked.array()).all());
    CHECK((y_block.array() == y_stacked.array()).all());
  }
  CHECK(done == 50);
}

TEST_CASE("socket transport reproduces the in-process wave bit-for-bit") {
  QpProblem qp = coupled_qp(13);
  const StackedCoupling& c = qp.problem.coupling;

  RuntimeOptions in_proc;
  in_proc.parallel = false;
  DistributedRuntime rt1(qp.problem, in_proc);
  rt1.reset(qp.x0);

  RuntimeOptions sock;
  sock.transport = TransportKind::LoopbackSocket;
  DistributedRuntime rt2(qp.problem, sock);
  rt2.reset(qp.x0);
  CHECK(rt2.port() > 0);

  Vector xbar = Vector::Constant(c.xbar_dim(), 0.25);
  Vector z = Vector::Constant(c.row_dim(), -0.5);
  Vector y = Vector::Constant(c.row_dim(), 0.125);
  for (std::uint64_t round = 0; round < 3; ++round) {
    WaveResult w1 = rt1.x_update(xbar, z, y, 2.0, 1e-2, 1e-6, 1e-6, false, round);
    WaveResult w2 = rt2.x_update(xbar, z, y, 2.0, 1e-2, 1e-6, 1e-6, false, round);
    REQUIRE(w1.ok);
    REQUIRE(w2.ok);
    CHECK((w1.Ax.array() == w2.Ax.array()).all());
    CHECK(w1.d4 == w2.d4);
    CHECK(w1.f_sum == w2.f_sum);
    CHECK(w1.nlp_iterations == w2.nlp_iterations);
  }
  CHECK((rt1.gather_x().array() == rt2.gather_x().array()).all());
}

TEST_CASE("bounded staleness reuses agent blocks deterministically") {
  QpProblem qp = coupled_qp(29, 3);
  const StackedCoupling& c = qp.problem.coupling;
  RuntimeOptions ro;
  ro.staleness = 2;
  ro.parallel = false;
  DistributedRuntime rt(qp.problem, ro);
  rt.reset(qp.x0);

  Vector xbar = Vector::Zero(c.xbar_dim()), z = Vector::Zero(c.row_dim()),
         y = Vector::Zero(c.row_dim());
  WaveResult w0 = rt.x_update(xbar, z, y, 2.0, 1e-2, 1e-6, 1e-6, false, 0);
  REQUIRE(w0.ok);
  // with S = 2, agent i recomputes on rounds (r + i) % 3 == 0; on round 1
  // agents 0 and 1 hold their blocks even though the offsets changed
  Vector xbar2 = Vector::Constant(c.xbar_dim(), 1.0);
  WaveResult w1 = rt.x_update(xbar2, z, y, 2.0, 1e-2, 1e-6, 1e-6, false, 1);
  REQUIRE(w1.ok);
  auto rows_of = [&](int agent) {
    auto [r0, n] = c.agent_row_range(agent);
    return std::make_pair(r0, n);
  };
  auto [r0a, na] = rows_of(0);
  CHECK((w1.Ax.segment(r0a, na).array() == w0.Ax.segment(r0a, na).array()).all());
  auto [r0b, nb] = rows_of(2);  // (1 + 2) % 3 == 0 -> agent 2 refreshed
  (void)r0b; (void)nb;
}
