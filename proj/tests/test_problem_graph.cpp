#include <doctest.h>

#include "ellada/problem.hpp"
#include "ellada/qp.hpp"

#include <random>

using namespace ellada;

TEST_CASE("bipartite construction of the 3-cycle digraph") {
  Digraph g{3, {{0, 1}, {1, 2}, {2, 0}}};
  BipartiteStructure bip = build_bipartite(g);
  CHECK(bip.agent_count == 3);
  CHECK(bip.edge_nodes.size() == 3);
  CHECK(bip.bipartite_edges.size() == 6);
  // every edge node has exactly two incident bipartite edges
  std::vector<int> incident(3, 0);
  for (auto& [agent, e] : bip.bipartite_edges) {
    (void)agent;
    incident[e]++;
  }
  for (int c : incident) CHECK(c == 2);
}

TEST_CASE("bipartite construction edge cases") {
  CHECK(build_bipartite(Digraph{2, {}}).bipartite_edges.empty());

  BipartiteStructure single = build_bipartite(Digraph{2, {{0, 1}}});
  REQUIRE(single.edge_nodes.size() == 1);
  REQUIRE(single.bipartite_edges.size() == 2);
  CHECK(single.bipartite_edges[0] == std::make_pair(0, 0));
  CHECK(single.bipartite_edges[1] == std::make_pair(1, 0));

  CHECK_THROWS_AS(build_bipartite(Digraph{2, {{0, 1}, {0, 1}}}), StructuralError);
  CHECK_THROWS_AS(build_bipartite(Digraph{2, {{1, 1}}}), StructuralError);
  CHECK_THROWS_AS(build_bipartite(Digraph{2, {{0, 2}}}), StructuralError);
}

TEST_CASE("smallest coupling: one scalar overlap between two agents") {
  Digraph g{2, {{0, 1}}};
  BipartiteStructure bip = build_bipartite(g);
  std::map<std::pair<int, int>, SelectorMatrix> sel;
  sel[{0, 0}] = SelectorMatrix::pick(2, {1});
  sel[{1, 0}] = SelectorMatrix::pick(3, {0});
  StackedCoupling c = assemble_coupling(bip, sel, {2, 3});
  CHECK(c.A.rows() == 2);
  CHECK(c.A.cols() == 5);
  CHECK(c.B.rows() == 2);
  CHECK(c.B.cols() == 1);
  CHECK(c.A.sum() == 2.0);  // two unit rows
  Matrix btb = c.B.transpose() * c.B;
  CHECK(btb(0, 0) == 2.0);
}

TEST_CASE("empty coupling yields zero-row matrices") {
  StackedCoupling c = assemble_coupling(build_bipartite(Digraph{2, {}}), {}, {2, 2});
  CHECK(c.row_dim() == 0);
  CHECK(c.xbar_dim() == 0);
  CHECK(c.x_dim() == 4);
}

TEST_CASE("assemble_coupling rejects dimension mismatches") {
  Digraph g{2, {{0, 1}}};
  BipartiteStructure bip = build_bipartite(g);
  std::map<std::pair<int, int>, SelectorMatrix> sel;
  sel[{0, 0}] = SelectorMatrix::pick(4, {1});  // agent 0 is 2-dimensional
  sel[{1, 0}] = SelectorMatrix::pick(3, {0});
  CHECK_THROWS_AS(assemble_coupling(bip, sel, {2, 3}), StructuralError);
  // missing selector
  std::map<std::pair<int, int>, SelectorMatrix> missing;
  missing[{0, 0}] = SelectorMatrix::pick(2, {1});
  CHECK_THROWS_AS(assemble_coupling(bip, missing, {2, 3}), StructuralError);
}

TEST_CASE("BtB = 2I and canonical determinism on random instances") {
  for (unsigned seed = 1; seed <= 20; ++seed) {
    QpOptions opts;
    opts.agents = 2 + static_cast<int>(seed % 4);
    opts.edge_prob = 0.7;
    opts.seed = seed;
    QpProblem qp = make_random_qp(opts);
    const StackedCoupling& c = qp.problem.coupling;
    if (c.row_dim() == 0) continue;
    Matrix btb = c.B.transpose() * c.B;
    CHECK((btb - 2.0 * Matrix::Identity(btb.rows(), btb.cols())).cwiseAbs().maxCoeff() == 0.0);

    // assembling twice yields identical matrices
    StackedCoupling c2 =
        assemble_coupling(qp.problem.bipartite, qp.problem.selectors, c.agent_dims);
    CHECK(c.A == c2.A);
    CHECK(c.B == c2.B);
  }
}

TEST_CASE("reformulation soundness on random instances") {
  // a digraph-feasible assignment (consistent copies) with xbar_e = D_ie x_i
  // and zeta = 0 satisfies the stacked constraints, and conversely
  std::mt19937 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (unsigned seed = 1; seed <= 15; ++seed) {
    QpOptions opts;
    opts.agents = 3;
    opts.edge_prob = 0.8;
    opts.seed = seed + 100;
    QpProblem qp = make_random_qp(opts);
    const StackedCoupling& c = qp.problem.coupling;
    if (c.row_dim() == 0) continue;

    Vector x = Vector::NullaryExpr(c.x_dim(), [&](Eigen::Index) { return gauss(rng); });
    // build xbar from the parent's selection, then force the child to agree
    Vector xbar = Vector::Zero(c.xbar_dim());
    for (int e = 0; e < c.edge_count(); ++e) {
      auto [j, i] = qp.problem.bipartite.edge_nodes[e];
      (void)i;
      const SelectorMatrix& Dp = qp.problem.selectors.at({j, e});
      xbar.segment(c.edge_col0[e], c.edge_dims[e]) = Dp.apply(c.agent_x(x, j));
    }
    // child side: overwrite selected entries of the child's variables so that
    // D_ie x_i = xbar_e as well (possible because selectors are unit rows)
    for (int e = 0; e < c.edge_count(); ++e) {
      auto [j, i] = qp.problem.bipartite.edge_nodes[e];
      (void)j;
      const SelectorMatrix& Dc = qp.problem.selectors.at({i, e});
      for (int r = 0; r < Dc.rows(); ++r) {
        for (int col = 0; col < Dc.cols(); ++col) {
          if (Dc.entries(r, col) == 1.0) {
            x[c.agent_col0[i] + col] = xbar[c.edge_col0[e] + r];
          }
        }
      }
    }
    // child overwrites can touch parent-selected entries of shared... they
    // cannot: selections are within each agent's own block.
    // re-derive xbar from the parent after the child pass? the child pass may
    // have changed a parent's block only if i == j, excluded by no-self-loops.
    Vector resid = c.A * x + c.B * xbar;  // zeta = 0
    // rows of edges where child entries collide across edges can deviate;
    // accept exact satisfaction when each child entry is selected once
    bool collision = false;
    {
      std::map<int, int> hits;
      for (const auto& blk : c.blocks) {
        const SelectorMatrix& d = qp.problem.selectors.at({blk.agent, blk.edge});
        for (int r = 0; r < d.rows(); ++r) {
          for (int col = 0; col < d.cols(); ++col) {
            if (d.entries(r, col) == 1.0 && ++hits[blk.agent_col0 + col] > 1) collision = true;
          }
        }
      }
    }
    if (!collision) {
      CHECK(resid.cwiseAbs().maxCoeff() == 0.0);
      // conversely: zero residual with zeta = 0 implies consistent selections
      for (int e = 0; e < c.edge_count(); ++e) {
        auto [j, i] = qp.problem.bipartite.edge_nodes[e];
        Vector pj = qp.problem.selectors.at({j, e}).apply(c.agent_x(x, j));
        Vector pi = qp.problem.selectors.at({i, e}).apply(c.agent_x(x, i));
        CHECK((pj - pi).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
}

TEST_CASE("validate_problem reports declaration defects") {
  QpOptions opts;
  opts.agents = 2;
  opts.edge_prob = 1.0;
  opts.seed = 5;
  QpProblem qp = make_random_qp(opts);
  CHECK(validate_problem(qp.problem).empty());

  // two-entry selector row
  auto key = qp.problem.selectors.begin()->first;
  SelectorMatrix& s = qp.problem.selectors[key];
  int extra = s.entries(0, 0) == 1.0 ? 1 : 0;
  s.entries(0, extra) = 1.0;
  auto diags = validate_problem(qp.problem);
  REQUIRE(!diags.empty());
  bool mentions = false;
  for (auto& d : diags) {
    if (d.find("agent " + std::to_string(key.first)) != std::string::npos &&
        d.find("edge " + std::to_string(key.second)) != std::string::npos) {
      mentions = true;
    }
  }
  CHECK(mentions);
  s.entries(0, extra) = 0.0;
  s.entries(0, 1 - extra) = 1.0;

  // missing interior declaration
  QpOptions bopts = opts;
  bopts.bounded = true;
  bopts.seed = 6;
  QpProblem bqp = make_random_qp(bopts);
  CHECK(validate_problem(bqp.problem).empty());
  bqp.problem.agents[0].strict_interior = Vector();
  auto diags2 = validate_problem(bqp.problem);
  REQUIRE(!diags2.empty());
  bool cites = false;
  for (auto& d : diags2) {
    if (d.find("Assumption 5") != std::string::npos) cites = true;
  }
  CHECK(cites);
}
