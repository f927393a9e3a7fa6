#include "ellada/qp.hpp"

#include <json.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <memory>
#include <set>

namespace ellada {

namespace {

AgentSubproblem qp_subproblem(std::shared_ptr<const QpAgentData> d) {
  AgentSubproblem a;
  const int n = static_cast<int>(d->Q.rows());
  a.dim = n;
  a.f = [d](const Vector& x) { return 0.5 * x.dot(d->Q * x) + d->c.dot(x); };
  a.f_grad = [d](const Vector& x) { return (d->Q * x + d->c).eval(); };
  a.f_hess = [d](const Vector&) { return d->Q; };
  a.psi_count = static_cast<int>(d->E.rows());
  if (a.psi_count > 0) {
    a.psi = [d](const Vector& x) { return (d->E * x - d->e).eval(); };
    a.psi_jac = [d](const Vector&) { return d->E; };
    a.psi_hess_dot = [d, n](const Vector&, const Vector&) {
      return Matrix::Zero(n, n).eval();
    };
  }
  if (d->bounded()) {
    a.phi_count = 2 * n;
    a.phi = [d, n](const Vector& x) {
      Vector p(2 * n);
      p.head(n) = d->lo - x;
      p.tail(n) = x - d->hi;
      return p;
    };
    a.phi_jac = [d, n](const Vector&) {
      Matrix J(2 * n, n);
      J.topRows(n) = -Matrix::Identity(n, n);
      J.bottomRows(n) = Matrix::Identity(n, n);
      return J;
    };
    a.phi_hess_dot = [n](const Vector&, const Vector&) { return Matrix::Zero(n, n).eval(); };
    a.strict_interior = 0.5 * (d->lo + d->hi);
  }
  // convex with Q positive definite: bounded below by the unconstrained value
  a.f_lower = -0.5 * d->c.dot(d->Q.ldlt().solve(d->c)) - 1.0;
  a.has_f_lower = true;
  return a;
}

void finalize_qp(QpProblem& qp) {
  for (auto& d : qp.data) {
    qp.problem.agents.push_back(qp_subproblem(std::make_shared<QpAgentData>(d)));
  }
  qp.problem.finalize();
  // psi-feasible interior start; the descent clause of the NLP contract
  // presumes a feasible warm start
  qp.x0 = Vector::Zero(qp.problem.coupling.x_dim());
  for (int i = 0; i < qp.problem.agent_count(); ++i) {
    const QpAgentData& d = qp.data[i];
    int o = qp.problem.coupling.agent_col0[i];
    int n = static_cast<int>(d.Q.rows());
    Vector xi;
    if (d.anchor.size() == n) {
      xi = d.anchor;
    } else if (d.bounded()) {
      xi = 0.5 * (d.lo + d.hi);
    } else {
      xi = Vector::Zero(n);
    }
    if (d.E.rows() > 0 && d.anchor.size() != n) {
      Matrix EEt = d.E * d.E.transpose();
      EEt.diagonal().array() += 1e-12;
      xi += d.E.transpose() * EEt.ldlt().solve(d.e - d.E * xi);
    }
    qp.x0.segment(o, n) = xi;
  }
}

}  // namespace

QpProblem make_random_qp(const QpOptions& opts) {
  std::mt19937 rng(opts.seed);
  std::uniform_int_distribution<int> dim_dist(opts.dim_min, opts.dim_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  QpProblem qp;
  qp.problem.digraph.node_count = opts.agents;

  std::vector<int> dims(opts.agents);
  for (int i = 0; i < opts.agents; ++i) {
    int n = dim_dist(rng);
    dims[i] = n;
    QpAgentData d;
    Matrix Arand(n, n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) Arand(r, c) = gauss(rng);
    }
    d.Q = Arand.transpose() * Arand + Matrix::Identity(n, n);
    d.c = Vector::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); });
    if (opts.bounded) {
      d.lo = Vector::Constant(n, -5.0);
      d.hi = Vector::Constant(n, 5.0);
    }
    int n_eq = std::min(n - 1, static_cast<int>(unit(rng) * (opts.equalities_max + 1)));
    if (n_eq > 0) {
      // anchor the equalities at a known (interior) point so a feasible
      // strictly-interior start always exists
      Vector anchor = Vector::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); });
      if (opts.bounded) anchor = anchor.cwiseMax(0.8 * d.lo).cwiseMin(0.8 * d.hi);
      d.E = Matrix::NullaryExpr(n_eq, n, [&](Eigen::Index, Eigen::Index) { return gauss(rng); });
      d.e = d.E * anchor;
      d.anchor = anchor;
    } else {
      d.E = Matrix(0, n);
      d.e = Vector(0);
    }
    qp.data.push_back(std::move(d));
  }

  std::uniform_int_distribution<int> ov_dist(opts.overlap_min, opts.overlap_max);
  for (int j = 0; j < opts.agents; ++j) {
    for (int i = 0; i < opts.agents; ++i) {
      if (i == j || unit(rng) > opts.edge_prob) continue;
      qp.problem.digraph.edges.emplace_back(j, i);
    }
  }
  // selectors per bipartite edge, after the canonical edge ordering is known
  BipartiteStructure bip = build_bipartite(qp.problem.digraph);
  for (int e = 0; e < static_cast<int>(bip.edge_nodes.size()); ++e) {
    auto [j, i] = bip.edge_nodes[e];
    int dim_ov = std::min({ov_dist(rng), dims[j], dims[i]});
    auto pick_rows = [&](int n) {
      std::vector<int> all(n);
      for (int k = 0; k < n; ++k) all[k] = k;
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(dim_ov);
      return all;
    };
    qp.problem.selectors[{j, e}] = SelectorMatrix::pick(dims[j], pick_rows(dims[j]));
    qp.problem.selectors[{i, e}] = SelectorMatrix::pick(dims[i], pick_rows(dims[i]));
  }

  finalize_qp(qp);
  return qp;
}

Vector solve_qp_monolithic(const QpProblem& qp) {
  const StackedCoupling& c = qp.problem.coupling;
  const int n = c.x_dim();
  for (const auto& d : qp.data) {
    if (d.bounded()) throw std::invalid_argument("monolithic KKT oracle handles equality-only QPs");
  }

  int n_con = 0;
  for (const auto& d : qp.data) n_con += static_cast<int>(d.E.rows());
  for (int e = 0; e < c.edge_count(); ++e) n_con += c.edge_dims[e];

  Matrix Q = Matrix::Zero(n, n);
  Vector cc = Vector::Zero(n);
  for (int i = 0; i < qp.problem.agent_count(); ++i) {
    int o = c.agent_col0[i], d = c.agent_dims[i];
    Q.block(o, o, d, d) = qp.data[i].Q;
    cc.segment(o, d) = qp.data[i].c;
  }

  Matrix C = Matrix::Zero(n_con, n);
  Vector rhs = Vector::Zero(n_con);
  int row = 0;
  for (int i = 0; i < qp.problem.agent_count(); ++i) {
    int m = static_cast<int>(qp.data[i].E.rows());
    if (m > 0) {
      C.block(row, c.agent_col0[i], m, c.agent_dims[i]) = qp.data[i].E;
      rhs.segment(row, m) = qp.data[i].e;
      row += m;
    }
  }
  // per edge: D_parent x_parent - D_child x_child = 0
  for (int e = 0; e < c.edge_count(); ++e) {
    auto [j, i] = qp.problem.bipartite.edge_nodes[e];
    const SelectorMatrix& Dp = qp.problem.selectors.at({j, e});
    const SelectorMatrix& Dc = qp.problem.selectors.at({i, e});
    C.block(row, c.agent_col0[j], Dp.rows(), Dp.cols()) = Dp.entries;
    C.block(row, c.agent_col0[i], Dc.rows(), Dc.cols()) -= Dc.entries;
    row += Dp.rows();
  }

  Matrix K = Matrix::Zero(n + n_con, n + n_con);
  K.topLeftCorner(n, n) = Q;
  K.topRightCorner(n, n_con) = C.transpose();
  K.bottomLeftCorner(n_con, n) = C;
  Vector b(n + n_con);
  b.head(n) = -cc;
  b.tail(n_con) = rhs;
  return Eigen::PartialPivLU<Matrix>(K).solve(b).head(n);
}

QpProblem load_qp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw std::runtime_error(path + ": " + err.what());
  }

  auto require = [&](const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw std::runtime_error(path + ": missing '" + key + "' in " + where);
    return j.at(key);
  };
  auto to_vec = [](const nlohmann::json& j) {
    Vector v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
    return v;
  };
  auto to_mat = [](const nlohmann::json& j) {
    if (j.empty()) return Matrix(0, 0);
    Matrix m(j.size(), j[0].size());
    for (std::size_t r = 0; r < j.size(); ++r) {
      for (std::size_t c = 0; c < j[r].size(); ++c) {
        m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
      }
    }
    return m;
  };

  QpProblem qp;
  const auto& agents = require(doc, "agents", "document");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& ja = agents[i];
    std::string where = "agents[" + std::to_string(i) + "]";
    QpAgentData d;
    d.Q = to_mat(require(ja, "Q", where));
    d.c = to_vec(require(ja, "c", where));
    if (ja.contains("E")) {
      d.E = to_mat(ja.at("E"));
      d.e = to_vec(require(ja, "e", where));
    } else {
      d.E = Matrix(0, d.Q.rows());
      d.e = Vector(0);
    }
    if (ja.contains("lo")) {
      d.lo = to_vec(ja.at("lo"));
      d.hi = to_vec(require(ja, "hi", where));
    }
    qp.data.push_back(std::move(d));
  }
  qp.problem.digraph.node_count = static_cast<int>(agents.size());

  std::vector<std::array<std::vector<int>, 2>> edge_picks;
  if (doc.contains("edges")) {
    for (const auto& je : doc.at("edges")) {
      int parent = require(je, "parent", "edge").get<int>();
      int child = require(je, "child", "edge").get<int>();
      qp.problem.digraph.edges.emplace_back(parent, child);
      std::array<std::vector<int>, 2> picks;
      picks[0] = require(je, "parent_vars", "edge").get<std::vector<int>>();
      picks[1] = require(je, "child_vars", "edge").get<std::vector<int>>();
      edge_picks.push_back(picks);
    }
  }
  BipartiteStructure bip = build_bipartite(qp.problem.digraph);
  for (std::size_t k = 0; k < qp.problem.digraph.edges.size(); ++k) {
    auto [j, i] = qp.problem.digraph.edges[k];
    int e = bip.edge_index(j, i);
    qp.problem.selectors[{j, e}] =
        SelectorMatrix::pick(static_cast<int>(qp.data[j].Q.rows()), edge_picks[k][0]);
    qp.problem.selectors[{i, e}] =
        SelectorMatrix::pick(static_cast<int>(qp.data[i].Q.rows()), edge_picks[k][1]);
  }

  finalize_qp(qp);
  return qp;
}

}  // namespace ellada
