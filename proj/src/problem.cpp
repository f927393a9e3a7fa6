#include "ellada/problem.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace ellada {

void Digraph::validate() const {
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    if (e.first == e.second) {
      throw StructuralError("digraph has a self-loop at node " + std::to_string(e.first));
    }
    if (e.first < 0 || e.first >= node_count || e.second < 0 || e.second >= node_count) {
      throw StructuralError("digraph edge (" + std::to_string(e.first) + "," +
                            std::to_string(e.second) + ") references an undeclared node");
    }
    if (!seen.insert(e).second) {
      throw StructuralError("duplicate digraph edge (" + std::to_string(e.first) + "," +
                            std::to_string(e.second) + ")");
    }
  }
}

int BipartiteStructure::edge_index(int src, int dst) const {
  auto it = std::lower_bound(edge_nodes.begin(), edge_nodes.end(), std::make_pair(src, dst));
  if (it == edge_nodes.end() || *it != std::make_pair(src, dst)) {
    throw StructuralError("unknown digraph edge (" + std::to_string(src) + "," +
                          std::to_string(dst) + ")");
  }
  return static_cast<int>(it - edge_nodes.begin());
}

BipartiteStructure build_bipartite(const Digraph& g) {
  g.validate();
  BipartiteStructure bip;
  bip.agent_count = g.node_count;
  bip.edge_nodes = g.edges;
  std::sort(bip.edge_nodes.begin(), bip.edge_nodes.end());
  for (int e = 0; e < static_cast<int>(bip.edge_nodes.size()); ++e) {
    bip.bipartite_edges.emplace_back(bip.edge_nodes[e].first, e);   // parent side
    bip.bipartite_edges.emplace_back(bip.edge_nodes[e].second, e);  // child side
  }
  std::sort(bip.bipartite_edges.begin(), bip.bipartite_edges.end());
  return bip;
}

bool SelectorMatrix::valid() const {
  if (rows() == 0 || cols() == 0) return false;
  for (int r = 0; r < rows(); ++r) {
    int units = 0;
    for (int c = 0; c < cols(); ++c) {
      double v = entries(r, c);
      if (v == 1.0) {
        ++units;
      } else if (v != 0.0) {
        return false;
      }
    }
    if (units != 1) return false;
  }
  return true;
}

SelectorMatrix SelectorMatrix::pick(int cols, const std::vector<int>& picks) {
  SelectorMatrix s;
  s.entries = Matrix::Zero(static_cast<int>(picks.size()), cols);
  for (size_t r = 0; r < picks.size(); ++r) s.entries(static_cast<int>(r), picks[r]) = 1.0;
  return s;
}

std::pair<int, int> StackedCoupling::agent_row_range(int agent) const {
  int row0 = -1, rows = 0;
  for (const auto& b : blocks) {
    if (b.agent == agent) {
      if (row0 < 0) row0 = b.row0;
      rows += b.rows;
    }
  }
  return {row0 < 0 ? 0 : row0, rows};
}

StackedCoupling assemble_coupling(
    const BipartiteStructure& bip,
    const std::map<std::pair<int, int>, SelectorMatrix>& selectors,
    const std::vector<int>& agent_dims) {
  if (static_cast<int>(agent_dims.size()) != bip.agent_count) {
    throw StructuralError("agent dimension list does not match agent count");
  }

  StackedCoupling c;
  c.agent_dims = agent_dims;
  c.agent_col0.resize(agent_dims.size());
  int xcols = 0;
  for (size_t i = 0; i < agent_dims.size(); ++i) {
    c.agent_col0[i] = xcols;
    xcols += agent_dims[i];
  }

  const int n_edges = static_cast<int>(bip.edge_nodes.size());
  c.edge_dims.assign(n_edges, -1);
  c.edge_col0.assign(n_edges, 0);

  // First pass: establish overlap dimensions and check the selectors.
  for (const auto& be : bip.bipartite_edges) {
    auto it = selectors.find(be);
    if (it == selectors.end()) {
      throw StructuralError("missing selector for bipartite edge (agent " +
                            std::to_string(be.first) + ", edge " + std::to_string(be.second) + ")");
    }
    const SelectorMatrix& d = it->second;
    if (d.cols() != agent_dims[be.first]) {
      throw StructuralError("selector columns (" + std::to_string(d.cols()) +
                            ") do not match agent " + std::to_string(be.first) + " dimension (" +
                            std::to_string(agent_dims[be.first]) + ")");
    }
    int& dim = c.edge_dims[be.second];
    if (dim < 0) {
      dim = d.rows();
    } else if (dim != d.rows()) {
      throw StructuralError("incident selectors of edge " + std::to_string(be.second) +
                            " disagree on overlap dimension");
    }
  }
  int xbarcols = 0;
  for (int e = 0; e < n_edges; ++e) {
    c.edge_col0[e] = xbarcols;
    xbarcols += c.edge_dims[e];
  }

  // Second pass: stack row blocks in the canonical (agent, edge) ordering.
  int rows = 0;
  for (const auto& be : bip.bipartite_edges) rows += c.edge_dims[be.second];
  c.A = Matrix::Zero(rows, xcols);
  c.B = Matrix::Zero(rows, xbarcols);
  int row0 = 0;
  for (const auto& be : bip.bipartite_edges) {
    const SelectorMatrix& d = selectors.at(be);
    CouplingBlock blk;
    blk.agent = be.first;
    blk.edge = be.second;
    blk.row0 = row0;
    blk.rows = d.rows();
    blk.agent_col0 = c.agent_col0[be.first];
    blk.edge_col0 = c.edge_col0[be.second];
    c.A.block(row0, blk.agent_col0, d.rows(), d.cols()) = d.entries;
    for (int r = 0; r < d.rows(); ++r) c.B(row0 + r, blk.edge_col0 + r) = -1.0;
    c.blocks.push_back(blk);
    row0 += d.rows();
  }
  return c;
}

double DistributedProblem::f_total(const Vector& x_stacked) const {
  double s = 0.0;
  for (int i = 0; i < agent_count(); ++i) s += agents[i].f(coupling.agent_x(x_stacked, i));
  return s;
}

double DistributedProblem::log_barrier_sum(const Vector& x_stacked) const {
  double s = 0.0;
  for (int i = 0; i < agent_count(); ++i) {
    if (agents[i].phi_count == 0) continue;
    Vector ph = agents[i].phi(coupling.agent_x(x_stacked, i));
    for (int cidx = 0; cidx < ph.size(); ++cidx) {
      if (ph[cidx] >= 0.0) {
        throw std::domain_error("log barrier evaluated at a point with phi_" +
                                std::to_string(cidx) + " = " + std::to_string(ph[cidx]) +
                                " >= 0 (agent " + std::to_string(i) + ")");
      }
      s += std::log(-ph[cidx]);
    }
  }
  return s;
}

void DistributedProblem::finalize() {
  bipartite = build_bipartite(digraph);
  std::vector<int> dims;
  dims.reserve(agents.size());
  for (const auto& a : agents) dims.push_back(a.dim);
  coupling = assemble_coupling(bipartite, selectors, dims);
}

std::vector<std::string> validate_problem(const DistributedProblem& p) {
  std::vector<std::string> diags;
  auto note = [&](const std::string& s) { diags.push_back(s); };

  for (int i = 0; i < p.agent_count(); ++i) {
    const AgentSubproblem& a = p.agents[i];
    std::string who = "agent " + std::to_string(i);
    if (a.dim <= 0) note(who + ": nonpositive variable dimension");
    if (!a.f || !a.f_grad) note(who + ": missing objective or gradient evaluator");
    if (a.phi_count > 0) {
      if (!a.phi || !a.phi_jac) {
        note(who + ": inequality map or Jacobian missing");
      } else if (a.strict_interior.size() != a.dim) {
        note(who + ": no declared strictly feasible point (Assumption 5 interior)");
      } else {
        Vector ph = a.phi(a.strict_interior);
        for (int c = 0; c < ph.size(); ++c) {
          if (!(ph[c] < 0.0)) {
            note(who + ": declared interior point has phi_" + std::to_string(c) +
                 " = " + std::to_string(ph[c]) + " >= 0 (Assumption 5)");
          }
        }
      }
    }
    if (a.psi_count > 0 && (!a.psi || !a.psi_jac)) note(who + ": equality map or Jacobian missing");
    if (!a.has_f_lower) note(who + ": no declared lower bound for f (Assumption 1)");
  }

  for (const auto& [key, sel] : p.selectors) {
    if (!sel.valid()) {
      std::ostringstream os;
      os << "selector at (agent " << key.first << ", edge " << key.second
         << ") violates the one-unit-entry-per-row pattern";
      note(os.str());
    }
  }

  // BtB = 2I whenever a coupling is assembled
  if (p.coupling.row_dim() > 0) {
    Matrix btb = p.coupling.B.transpose() * p.coupling.B;
    double err = (btb - 2.0 * Matrix::Identity(btb.rows(), btb.cols())).cwiseAbs().maxCoeff();
    if (err > 1e-12) note("assembled coupling violates BtB = 2I (max dev " + std::to_string(err) + ")");
  }
  return diags;
}

}  // namespace ellada
