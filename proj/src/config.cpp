#include "ellada/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace ellada {

using nlohmann::json;

Variant RunConfig::variant() const {
  if (algo == "ell") return Variant::Ell;
  if (algo == "ella") return Variant::Ella;
  if (algo == "ellada") return Variant::Ellada;
  throw std::runtime_error("unknown algorithm '" + algo + "' (ell|ella|ellada)");
}

ToleranceSchedule RunConfig::effective_schedule() const {
  return schedule_overridden ? schedule : default_schedules(variant()).first;
}

BarrierSchedule RunConfig::effective_barrier() const {
  return schedule_overridden ? barrier : default_schedules(variant()).second;
}

namespace {

int line_of_offset(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where, const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::runtime_error(path + ": unknown key '" + where + it.key() + "'");
    }
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void get_vec(const json& j, const char* key, Vector& into) {
  if (!j.contains(key)) return;
  const auto& arr = j.at(key);
  into.resize(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) into[static_cast<int>(i)] = arr[i].get<double>();
}

}  // namespace

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& err) {
    throw std::runtime_error(path + ":" + std::to_string(line_of_offset(text, err.byte)) + ": " +
                             err.what());
  }

  RunConfig cfg;
  reject_unknown(doc,
                 {"problem", "algo", "out", "seed", "mode", "plot", "custom_file", "tank", "qp",
                  "solver", "schedule", "barrier", "anderson", "closed_loop"},
                 "", path);

  get_if(doc, "problem", cfg.problem);
  get_if(doc, "algo", cfg.algo);
  get_if(doc, "out", cfg.out_dir);
  get_if(doc, "seed", cfg.seed);
  get_if(doc, "plot", cfg.plot);
  get_if(doc, "custom_file", cfg.custom_file);
  if (doc.contains("mode")) {
    std::string mode = doc.at("mode").get<std::string>();
    if (mode == "sync") {
      cfg.staleness = 0;
    } else if (mode.rfind("async:", 0) == 0) {
      cfg.staleness = std::stoi(mode.substr(6));
    } else {
      throw std::runtime_error(path + ": mode must be 'sync' or 'async:<S>'");
    }
  }

  if (doc.contains("tank")) {
    const json& t = doc.at("tank");
    reject_unknown(t, {"horizon", "dt", "x0", "q", "r", "vmin", "vmax", "discretization"},
                   "tank.", path);
    get_if(t, "horizon", cfg.ocp.horizon);
    get_if(t, "dt", cfg.ocp.dt);
    get_vec(t, "x0", cfg.tank_x0);
    get_if(t, "q", cfg.ocp.q_state);
    get_if(t, "r", cfg.ocp.r_input);
    get_if(t, "vmin", cfg.ocp.v_min);
    get_if(t, "vmax", cfg.ocp.v_max);
    if (t.contains("discretization")) {
      std::string d = t.at("discretization").get<std::string>();
      if (d == "implicit_euler") {
        cfg.ocp.disc = Discretization::ImplicitEuler;
      } else if (d == "radau2") {
        cfg.ocp.disc = Discretization::Radau2;
      } else {
        throw std::runtime_error(path + ": tank.discretization must be implicit_euler|radau2");
      }
    }
  }

  if (doc.contains("qp")) {
    const json& q = doc.at("qp");
    reject_unknown(q, {"agents", "dim_min", "dim_max", "edge_prob", "overlap_min", "overlap_max",
                       "equalities_max", "bounded"},
                   "qp.", path);
    get_if(q, "agents", cfg.qp.agents);
    get_if(q, "dim_min", cfg.qp.dim_min);
    get_if(q, "dim_max", cfg.qp.dim_max);
    get_if(q, "edge_prob", cfg.qp.edge_prob);
    get_if(q, "overlap_min", cfg.qp.overlap_min);
    get_if(q, "overlap_max", cfg.qp.overlap_max);
    get_if(q, "equalities_max", cfg.qp.equalities_max);
    get_if(q, "bounded", cfg.qp.bounded);
  }

  if (doc.contains("solver")) {
    const json& s = doc.at("solver");
    reject_unknown(s,
                   {"beta_init", "lambda_init", "lambda_bound", "omega", "gamma", "max_outer",
                    "max_inner", "ell_nlp_tol", "ell_barrier", "check_invariants", "transport",
                    "parallel", "nlp_max_iterations"},
                   "solver.", path);
    get_if(s, "beta_init", cfg.solver.beta_init);
    get_if(s, "lambda_init", cfg.solver.lambda_init);
    if (s.contains("lambda_bound")) {
      double b = s.at("lambda_bound").get<double>();
      cfg.solver.lambda_hi = b;
      cfg.solver.lambda_lo = -b;
      cfg.lambda_bound_set = true;
    }
    get_if(s, "omega", cfg.solver.omega);
    get_if(s, "gamma", cfg.solver.gamma);
    get_if(s, "max_outer", cfg.solver.max_outer);
    get_if(s, "max_inner", cfg.solver.max_inner);
    get_if(s, "ell_nlp_tol", cfg.solver.ell_nlp_tol);
    get_if(s, "ell_barrier", cfg.solver.ell_barrier);
    get_if(s, "check_invariants", cfg.solver.check_invariants);
    get_if(s, "parallel", cfg.solver.runtime.parallel);
    get_if(s, "nlp_max_iterations", cfg.solver.runtime.nlp.max_iterations);
    if (s.contains("transport")) {
      std::string t = s.at("transport").get<std::string>();
      if (t == "inprocess") {
        cfg.solver.runtime.transport = TransportKind::InProcess;
      } else if (t == "socket") {
        cfg.solver.runtime.transport = TransportKind::LoopbackSocket;
      } else {
        throw std::runtime_error(path + ": solver.transport must be inprocess|socket");
      }
    }
  }

  if (doc.contains("schedule")) {
    const json& s = doc.at("schedule");
    reject_unknown(s, {"eps1_base", "eps2_base", "eps3_base", "eps4_base", "decay", "finals",
                       "pi_ratio", "inner_rule", "inner_coeff"},
                   "schedule.", path);
    cfg.schedule = default_schedules(cfg.variant()).first;
    cfg.barrier = default_schedules(cfg.variant()).second;
    cfg.schedule_overridden = true;
    get_if(s, "eps1_base", cfg.schedule.outer_base[0]);
    get_if(s, "eps2_base", cfg.schedule.outer_base[1]);
    get_if(s, "eps3_base", cfg.schedule.outer_base[2]);
    get_if(s, "eps4_base", cfg.schedule.outer_base[3]);
    get_if(s, "decay", cfg.schedule.outer_decay);
    get_if(s, "pi_ratio", cfg.schedule.pi_ratio);
    get_if(s, "inner_coeff", cfg.schedule.inner_coeff);
    if (s.contains("finals")) {
      const auto& f = s.at("finals");
      if (f.size() != 6) throw std::runtime_error(path + ": schedule.finals needs 6 entries");
      for (int i = 0; i < 6; ++i) cfg.schedule.final_tols[i] = f[i].get<double>();
    }
    if (s.contains("inner_rule")) {
      std::string r = s.at("inner_rule").get<std::string>();
      if (r == "quadratic") {
        cfg.schedule.inner_rule = ToleranceSchedule::InnerRule::Quadratic;
      } else if (r == "proportional") {
        cfg.schedule.inner_rule = ToleranceSchedule::InnerRule::Proportional;
      } else if (r == "fixed") {
        cfg.schedule.inner_rule = ToleranceSchedule::InnerRule::Fixed;
      } else {
        throw std::runtime_error(path +
                                 ": schedule.inner_rule must be quadratic|proportional|fixed");
      }
    }
  }

  if (doc.contains("barrier")) {
    const json& b = doc.at("barrier");
    reject_unknown(b, {"initial", "min", "max", "coeff", "fixed", "fixed_value"}, "barrier.",
                   path);
    if (!cfg.schedule_overridden) {
      cfg.schedule = default_schedules(cfg.variant()).first;
      cfg.barrier = default_schedules(cfg.variant()).second;
      cfg.schedule_overridden = true;
    }
    get_if(b, "initial", cfg.barrier.initial);
    get_if(b, "min", cfg.barrier.b_min);
    get_if(b, "max", cfg.barrier.b_max);
    get_if(b, "coeff", cfg.barrier.coeff);
    get_if(b, "fixed", cfg.barrier.fixed);
    get_if(b, "fixed_value", cfg.barrier.fixed_value);
  }

  if (doc.contains("anderson")) {
    const json& a = doc.at("anderson");
    reject_unknown(a, {"memory", "eta_theta", "eta_w", "eta_L", "eta_wtilde", "sigma",
                       "corrected_increase"},
                   "anderson.", path);
    get_if(a, "memory", cfg.anderson.memory_max);
    get_if(a, "eta_theta", cfg.anderson.eta_theta);
    get_if(a, "eta_w", cfg.anderson.eta_w);
    get_if(a, "eta_L", cfg.anderson.eta_L);
    get_if(a, "eta_wtilde", cfg.anderson.eta_wtilde);
    get_if(a, "sigma", cfg.anderson.sigma);
    get_if(a, "corrected_increase", cfg.anderson.corrected_increase_form);
  }

  if (doc.contains("closed_loop")) {
    const json& c = doc.at("closed_loop");
    reject_unknown(c, {"steps", "controller", "warm_start"}, "closed_loop.", path);
    get_if(c, "steps", cfg.closed_loop_steps);
    get_if(c, "controller", cfg.controller);
    get_if(c, "warm_start", cfg.warm_start);
  }

  cfg.variant();  // validates algo
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::runtime_error("override must be key=value");
  std::string key = assignment.substr(0, eq), val = assignment.substr(eq + 1);
  if (key == "solver.max_outer") cfg.solver.max_outer = std::stoi(val);
  else if (key == "solver.max_inner") cfg.solver.max_inner = std::stoi(val);
  else if (key == "solver.beta_init") cfg.solver.beta_init = std::stod(val);
  else if (key == "solver.check_invariants") cfg.solver.check_invariants = (val == "true" || val == "1");
  else if (key == "tank.horizon") cfg.ocp.horizon = std::stoi(val);
  else if (key == "tank.dt") cfg.ocp.dt = std::stod(val);
  else if (key == "qp.agents") cfg.qp.agents = std::stoi(val);
  else if (key == "qp.bounded") cfg.qp.bounded = (val == "true" || val == "1");
  else if (key == "closed_loop.steps") cfg.closed_loop_steps = std::stoi(val);
  else if (key == "closed_loop.controller") cfg.controller = val;
  else if (key == "closed_loop.warm_start") cfg.warm_start = (val == "true" || val == "1");
  else throw std::runtime_error("unsupported override key '" + key + "'");
}

std::string RunConfig::echo_json() const {
  json j;
  j["problem"] = problem;
  j["algo"] = algo;
  j["out"] = out_dir;
  j["seed"] = seed;
  j["mode"] = staleness == 0 ? "sync" : ("async:" + std::to_string(staleness));
  j["plot"] = plot;
  if (!custom_file.empty()) j["custom_file"] = custom_file;

  j["tank"]["horizon"] = ocp.horizon;
  j["tank"]["dt"] = ocp.dt;
  j["tank"]["x0"] = {tank_x0[0], tank_x0[1], tank_x0[2], tank_x0[3]};
  j["tank"]["q"] = ocp.q_state;
  j["tank"]["r"] = ocp.r_input;
  j["tank"]["vmin"] = ocp.v_min;
  j["tank"]["vmax"] = ocp.v_max;
  j["tank"]["discretization"] =
      ocp.disc == Discretization::ImplicitEuler ? "implicit_euler" : "radau2";

  j["qp"]["agents"] = qp.agents;
  j["qp"]["edge_prob"] = qp.edge_prob;
  j["qp"]["bounded"] = qp.bounded;

  j["solver"]["beta_init"] = solver.beta_init;
  j["solver"]["lambda_init"] = solver.lambda_init;
  j["solver"]["lambda_bound"] = solver.lambda_hi;
  j["solver"]["omega"] = solver.omega;
  j["solver"]["gamma"] = solver.gamma;
  j["solver"]["max_outer"] = solver.max_outer;
  j["solver"]["max_inner"] = solver.max_inner;
  j["solver"]["ell_nlp_tol"] = solver.ell_nlp_tol;
  j["solver"]["ell_barrier"] = solver.ell_barrier;
  j["solver"]["transport"] =
      solver.runtime.transport == TransportKind::InProcess ? "inprocess" : "socket";
  j["solver"]["parallel"] = solver.runtime.parallel;

  ToleranceSchedule ts = effective_schedule();
  j["schedule"]["eps1_base"] = ts.outer_base[0];
  j["schedule"]["eps2_base"] = ts.outer_base[1];
  j["schedule"]["eps3_base"] = ts.outer_base[2];
  j["schedule"]["eps4_base"] = ts.outer_base[3];
  j["schedule"]["decay"] = ts.outer_decay;
  j["schedule"]["finals"] = ts.final_tols;
  j["schedule"]["pi_ratio"] = ts.pi_ratio;
  j["schedule"]["inner_coeff"] = ts.inner_coeff;
  j["schedule"]["inner_rule"] = ts.inner_rule == ToleranceSchedule::InnerRule::Quadratic
                                    ? "quadratic"
                                    : (ts.inner_rule == ToleranceSchedule::InnerRule::Proportional
                                           ? "proportional"
                                           : "fixed");

  BarrierSchedule bs = effective_barrier();
  j["barrier"]["initial"] = bs.initial;
  j["barrier"]["min"] = bs.b_min;
  j["barrier"]["max"] = bs.b_max;
  j["barrier"]["coeff"] = bs.coeff;
  j["barrier"]["fixed"] = bs.fixed;
  j["barrier"]["fixed_value"] = bs.fixed_value;

  j["anderson"]["memory"] = anderson.memory_max;
  j["anderson"]["eta_theta"] = anderson.eta_theta;
  j["anderson"]["eta_w"] = anderson.eta_w;
  j["anderson"]["eta_L"] = anderson.eta_L;
  j["anderson"]["eta_wtilde"] = anderson.eta_wtilde;
  j["anderson"]["sigma"] = anderson.sigma;
  j["anderson"]["corrected_increase"] = anderson.corrected_increase_form;

  j["closed_loop"]["steps"] = closed_loop_steps;
  j["closed_loop"]["controller"] = controller;
  j["closed_loop"]["warm_start"] = warm_start;
  return j.dump(2) + "\n";
}

}  // namespace ellada
