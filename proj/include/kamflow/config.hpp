#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "biasymptotic.hpp"
#include "errors.hpp"
#include "hamiltonian.hpp"
#include "torus_solver.hpp"

namespace kamflow {

using json = nlohmann::json;

struct Target {
  Eigen::VectorXd q, p;
};

struct RunConfig {
  json model_spec;  // explicit form, presets expanded
  ModelPtr model;
  std::string mode;  // "integrable" | "near-integrable"
  SolverOptions solver;
  double flow_tol = 1e-10;
  InversionOptions inversion;
  double parameter_spacing = 0.25;
  std::vector<Eigen::VectorXd> parameter_points;  // explicit list; empty: lattice
  std::vector<Target> targets;
  double glue_t_max = 1000;
  int glue_points = 41;
  double flow_window = 20;
  std::size_t coverage_samples = 10000;
  std::size_t verify_coverage_samples = 10000;
  int verify_alternate_threads = 2;
  std::uint64_t seed = 1;

  std::vector<Eigen::VectorXd> parameters() const {
    if (!parameter_points.empty()) return parameter_points;
    return parameter_lattice(*model, parameter_spacing, solver.delta);
  }
};

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key \"" + k + "\"");
}

template <class T>
T get_or(const json& obj, const std::string& key, T def, const std::string& where) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline Eigen::VectorXd vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected an array of numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline json fourier_json(const std::vector<int>& k, double c, double s) { return {{"k", k}, {"cos", c}, {"sin", s}}; }
inline json monomial_json(double c, const std::vector<int>& e) { return {{"coef", c}, {"pow", e}}; }
inline std::vector<int> unit(int n, int a, int v) {
  std::vector<int> e(n, 0);
  e[a] = v;
  return e;
}

/// Explicit description of the named models (same content as the C++ constructors).
inline json expand_preset(const json& m) {
  check_keys(m, {"preset", "eps", "l", "n", "mu0", "hole_center"}, "model");
  const std::string name = m.at("preset").get<std::string>();
  const double eps = get_or(m, "eps", 1e-3, "model");
  const double l = get_or(m, "l", 2.0, "model");
  const int n = get_or(m, "n", 1, "model");
  if (n < 1) throw ConfigError("model.n: must be >= 1");
  json h = json::array();
  for (int a = 0; a < n; ++a) h.push_back(monomial_json(0.5, unit(n, a, 2)));
  json modes = json::array();
  const json ref_mode = {{"fourier", json::array({fourier_json(unit(n, 0, 1), eps, 0.0)})},
                         {"P", json::array({monomial_json(1.0, unit(n, 0, 1))})},
                         {"decay", {{"kind", "poly"}, {"rate", 4.0}}}};
  json remainder = json::array(), holes = json::array();
  if (name == "reference") {
    modes.push_back(ref_mode);
  } else if (name == "free") {
  } else if (name == "saturating") {
    modes.push_back(ref_mode);
    modes.push_back({{"fourier", json::array({fourier_json(std::vector<int>(n, 0), eps, 0.0)})},
                     {"P", json::array({monomial_json(1.0, unit(n, 0, 1))})},
                     {"decay", {{"kind", "poly"}, {"rate", l + 1.0}}}});
  } else if (name == "holed") {
    modes.push_back(ref_mode);
    const double mu0 = get_or(m, "mu0", 0.02, "model");
    const double c = get_or(m, "hole_center", 0.3, "model");
    const double r = std::pow(mu0, 1.0 / n);
    std::vector<double> center(n, 0.0);
    center[0] = c;
    holes.push_back({{"center", center}, {"radius", r}});
    remainder.push_back({{"fourier", json::array({fourier_json(unit(n, 0, 1), 1.0, 0.0)})},
                         {"center", center},
                         {"radius", 0.5 * r},
                         {"amplitude", eps}});
  } else {
    throw ConfigError("model.preset: unknown preset \"" + name + "\" (reference, saturating, holed, free)");
  }
  return {{"n", n},         {"h", h},          {"modes", modes}, {"remainder", remainder}, {"holes", holes},
          {"l", l},         {"eps", eps},      {"upsilon", 1.0}, {"sigma", 1.0}};
}

inline Polynomial polynomial_from(const json& j, int n, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of monomials");
  std::vector<Monomial> terms;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    check_keys(j[i], {"coef", "pow"}, w);
    Monomial t;
    t.coef = j[i].at("coef").get<double>();
    t.pow = j[i].at("pow").get<std::vector<int>>();
    if (static_cast<int>(t.pow.size()) != n) throw ConfigError(w + ".pow: length must equal n");
    terms.push_back(t);
  }
  try {
    return Polynomial(n, terms);
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline TorusFun fourier_from(const json& j, int n, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty array of Fourier terms");
  int K = 0;
  for (const auto& t : j)
    for (int k : t.at("k").get<std::vector<int>>()) K = std::max(K, std::abs(k));
  TorusFun G(n, 1, K);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    check_keys(j[i], {"k", "cos", "sin"}, w);
    const auto k = j[i].at("k").get<std::vector<int>>();
    if (static_cast<int>(k.size()) != n) throw ConfigError(w + ".k: length must equal n");
    G.add_real_mode(k, 0, get_or(j[i], "cos", 0.0, w), get_or(j[i], "sin", 0.0, w));
  }
  return G;
}

inline HamiltonianModel model_from(const json& m) {
  check_keys(m, {"n", "h", "modes", "remainder", "holes", "l", "eps", "upsilon", "sigma"}, "model");
  HamiltonianModel M;
  M.n = m.at("n").get<int>();
  if (M.n < 1) throw ConfigError("model.n: must be >= 1");
  M.h = polynomial_from(m.at("h"), M.n, "model.h");
  const json modes = m.value("modes", json::array());
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const std::string w = "model.modes[" + std::to_string(i) + "]";
    check_keys(modes[i], {"fourier", "P", "decay"}, w);
    PerturbationMode pm;
    pm.G = fourier_from(modes[i].at("fourier"), M.n, w + ".fourier");
    pm.P = polynomial_from(modes[i].at("P"), M.n, w + ".P");
    const json& d = modes[i].at("decay");
    check_keys(d, {"kind", "rate"}, w + ".decay");
    const std::string kind = d.at("kind").get<std::string>();
    if (kind != "poly" && kind != "exp") throw ConfigError(w + ".decay.kind: expected \"poly\" or \"exp\"");
    pm.w = {kind == "poly" ? DecayProfile::Kind::poly : DecayProfile::Kind::exp, d.at("rate").get<double>()};
    M.modes.push_back(pm);
  }
  const json rem = m.value("remainder", json::array());
  for (std::size_t i = 0; i < rem.size(); ++i) {
    const std::string w = "model.remainder[" + std::to_string(i) + "]";
    check_keys(rem[i], {"fourier", "center", "radius", "amplitude"}, w);
    M.remainder.push_back({fourier_from(rem[i].at("fourier"), M.n, w + ".fourier"), vec(rem[i].at("center"), w + ".center"),
                           rem[i].at("radius").get<double>(), rem[i].at("amplitude").get<double>()});
  }
  const json holes = m.value("holes", json::array());
  for (std::size_t i = 0; i < holes.size(); ++i) {
    const std::string w = "model.holes[" + std::to_string(i) + "]";
    check_keys(holes[i], {"center", "radius"}, w);
    M.holes.push_back({vec(holes[i].at("center"), w + ".center"), holes[i].at("radius").get<double>()});
  }
  M.l = get_or(m, "l", 2.0, "model");
  M.eps = get_or(m, "eps", 1e-3, "model");
  M.upsilon = get_or(m, "upsilon", 1.0, "model");
  M.sigma = get_or(m, "sigma", 1.0, "model");
  try {
    M.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return M;
}

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

/// Parses a run configuration. Unknown keys and malformed JSON are ConfigErrors; parse
/// errors carry source:line:column.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
  using detail::check_keys;
  using detail::get_or;
  try {
    check_keys(j, {"model", "mode", "numerics", "parameters", "glue", "coverage", "verify", "seed"}, "config");
    RunConfig c;
    if (!j.contains("model")) throw ConfigError("config: missing \"model\"");
    c.model_spec = j.at("model").contains("preset") ? detail::expand_preset(j.at("model")) : j.at("model");
    c.model = std::make_shared<const HamiltonianModel>(detail::model_from(c.model_spec));
    const std::string implied = c.model->near_integrable() ? "near-integrable" : "integrable";
    c.mode = get_or<std::string>(j, "mode", implied, "config");
    if (c.mode != "integrable" && c.mode != "near-integrable")
      throw ConfigError("config.mode: expected \"integrable\" or \"near-integrable\"");
    if (c.mode != implied)
      throw ConfigError("config.mode: \"" + c.mode + "\" disagrees with the model (" + implied +
                        ": holes or remainder terms decide)");

    const json num = j.value("numerics", json::object());
    check_keys(num, {"K", "rho", "tail_budget", "min_horizon", "tol", "max_iter", "divergence_ratio", "delta",
                     "flow_tol", "inversion_tol", "inversion_max_iter"},
               "numerics");
    c.solver.K = get_or(num, "K", c.solver.K, "numerics");
    c.solver.grid.rho = get_or(num, "rho", c.solver.grid.rho, "numerics");
    c.solver.grid.tail_budget = get_or(num, "tail_budget", c.solver.grid.tail_budget, "numerics");
    c.solver.grid.min_horizon = get_or(num, "min_horizon", c.solver.grid.min_horizon, "numerics");
    c.solver.tol = get_or(num, "tol", c.solver.tol, "numerics");
    c.solver.max_iter = get_or(num, "max_iter", c.solver.max_iter, "numerics");
    c.solver.divergence_ratio = get_or(num, "divergence_ratio", c.solver.divergence_ratio, "numerics");
    c.solver.delta = get_or(num, "delta", c.solver.delta, "numerics");
    c.flow_tol = get_or(num, "flow_tol", c.flow_tol, "numerics");
    c.inversion.tol = get_or(num, "inversion_tol", c.inversion.tol, "numerics");
    c.inversion.max_iter = get_or(num, "inversion_max_iter", c.inversion.max_iter, "numerics");
    if (c.solver.K < 0) throw ConfigError("numerics.K: must be >= 0");
    if (!(c.solver.grid.rho > 0)) throw ConfigError("numerics.rho: must be positive");
    if (c.solver.max_iter < 1) throw ConfigError("numerics.max_iter: must be >= 1");

    const json par = j.value("parameters", json::object());
    check_keys(par, {"spacing", "points"}, "parameters");
    c.parameter_spacing = get_or(par, "spacing", c.parameter_spacing, "parameters");
    if (par.contains("points"))
      for (std::size_t i = 0; i < par.at("points").size(); ++i) {
        auto p = detail::vec(par.at("points")[i], "parameters.points[" + std::to_string(i) + "]");
        if (p.size() != c.model->n) throw ConfigError("parameters.points: length must equal n");
        c.parameter_points.push_back(p);
      }
    if (!(c.parameter_spacing > 0)) throw ConfigError("parameters.spacing: must be positive");

    const json gl = j.value("glue", json::object());
    check_keys(gl, {"targets", "t_max", "points", "flow_window"}, "glue");
    c.glue_t_max = get_or(gl, "t_max", c.glue_t_max, "glue");
    c.glue_points = get_or(gl, "points", c.glue_points, "glue");
    c.flow_window = get_or(gl, "flow_window", c.flow_window, "glue");
    if (gl.contains("targets"))
      for (std::size_t i = 0; i < gl.at("targets").size(); ++i) {
        const std::string w = "glue.targets[" + std::to_string(i) + "]";
        check_keys(gl.at("targets")[i], {"q", "p"}, w);
        Target t{detail::vec(gl.at("targets")[i].at("q"), w + ".q"), detail::vec(gl.at("targets")[i].at("p"), w + ".p")};
        if (t.q.size() != c.model->n || t.p.size() != c.model->n) throw ConfigError(w + ": length must equal n");
        c.targets.push_back(t);
      }

    const json cov = j.value("coverage", json::object());
    check_keys(cov, {"samples"}, "coverage");
    c.coverage_samples = get_or(cov, "samples", c.coverage_samples, "coverage");

    const json ver = j.value("verify", json::object());
    check_keys(ver, {"coverage_samples", "alternate_threads"}, "verify");
    c.verify_coverage_samples = get_or(ver, "coverage_samples", c.verify_coverage_samples, "verify");
    c.verify_alternate_threads = get_or(ver, "alternate_threads", c.verify_alternate_threads, "verify");
    c.seed = get_or(j, "seed", c.seed, "config");
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

/// Every setting with its effective value; parse_config(resolved(c).dump()) reproduces c.
inline json resolved(const RunConfig& c) {
  json targets = json::array();
  for (const auto& t : c.targets)
    targets.push_back({{"q", std::vector<double>(t.q.data(), t.q.data() + t.q.size())},
                       {"p", std::vector<double>(t.p.data(), t.p.data() + t.p.size())}});
  json params = {{"spacing", c.parameter_spacing}};
  if (!c.parameter_points.empty()) {
    json pts = json::array();
    for (const auto& p : c.parameter_points) pts.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    params["points"] = pts;
  }
  return {{"model", c.model_spec},
          {"mode", c.mode},
          {"numerics",
           {{"K", c.solver.K},
            {"rho", c.solver.grid.rho},
            {"tail_budget", c.solver.grid.tail_budget},
            {"min_horizon", c.solver.grid.min_horizon},
            {"tol", c.solver.tol},
            {"max_iter", c.solver.max_iter},
            {"divergence_ratio", c.solver.divergence_ratio},
            {"delta", c.solver.delta},
            {"flow_tol", c.flow_tol},
            {"inversion_tol", c.inversion.tol},
            {"inversion_max_iter", c.inversion.max_iter}}},
          {"parameters", params},
          {"glue", {{"targets", targets}, {"t_max", c.glue_t_max}, {"points", c.glue_points}, {"flow_window", c.flow_window}}},
          {"coverage", {{"samples", c.coverage_samples}}},
          {"verify", {{"coverage_samples", c.verify_coverage_samples}, {"alternate_threads", c.verify_alternate_threads}}},
          {"seed", c.seed}};
}

}  // namespace kamflow
