#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kamflow/acceptance.hpp"
#include "kamflow/biasymptotic.hpp"
#include "kamflow/config.hpp"
#include "kamflow/norm_suite.hpp"
#include "kamflow/torus_solver.hpp"

namespace fs = std::filesystem;
using namespace kamflow;

namespace {

constexpr int kOk = 0, kConfigError = 1, kPartial = 2;

struct Common {
  std::string config, out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string targets;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  f << j.dump(2) << '\n';
}

// shortest representation that reads back to the same double
std::string shortest(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::string joined(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ";" : "") + shortest(v[i]);
  return s;
}

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::string quoted(const std::string& s) {
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// CSV number; NaN is an empty field
std::string num(double x) {
  return std::isfinite(x) ? shortest(x) : "";
}

class Csv {
 public:
  Csv(const fs::path& path, const std::string& schema, const std::string& header) : f_(path) {
    f_ << "# schema: " << schema << '\n' << header << '\n';
  }
  template <class... T>
  void row(const T&... fields) {
    std::size_t i = 0;
    ((f_ << (i++ ? "," : "") << fields), ...);
    f_ << '\n';
  }

 private:
  std::ofstream f_;
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_config(R"({"model": {"preset": "reference"}})") : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path prepare(const Common& c, const RunConfig* cfg) {
  const fs::path out(c.out);
  fs::create_directories(out);
  if (cfg) write_json(out / "resolved_config.json", resolved(*cfg));
  return out;
}

json torusfun_json(const TorusFun& f) {
  json modes = json::array();
  std::vector<int> k(f.dim());
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    json comps = json::array();
    bool any = false;
    for (int c = 0; c < f.range(); ++c) {
      const auto z = f.coeff(i, c);
      comps.push_back({z.real(), z.imag()});
      any = any || z != cplx(0.0);
    }
    if (!any) continue;
    f.mode_of(i, k);
    modes.push_back({{"k", k}, {"c", comps}});
  }
  return modes;
}

json correction_json(const TorusSolveRecord& r, Branch b) {
  json j = {{"schema", "kamflow.correction/1"}, {"branch", name_of(b)}, {"p0", as_vector(r.p0)},
            {"converged", r.converged}};
  if (!r.converged) {
    j["condition"] = r.condition;
    j["message"] = r.failure;
    return j;
  }
  j["omega"] = as_vector(r.omega);
  j["iterations"] = r.chord.iterations;
  j["residuals"] = r.chord.residuals;
  json nodes = json::array();
  for (std::size_t i = 0; i < r.grid->size(); ++i)
    nodes.push_back({{"t", r.grid->t(i)}, {"u", torusfun_json(r.chord.corr.u.slices[i])}, {"v", torusfun_json(r.chord.corr.v.slices[i])}});
  j["nodes"] = nodes;
  return j;
}

std::pair<AsymptoticTorusFamily, AsymptoticTorusFamily> solve_both(const RunConfig& cfg) {
  const auto params = cfg.parameters();
  if (params.empty()) throw ConfigError("parameters: the grid is empty");
  return {solve_family(cfg.model, params, Branch::plus, cfg.solver), solve_family(cfg.model, params, Branch::minus, cfg.solver)};
}

// ---------------------------------------------------------------------------

int cmd_solve(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path out = prepare(c, &cfg);
  fs::create_directories(out / "corrections");
  auto [plus, minus] = solve_both(cfg);
  json branches = json::object();
  bool all = true;
  for (const auto* fam : {&plus, &minus}) {
    const std::string bn = name_of(fam->branch);
    Csv csv(out / ("residuals_" + bn + ".csv"), "kamflow.residuals/1", "p0,iter,residual,ratio");
    json failures = json::array();
    int max_iter = 0;
    for (std::size_t i = 0; i < fam->solves.size(); ++i) {
      const auto& r = fam->solves[i];
      std::ostringstream name;
      name << bn << "_" << std::setw(4) << std::setfill('0') << i << ".json";
      write_json(out / "corrections" / name.str(), correction_json(r, fam->branch));
      if (!r.converged) {
        failures.push_back({{"p0", as_vector(r.p0)}, {"condition", r.condition}, {"message", r.failure}});
        continue;
      }
      max_iter = std::max(max_iter, r.chord.iterations);
      for (std::size_t k = 0; k < r.chord.residuals.size(); ++k)
        csv.row(joined(r.p0), k, num(r.chord.residuals[k]), k ? num(r.chord.ratios[k - 1]) : "");
    }
    const auto est = theorem_estimates(*fam, cfg.model->eps);
    all = all && failures.empty();
    branches[bn] = {{"solved", fam->solves.size() - failures.size()},
                    {"failed", failures.size()},
                    {"failures", failures},
                    {"max_iterations", max_iter},
                    {"c0", est.c0},
                    {"deviation", est.deviation},
                    {"deviation_c1", est.deviation_c1},
                    {"parameter_quotient", est.parameter_quotient},
                    {"lipschitz", est.lipschitz},
                    {"margin", 2 * est.c0 * cfg.model->eps}};
  }
  write_json(out / "summary.json", {{"schema", "kamflow.summary/1"},
                                    {"mode", cfg.mode},
                                    {"eps", cfg.model->eps},
                                    {"parameters", plus.solves.size()},
                                    {"all_converged", all},
                                    {"branches", branches}});
  std::printf("solve: %zu parameter points, %s\n", plus.solves.size(), all ? "all converged" : "partial");
  return all ? kOk : kPartial;
}

std::vector<Target> read_targets(const std::string& path, int n) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open targets file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  // same schema as the config's glue.targets
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_column(ss.str(), e.byte);
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
  const json arr = doc.is_object() ? doc.value("targets", json::array()) : doc;
  std::vector<Target> t;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string w = path + "[" + std::to_string(i) + "]";
    detail::check_keys(arr[i], {"q", "p"}, w);
    Target x{detail::vec(arr[i].at("q"), w + ".q"), detail::vec(arr[i].at("p"), w + ".p")};
    if (x.q.size() != n || x.p.size() != n) throw ConfigError(w + ": length must equal n");
    t.push_back(x);
  }
  return t;
}

struct GlueOutcome {
  std::optional<BiasymptoticOrbit> orbit;
  ConvergenceReport diag;
  double t_max = 0;
  int branch = 0;
  std::string reason;
};

int cmd_glue(const Common& c) {
  RunConfig cfg = load(c);
  if (!c.targets.empty()) cfg.targets = read_targets(c.targets, cfg.model->n);
  if (cfg.targets.empty()) throw ConfigError("glue: no targets (glue.targets or --targets)");
  const fs::path out = prepare(c, &cfg);
  auto [pf, mf] = solve_both(cfg);
  const SourcePtr plus = make_source(std::move(pf)), minus = make_source(std::move(mf));
  const double margin = std::max(plus->margin(), minus->margin());
  DiagnosticsOptions dopt;
  dopt.points = cfg.glue_points;
  dopt.flow_window = cfg.flow_window;
  dopt.flow_tol = cfg.flow_tol;
  std::vector<GlueOutcome> res(cfg.targets.size());
  parallel_for(cfg.targets.size(), [&](std::size_t i) {
    auto& r = res[i];
    try {
      r.orbit = glue(plus, minus, cfg.targets[i].q, cfg.targets[i].p, cfg.inversion);
      r.t_max = std::min({cfg.glue_t_max, plus->horizon(), minus->horizon()});
      r.diag = convergence_diagnostics(*r.orbit, r.t_max, dopt);
    } catch (const GlueError& e) {
      r.orbit.reset();
      r.branch = e.branch;
      r.reason = e.what();
    }
  });
  const int n = cfg.model->n;
  std::string qp_header;
  for (int a = 0; a < n; ++a) qp_header += n == 1 ? "q," : "q" + std::to_string(a) + ",";
  for (int a = 0; a < n; ++a) qp_header += n == 1 ? "p," : "p" + std::to_string(a) + ",";
  Csv summary(out / "glue_summary.csv", "kamflow.glue_summary/1",
              "target,q,p,status,p0_plus,p0_minus,omega_plus,omega_minus,slope_plus,slope_minus,flow_slope_plus,"
              "flow_slope_minus,agreement,budget,agree");
  Csv rejects(out / "rejects.csv", "kamflow.rejects/1", "target,q,p,branch,margin,reason");
  std::size_t glued = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto& r = res[i];
    const auto& T = cfg.targets[i];
    if (!r.orbit) {
      rejects.row(i, joined(T.q), joined(T.p), r.branch == 1 ? "plus" : r.branch == -1 ? "minus" : "both", num(margin),
                  quoted(r.reason));
      summary.row(i, joined(T.q), joined(T.p), "rejected", "", "", "", "", "", "", "", "", "", "", "");
      continue;
    }
    ++glued;
    const auto& o = *r.orbit;
    const auto& d = r.diag;
    summary.row(i, joined(T.q), joined(T.p), "glued", joined(o.plus.p0), joined(o.minus.p0), joined(o.omega_plus),
                joined(o.omega_minus), num(d.slope_plus), num(d.slope_minus), num(d.flow_slope_plus),
                num(d.flow_slope_minus), num(d.agreement), num(d.budget), d.agree ? "true" : "false");
    write_json(out / ("orbit_" + std::to_string(i) + ".json"),
               {{"schema", "kamflow.orbit/1"},
                {"target", {{"q", as_vector(T.q)}, {"p", as_vector(T.p)}}},
                {"plus", {{"q", as_vector(o.plus.q)}, {"p0", as_vector(o.plus.p0)}, {"omega", as_vector(o.omega_plus)},
                          {"iterations", o.plus.iterations}, {"residual", o.plus.residual}}},
                {"minus", {{"q", as_vector(o.minus.q)}, {"p0", as_vector(o.minus.p0)}, {"omega", as_vector(o.omega_minus)},
                           {"iterations", o.minus.iterations}, {"residual", o.minus.residual}}},
                {"t_max", r.t_max},
                {"slope_plus", d.slope_plus},
                {"slope_minus", d.slope_minus},
                {"flow_window", d.flow_window},
                {"flow_slope_plus", d.flow_slope_plus},
                {"flow_slope_minus", d.flow_slope_minus},
                {"agreement", d.agreement},
                {"budget", d.budget},
                {"agree", d.agree},
                {"series", {{"t", d.times},
                            {"torus_plus", d.torus_plus},
                            {"torus_minus", d.torus_minus},
                            {"flow_plus", d.flow_plus},
                            {"flow_minus", d.flow_minus}}}});
    Csv series(out / ("orbit_" + std::to_string(i) + ".csv"), "kamflow.orbit_series/1",
               "t," + qp_header + "deviation_plus,deviation_minus");
    std::vector<double> ts;
    for (auto it = d.times.rbegin(); it != d.times.rend(); ++it) ts.push_back(-*it);
    ts.push_back(0.0);
    ts.insert(ts.end(), d.times.begin(), d.times.end());
    for (double t : ts) {
      Eigen::VectorXd q, p;
      o.at(t, q, p);
      std::string qp;
      for (int a = 0; a < n; ++a) qp += num(q[a]) + ",";
      for (int a = 0; a < n; ++a) qp += num(p[a]) + ",";
      qp.pop_back();
      const double dev = o.deviation_of(t, q, p);
      series.row(num(t), qp, t >= 0 ? num(dev) : "", t < 0 ? num(dev) : "");
    }
  }
  std::printf("glue: %zu of %zu targets glued\n", glued, res.size());
  return glued == res.size() ? kOk : kPartial;
}

int cmd_verify(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path out = prepare(c, &cfg);
  AcceptanceOptions opt;
  opt.seed = cfg.seed;
  opt.coverage_samples = cfg.verify_coverage_samples;
  opt.alternate_threads = cfg.verify_alternate_threads;
  opt.on_result = [](const CriterionResult& r) {
    std::printf("criterion %d: %s  %s\n", r.id, r.passed ? "PASS" : "FAIL", r.name.c_str());
    std::fflush(stdout);
  };
  const auto rep = run_acceptance(opt);
  write_json(out / "report.json", rep.report(cfg.seed));
  write_json(out / "timings.json", rep.timings());
  return rep.passed() ? kOk : kPartial;
}

int cmd_norms(const Common& c) {
  const std::uint64_t seed = c.seed.value_or(c.config.empty() ? 1 : load(c).seed);
  const fs::path out = prepare(c, nullptr);
  const auto s = run_norm_suite(seed, 100);
  write_json(out / "norms.json", {{"schema", "kamflow.norms/1"},
                                  {"seed", seed},
                                  {"instances", s.instances},
                                  {"sigma_monotone", s.sigma_monotone},
                                  {"weight_inequality", s.weight_inequality},
                                  {"product_max_ratio", s.product_max_ratio},
                                  {"composition_max_ratio", s.composition_max_ratio},
                                  {"constant", s.constant},
                                  {"passed", s.passed()}});
  std::printf("norms: sigma monotone %s, weight inequality %s, product %.4g, composition %.4g (constant %g): %s\n",
              s.sigma_monotone ? "yes" : "no", s.weight_inequality ? "yes" : "no", s.product_max_ratio,
              s.composition_max_ratio, s.constant, s.passed() ? "PASS" : "FAIL");
  return s.passed() ? kOk : kPartial;
}

int cmd_tail_constants(const Common& c, double t) {
  const fs::path out = prepare(c, nullptr);
  json rows = json::array();
  std::printf("%4s %14s %10s %14s %10s\n", "m", "f_m(t)", "1/(m-1)", "g_m(t)", "1/(m(m-1))");
  for (int m : {2, 3, 4}) {
    const double f = tail_bound_f(m, t), g = tail_bound_g(m, t);
    const double fl = 1.0 / (m - 1), gl = 1.0 / (m * (m - 1.0));
    std::printf("%4d %14.8f %10.6f %14.8f %10.6f\n", m, f, fl, g, gl);
    rows.push_back({{"m", m}, {"f", f}, {"f_limit", fl}, {"g", g}, {"g_limit", gl}});
  }
  write_json(out / "tail_constants.json", {{"schema", "kamflow.tail_constants/1"}, {"t", t}, {"rows", rows}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kamflow: asymptotic KAM tori and biasymptotic orbits"};
  app.require_subcommand(1);
  Common c;
  double tail_t = 1000;
  auto common = [&](CLI::App* s, bool config_required) {
    auto* opt = s->add_option("--config", c.config, "run configuration (JSON)")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    s->add_option("--out", c.out, "output directory")->capture_default_str();
    s->add_option("--seed", c.seed, "overrides the config seed");
    s->add_option("--threads", c.threads, "worker threads (overrides KAMFLOW_THREADS)")->check(CLI::PositiveNumber);
  };
  auto* solve = app.add_subcommand("solve", "solve the torus families over the parameter grid");
  common(solve, true);
  auto* gl = app.add_subcommand("glue", "glue biasymptotic orbits through targets");
  common(gl, true);
  gl->add_option("--targets", c.targets, "JSON targets file, replaces glue.targets")->check(CLI::ExistingFile);
  auto* verify = app.add_subcommand("verify", "run the acceptance criteria");
  common(verify, false);
  auto* norms = app.add_subcommand("norms", "norm-algebra property suite");
  common(norms, false);
  auto* tails = app.add_subcommand("tail-constants", "f_m and g_m against their limits");
  common(tails, false);
  tails->add_option("--t", tail_t, "evaluation time")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }
  if (c.threads > 0) set_thread_count(c.threads);
  try {
    if (*solve) return cmd_solve(c);
    if (*gl) return cmd_glue(c);
    if (*verify) return cmd_verify(c);
    if (*norms) return cmd_norms(c);
    return cmd_tail_constants(c, tail_t);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  }
}
