#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "admrl/admrl_loop.hpp"
#include "admrl/errors.hpp"
#include "admrl/gradcheck.hpp"
#include "admrl/json_util.hpp"
#include "admrl/metrics_io.hpp"
#include "admrl/oracle.hpp"

namespace admrl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> seed_opts;  // one per subcommand
  std::string out;
  int threads = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) parts.push_back(item);
  return parts;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--set", c.sets, "dotted-key=value override (repeatable)")->expected(1);
  cmd->add_option("overrides", c.overrides, "dotted-key=value overrides");
  c.seed_opts.push_back(cmd->add_option("--seed", c.seed, "random seed"));
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--threads", c.threads, "worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
}

int thread_count(const Common& c) {
  if (c.threads > 0) return c.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path output_root() {
  const char* root = std::getenv(kOutputRootEnv);
  return root && *root ? fs::path(root) : fs::path("runs");
}

std::vector<std::string> with_seed(const Common& c) {
  std::vector<std::string> ov = c.overrides;
  ov.insert(ov.end(), c.sets.begin(), c.sets.end());
  if (std::any_of(c.seed_opts.begin(), c.seed_opts.end(), [](const CLI::Option* o) { return o->count() > 0; }))
    ov.push_back("seed=" + std::to_string(c.seed));
  return ov;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fixed(double x, int digits = 3) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

std::string vec_text(const Vec& v) {
  std::string s = "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fixed(v[i]);
  return s + ")";
}

// ---------------------------------------------------------------------------

int cmd_run(const Common& c, bool fresh, std::ostream& out) {
  const loop::RunConfig cfg = loop::load_config(c.config, with_seed(c));
  const fs::path dir = c.out.empty()
                           ? output_root() / (loop::to_string(cfg.sampler) + "_seed" + std::to_string(cfg.seed))
                           : fs::path(c.out);
  loop::RunOptions opts;
  opts.resume = !fresh;
  opts.on_task = [&](const loop::TaskRecord& r) {
    out << "task " << r.task << "  psi " << vec_text(r.psi) << "  next " << vec_text(r.next_psi) << "  return "
        << fixed(r.return_star) << "  real_steps " << r.real_steps << "\n";
  };
  const loop::RunState st = loop::run(cfg, dir, opts);
  out << "run complete: " << st.records.size() << " tasks, " << st.real_steps << " real samples, directory "
      << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& run_dir, const std::string& cache_path, std::ostream& out) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "config.json")) throw InputError("no config.json in " + dir.string());
  const loop::RunConfig cfg = loop::load_config(dir / "config.json", with_seed(c));
  const loop::RunState st = loop::load_state(cfg, dir);
  metrics::OracleCache cache(cache_path.empty() ? dir / "oracle_cache.json" : fs::path(cache_path));
  metrics::EvalOptions opts;
  opts.threads = thread_count(c);
  opts.cache = &cache;
  metrics::Report report = metrics::evaluate_run(cfg, dir, st, opts);
  report.created = utc_timestamp();
  cache.save();
  const fs::path report_dir = c.out.empty() ? dir / "report" : fs::path(c.out);
  metrics::write_report(report, report_dir);
  for (const auto& g : report.grids) {
    out << g.spec.name << ": " << g.cells.size() << " cells, " << g.failed_count() << " failed, G^max";
    const auto axis = g.sample_axis();
    for (std::size_t i = 0; i < axis.size(); ++i) out << "  n=" << axis[i] << ": " << fixed(g.g_max[i]);
    out << "\n";
  }
  out << "model error (final): " << report.model_error.final_value << "\n";
  out << "report written to " << report_dir.string() << "\n";
  return kOk;
}

gradcheck::SuiteConfig suite_config(const Common& c) {
  json j = json::object();
  for (const auto& o : with_seed(c)) loop::apply_override(j, o);
  gradcheck::SuiteConfig s;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") s.seed = v.get<std::uint64_t>();
    else if (key == "pg_trajectories") s.pg_trajectories = v.get<long>();
    else if (key == "pg_horizon") s.pg_horizon = v.get<int>();
    else if (key == "hessian_trajectories") s.hessian_trajectories = v.get<long>();
    else if (key == "hessian_horizon") s.hessian_horizon = v.get<int>();
    else if (key == "hessian_chunk") s.hessian_chunk = v.get<long>();
    else if (key == "beta") s.beta = v.get<double>();
    else if (key == "logit_scale") s.logit_scale = v.get<double>();
    else throw InputError("unknown gradcheck key '" + key + "'");
  }
  return s;
}

int cmd_gradcheck(const Common& c, const std::vector<std::string>& only, std::ostream& out) {
  if (!c.config.empty()) throw InputError("gradcheck takes key=value overrides, not --config");
  const gradcheck::SuiteConfig cfg = suite_config(c);
  using Check = std::function<gradcheck::CheckResult(const gradcheck::SuiteConfig&)>;
  const std::vector<std::pair<std::string, Check>> checks{
      {"1a", gradcheck::check_policy_gradient},
      {"1b.i", gradcheck::check_reinforce_hessian},
      {"1b.ii", gradcheck::check_hvp_assembly},
      {"1c", gradcheck::check_mixed_derivative},
      {"1d.i", gradcheck::check_implicit_jacobian_tabular},
      {"1d.ii", gradcheck::check_implicit_jacobian_quadratic},
      {"1e.i", gradcheck::check_cg_spd},
      {"1e.ii", gradcheck::check_cg_indefinite},
  };
  for (const auto& id : only) {
    const bool known = std::any_of(checks.begin(), checks.end(), [&](const auto& p) { return p.first == id; });
    if (!known) throw InputError("unknown check id '" + id + "'");
  }
  std::vector<gradcheck::CheckResult> results;
  for (const auto& [id, fn] : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    results.push_back(fn(cfg));
  }
  out << gradcheck::format_table(results);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    json j = json::array();
    for (const auto& r : results) {
      j.push_back({{"id", r.id}, {"name", r.name}, {"passed", r.passed}, {"value", r.value},
                   {"threshold", r.threshold}, {"detail", r.detail}, {"seconds", r.seconds}});
    }
    std::ofstream f(fs::path(c.out) / "gradcheck.json");
    if (!f) throw IoError("cannot write gradcheck.json in " + c.out);
    f << j.dump(2) << "\n";
  }
  const bool all = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  return all ? kOk : kChecksFailed;
}

struct OracleArgs {
  std::string mdp_file;
  int n_states = 5;
  int n_actions = 2;
  int k = 2;
  double gamma = 0.9;
  double beta = 0.1;
  std::string psi;  // comma separated
};

int cmd_oracle(const Common& c, const OracleArgs& a, std::ostream& out) {
  oracle::TabularMDP mdp;
  if (!a.mdp_file.empty()) {
    std::ifstream in(a.mdp_file);
    if (!in) throw IoError("cannot read " + a.mdp_file);
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw InputError(a.mdp_file + " is not valid JSON");
    mdp = oracle::TabularMDP::from_json(j);
  } else {
    mdp = oracle::TabularMDP::random(c.seed, a.n_states, a.n_actions, a.k, a.gamma);
  }
  Vec psi;
  if (a.psi.empty()) {
    psi = Vec::Ones(mdp.k);
    if (mdp.k >= 2) psi[1] = -0.5;
  } else {
    const auto parts = split_list(a.psi);
    psi.resize(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) {
      try {
        psi[static_cast<Eigen::Index>(i)] = std::stod(parts[i]);
      } catch (const std::exception&) {
        throw InputError("--psi: '" + parts[i] + "' is not a number");
      }
    }
  }
  require(psi.size() == mdp.k, "--psi needs one entry per reward feature");
  require(a.beta > 0.0, "--beta must be positive for a unique optimum");

  const Vec theta = oracle::resolve_inner(mdp, psi, a.beta, Vec::Zero(mdp.param_dim()));
  json j;
  j["mdp"] = mdp.to_json();
  j["psi"] = vec_to_json(psi);
  j["beta"] = a.beta;
  j["theta_star"] = vec_to_json(theta);
  j["policy"] = mat_to_json(oracle::action_probabilities(mdp, theta));
  j["regularized_return"] = oracle::exact_return(mdp, theta, psi, a.beta);
  j["return"] = oracle::exact_return(mdp, theta, psi);
  j["grad_norm"] = oracle::analytic_grad_theta(mdp, theta, psi, a.beta).norm();
  if (c.out.empty()) {
    out << j.dump(2) << "\n";
  } else {
    fs::create_directories(c.out);
    std::ofstream f(fs::path(c.out) / "oracle.json");
    if (!f) throw IoError("cannot write oracle.json in " + c.out);
    f << j.dump(2) << "\n";
    out << "regularized return " << j["regularized_return"].get<double>() << ", written to "
        << (fs::path(c.out) / "oracle.json").string() << "\n";
  }
  return kOk;
}

fs::path report_file(const std::string& p) {
  const fs::path path(p);
  return fs::is_directory(path) ? path / "report.json" : path;
}

int cmd_plot(const Common& c, const std::vector<std::string>& reports, const std::string& metric_name,
             std::ostream& out) {
  require(!reports.empty(), "plot needs at least one --report");
  const auto metric = metrics::heatmap_metric_from_string(metric_name);
  std::vector<metrics::Report> loaded;
  for (const auto& r : reports) loaded.push_back(metrics::read_report(report_file(r)));
  const fs::path dir = c.out.empty() ? report_file(reports.front()).parent_path() : fs::path(c.out);
  fs::create_directories(dir);

  int written = 0;
  auto save = [&](const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    ++written;
  };
  for (std::size_t r = 0; r < loaded.size(); ++r) {
    const std::string prefix = loaded.size() > 1 ? loaded[r].sampler + "_seed" + std::to_string(loaded[r].seed) + "_" : "";
    for (const auto& g : loaded[r].grids) {
      if (g.spec.box.dim() != 2) continue;
      if (metric == metrics::HeatmapMetric::gap) {
        const auto axis = g.sample_axis();
        for (std::size_t i = 0; i < axis.size(); ++i) {
          save(dir / (prefix + "heatmap_" + g.spec.name + "_G" + std::to_string(axis[i]) + ".svg"),
               metrics::render_heatmap(g, metric, i));
        }
      } else {
        save(dir / (prefix + "heatmap_" + g.spec.name + "_" + metric_name + ".svg"),
             metrics::render_heatmap(g, metric, 0));
      }
    }
  }
  for (const auto& g : loaded.front().grids) {
    save(dir / ("worst_case_" + g.spec.name + ".svg"), metrics::render_worst_case_curve(loaded, g.spec.name));
    save(dir / ("worst_case_" + g.spec.name + ".csv"), metrics::worst_case_csv(loaded, g.spec.name));
  }
  out << written << " files written to " << dir.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model-based adversarial meta-RL laboratory", "admrl"};
  app.require_subcommand(1);

  Common common;
  bool fresh = false;
  auto* run = app.add_subcommand("run", "train the outer loop into a run directory");
  add_common(run, common);
  run->add_flag("--fresh", fresh, "discard existing checkpoints instead of resuming");

  std::string run_dir;
  std::string cache_path;
  auto* eval = app.add_subcommand("eval", "evaluate a trained run on the task grids");
  add_common(eval, common);
  eval->add_option("--run", run_dir, "run directory holding config.json and checkpoints")->required();
  eval->add_option("--oracle-cache", cache_path, "oracle cache file (default: <run>/oracle_cache.json)");

  std::string only;
  auto* grad = app.add_subcommand("gradcheck", "run the estimator validation suite");
  add_common(grad, common);
  grad->add_option("--only", only, "comma-separated check ids to run (default: all)");

  OracleArgs oa;
  auto* orc = app.add_subcommand("oracle", "build and solve a tabular MDP");
  add_common(orc, common);
  orc->add_option("--mdp", oa.mdp_file, "MDP description (JSON) instead of a random instance");
  orc->add_option("--states", oa.n_states, "number of states of a random MDP");
  orc->add_option("--actions", oa.n_actions, "number of actions of a random MDP");
  orc->add_option("--features", oa.k, "reward features of a random MDP");
  orc->add_option("--gamma", oa.gamma, "discount of a random MDP");
  orc->add_option("--beta", oa.beta, "entropy weight");
  orc->add_option("--psi", oa.psi, "comma-separated task parameters");

  std::vector<std::string> reports;
  std::string metric = "gap";
  auto* plot = app.add_subcommand("plot", "render heatmaps and worst-case curves from reports");
  add_common(plot, common);
  plot->add_option("--report", reports, "report directory or report.json (repeatable)")->expected(1)->required();
  plot->add_option("--metric", metric, "heatmap metric: gap, a_star or a0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kInputError;
  }

  try {
    if (run->parsed()) return cmd_run(common, fresh, out);
    if (eval->parsed()) return cmd_eval(common, run_dir, cache_path, out);
    if (grad->parsed()) return cmd_gradcheck(common, split_list(only), out);
    if (orc->parsed()) return cmd_oracle(common, oa, out);
    if (plot->parsed()) return cmd_plot(common, reports, metric, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace admrl::cli
