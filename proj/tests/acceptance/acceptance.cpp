// Acceptance suite: prints one PASS/FAIL line per criterion.
//
// The end-to-end criteria train and evaluate every sampler on every seed.
// Finished runs found under --out with an identical config are reused, so a
// second invocation only re-checks the stored reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "admrl/admrl_loop.hpp"
#include "admrl/gradcheck.hpp"
#include "admrl/metrics_io.hpp"
#include "admrl/rollout.hpp"
#include "admrl/task_grad.hpp"

namespace fs = std::filesystem;
using namespace admrl;

namespace {

struct Verdict {
  std::string id;
  std::string what;
  bool pass = false;
  std::string detail;
};

std::vector<Verdict> g_verdicts;

void report(const std::string& id, const std::string& what, bool pass, const std::string& detail) {
  g_verdicts.push_back({id, what, pass, detail});
  std::cout << (pass ? "PASS " : "FAIL ") << id << "  " << what << "  [" << detail << "]" << std::endl;
}

std::string num(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double median_of(std::vector<double> v) { return metrics::median(v); }

// ---------------------------------------------------------------------------
// 1. Estimator correctness

void estimator_checks(std::uint64_t seed) {
  gradcheck::SuiteConfig cfg;
  cfg.seed = seed;
  const std::map<std::string, double> runtime_limit{{"1a", 300.0}, {"1b.i", 900.0}};
  for (const auto& r : gradcheck::run_suite(cfg)) {
    bool pass = r.passed;
    std::string detail = "error " + num(r.value) + " vs " + num(r.threshold) + ", " + num(r.seconds, 3) + " s";
    if (const auto it = runtime_limit.find(r.id); it != runtime_limit.end()) {
      pass = pass && r.seconds < it->second;
      detail += " (limit " + num(it->second, 3) + " s)";
    }
    if (!r.detail.empty()) detail += "; " + r.detail;
    report(r.id, r.name, pass, detail);
  }
}

// ---------------------------------------------------------------------------
// End-to-end runs

const std::vector<loop::Sampler> kSamplers{loop::Sampler::adversarial, loop::Sampler::uniform,
                                           loop::Sampler::gaussian};

// Default experiment with the inner-loop budgets shrunk so that nine
// train+evaluate runs fit the two-hour budget on one core.
loop::RunConfig desk_config(loop::Sampler sampler, std::uint64_t seed) {
  nlohmann::json j = loop::to_json(loop::default_config());
  for (const char* o : {"trpo.n_trpo=1000", "n_zeroshot=10", "n_inner=5", "n_policy=10", "n_model=50"})
    loop::apply_override(j, o);
  j["sampler"] = loop::to_string(sampler);
  j["seed"] = seed;
  return loop::config_from_json(j);
}

struct RunOutcome {
  loop::RunConfig config;
  loop::RunState state;
  metrics::Report report;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  fs::path dir;
};

RunOutcome train_and_evaluate(const loop::RunConfig& cfg, const fs::path& dir, metrics::OracleCache& cache,
                              int threads) {
  const fs::path timing = dir / "timing.json";
  nlohmann::json times = fs::exists(timing) ? nlohmann::json::parse(slurp(timing)) : nlohmann::json::object();

  // A changed config refuses to resume; start such a directory over.
  if (fs::exists(dir / "config.json") &&
      nlohmann::json::parse(slurp(dir / "config.json")) != loop::to_json(cfg)) {
    fs::remove_all(dir);
    times = nlohmann::json::object();
  }

  const bool trained_before = times.contains("train_seconds");
  auto t0 = std::chrono::steady_clock::now();
  loop::RunState state = loop::run(cfg, dir);
  if (!trained_before) times["train_seconds"] = seconds_since(t0);

  const fs::path report_dir = dir / "report";
  metrics::Report rep;
  if (times.contains("eval_seconds") && fs::exists(report_dir / "report.json")) {
    rep = metrics::read_report(report_dir / "report.json");
  } else {
    t0 = std::chrono::steady_clock::now();
    metrics::EvalOptions eo;
    eo.threads = threads;
    eo.cache = &cache;
    rep = metrics::evaluate_run(cfg, dir, state, eo);
    cache.save();
    metrics::write_report(rep, report_dir);
    times["eval_seconds"] = seconds_since(t0);
  }
  std::ofstream(timing) << times.dump(2) << "\n";
  return RunOutcome{cfg, std::move(state), std::move(rep), times["train_seconds"].get<double>(),
                    times["eval_seconds"].get<double>(), dir};
}

double final_gmax(const metrics::Report& r, const std::string& grid) { return r.grid(grid).g_max.back(); }

double boundary_fraction(const metrics::Report& r) {
  if (r.training_psi.empty()) return 0.0;
  const auto n = std::count_if(r.training_psi.begin(), r.training_psi.end(),
                               [](const Vec& p) { return p.cwiseAbs().maxCoeff() >= 2.5; });
  return static_cast<double>(n) / static_cast<double>(r.training_psi.size());
}

double grid_median(const metrics::EvalGrid& g, bool zero_shot) {
  std::vector<double> v;
  for (const auto& c : g.cells)
    if (!c.failed) v.push_back(zero_shot ? c.a0.mean : c.a_n.back().mean);
  return median_of(v);
}

using Outcomes = std::map<loop::Sampler, std::vector<RunOutcome>>;

std::vector<double> per_seed(const Outcomes& runs, loop::Sampler s, double (*f)(const RunOutcome&)) {
  std::vector<double> v;
  for (const auto& o : runs.at(s)) v.push_back(f(o));
  return v;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + num(x);
  return s;
}

void ordering_criteria(const Outcomes& runs, double total_seconds) {
  using S = loop::Sampler;
  for (const auto& [id, grid] : {std::pair{"2.i", "in_distribution"}, std::pair{"2.ii", "ood"}}) {
    std::map<S, double> med;
    std::string detail;
    for (auto s : kSamplers) {
      std::vector<double> v;
      for (const auto& o : runs.at(s)) v.push_back(final_gmax(o.report, grid));
      med[s] = median_of(v);
      detail += loop::to_string(s) + " " + num(med[s]) + " (" + list(v) + ") ";
    }
    const int n = runs.at(S::adversarial).front().report.grid(grid).sample_axis().back();
    report(id, std::string("G^max_") + std::to_string(n) + " on " + grid + ": adversarial <= uniform and <= gaussian",
           med[S::adversarial] <= med[S::uniform] && med[S::adversarial] <= med[S::gaussian], detail);
  }

  const auto err = [](const RunOutcome& o) { return o.report.model_error.final_value; };
  const auto ea = per_seed(runs, S::adversarial, err);
  const auto eu = per_seed(runs, S::uniform, err);
  report("2.iii", "model error on OOD transitions: adversarial <= uniform", median_of(ea) <= median_of(eu),
         "adversarial " + num(median_of(ea)) + " (" + list(ea) + "), uniform " + num(median_of(eu)) + " (" +
             list(eu) + ")");

  report("2.rt", "end-to-end runtime under two hours", total_seconds < 7200.0,
         num(total_seconds / 60.0, 3) + " min train+eval over all runs");
}

void zero_shot_criterion(const Outcomes& runs) {
  std::vector<double> rel;
  std::string detail;
  for (const auto& o : runs.at(loop::Sampler::adversarial)) {
    const auto& g = o.report.grid("in_distribution");
    const double a0 = grid_median(g, true);
    const double an = grid_median(g, false);
    rel.push_back(std::abs(a0 - an) / std::abs(an));
    detail += "seed " + std::to_string(o.config.seed) + ": A0 " + num(a0) + " A_n " + num(an) + "; ";
  }
  report("3", "median A0 within 20% of median A_6000 (median over seeds)", median_of(rel) <= 0.2,
         detail + "relative gap " + num(median_of(rel)));
}

void boundary_criterion(const Outcomes& runs) {
  const auto f = [](const RunOutcome& o) { return boundary_fraction(o.report); };
  const auto adv = per_seed(runs, loop::Sampler::adversarial, f);
  const auto uni = per_seed(runs, loop::Sampler::uniform, f);
  report("4", "fraction of training tasks with |psi|_inf >= 2.5: adversarial > uniform",
         median_of(adv) > median_of(uni),
         "adversarial " + num(median_of(adv)) + " (" + list(adv) + "), uniform " + num(median_of(uni)) + " (" +
             list(uni) + ")");
}

// ---------------------------------------------------------------------------
// 5. Accounting

std::uint64_t expected_real_steps(const loop::RunConfig& c) {
  return static_cast<std::uint64_t>((c.n_tasks - 1) * c.n_slbo + c.first_task_slbo) *
         static_cast<std::uint64_t>(c.n_collect);
}

void accounting_of_runs(const Outcomes& runs) {
  bool ok = true;
  std::string detail;
  for (auto s : kSamplers) {
    for (const auto& o : runs.at(s)) {
      const auto& c = o.config;
      std::uint64_t prev = 0;
      for (const auto& r : o.state.records) {
        const int slbo = r.task == 0 ? c.first_task_slbo : c.n_slbo;
        ok = ok && r.real_steps - prev == static_cast<std::uint64_t>(slbo * c.n_collect);
        prev = r.real_steps;
      }
      ok = ok && o.state.real_steps == expected_real_steps(c) && o.report.training_real_steps == o.state.real_steps;
    }
    detail += loop::to_string(s) + " " + std::to_string(runs.at(s).front().state.real_steps) + " ";
  }
  const auto& c = runs.at(loop::Sampler::adversarial).front().config;
  detail += "expected " + std::to_string(expected_real_steps(c)) + " = ((n_tasks-1)*n_slbo + first_task_slbo)*n_collect";
  report("5.a", "training runs consume exactly the per-task SLBO collections, equal across samplers", ok, detail);
}

void accounting_equal_budget(const fs::path& out) {
  bool ok = true;
  std::string detail;
  for (auto s : kSamplers) {
    auto c = desk_config(s, 7);
    c.n_tasks = 4;
    c.first_task_slbo = c.n_slbo;
    c.n_collect = 500;
    c.n_zeroshot = 2;
    c.n_inner = 2;
    c.n_policy = 3;
    c.n_model = 10;
    c.trpo.n_trpo = 500;
    c.gate_trajectories = 5;
    c.hessian_trajectories = 5;
    loop::RunOptions opts;
    opts.resume = false;
    const auto st = loop::run(c, out / ("budget_" + loop::to_string(s)), opts);
    const auto want = static_cast<std::uint64_t>(c.n_tasks * c.n_slbo * c.n_collect);
    ok = ok && st.real_steps == want;
    detail += loop::to_string(s) + " " + std::to_string(st.real_steps) + "/" + std::to_string(want) + " ";
  }
  report("5.b", "with first_task_slbo = n_slbo, real samples = n_tasks*n_slbo*n_collect exactly", ok, detail);
}

void accounting_virtual_work() {
  const auto c = desk_config(loop::Sampler::adversarial, 3);
  const auto comp = loop::make_components(c);
  const auto ctx = comp.inner(c);
  Rng rng(mix_seed(3, 99));
  Vec theta = comp.policy.initial_params(rng);
  dyn_model::TransitionDataset data(comp.env->state_dim(), comp.env->action_dim());
  const Vec psi = (Vec(2) << 1.5, -2.0).finished();
  const auto real_hat = rollout::collect(*comp.env, comp.policy, theta, 10, c.horizon, rng, c.noise_std);
  rollout::append_to_dataset(real_hat, data, 0);
  comp.env->reset_counter();

  auto model = dyn_model::DynModel::random(c.model, rng);
  const policy_opt::VirtualTrainingBudget small{2, 20, 3};
  const auto trained = policy_opt::virtual_training(ctx, theta, model, psi, data, small, rng);
  const auto zs = policy_opt::zero_shot_adapt(ctx, model, psi, data, 2, small, rng);
  const Vec theta_hat = zs ? zs->theta : trained.theta;
  const dyn_model::ModelDynamics dyn(model, *comp.env);
  const auto virt = rollout::collect(dyn, comp.policy, theta_hat, 5, c.horizon, rng);
  const double residual = policy_opt::first_order_residual(comp.policy, theta_hat, virt, comp.reward, psi, c.gamma);
  const double ret = rollout::mean_return(virt, comp.reward, psi, c.gamma);
  const std::uint64_t before_grad = comp.env->real_steps();

  // The real batches for the gradient are collected up front; the gradient
  // itself must not add to the counter.
  comp.env->reset_counter();
  const auto hat = rollout::collect(*comp.env, comp.policy, theta_hat, 5, c.horizon, rng, c.noise_std);
  const auto star = rollout::collect(*comp.env, comp.policy, theta_hat, 5, c.horizon, rng, c.noise_std);
  const std::uint64_t collected = comp.env->real_steps();
  task_grad::TaskGradientInputs in{comp.policy, comp.reward, psi, c.gamma, theta_hat, theta_hat, star, hat, virt,
                                   c.cg, false};
  const auto g = task_grad::task_gradient(in);
  const std::uint64_t after_grad = comp.env->real_steps() - collected;
  report("5.c", "virtual training, zero-shot adaptation, returns and task gradient step the real env zero times",
         before_grad == 0 && after_grad == 0 && std::isfinite(residual) && std::isfinite(ret) && g.total.allFinite(),
         "real steps during virtual work " + std::to_string(before_grad) + ", during gradient " +
             std::to_string(after_grad));
}

void reproducibility(const RunOutcome& reference, const fs::path& out) {
  const fs::path again = out / "repro_adversarial_seed0";
  loop::RunOptions opts;
  opts.resume = false;
  const auto t0 = std::chrono::steady_clock::now();
  const auto st = loop::run(reference.config, again, opts);
  const bool log_same = slurp(again / "log.jsonl") == slurp(reference.dir / "log.jsonl");
  const bool ckpt_same = loop::checkpoint_json(st).dump() == loop::checkpoint_json(reference.state).dump();
  const bool data_same = slurp(again / "state" / "dataset.csv") == slurp(reference.dir / "state" / "dataset.csv");
  report("5.d", "a run reproduces bitwise from (config, seed)", log_same && ckpt_same && data_same,
         std::string("log ") + (log_same ? "identical" : "differs") + ", checkpoint " +
             (ckpt_same ? "identical" : "differs") + ", dataset " + (data_same ? "identical" : "differs") + ", " +
             num(seconds_since(t0), 3) + " s");
}

// ---------------------------------------------------------------------------
// 6. Constants

void constants() {
  const auto c = loop::default_config();
  const auto j = loop::to_json(c);
  using B = loop::ReferenceBudgets;
  const bool sweep = B::alpha_sweep == std::array<double, 6>{1, 2, 4, 8, 16, 32} &&
                     std::find(B::alpha_sweep.begin(), B::alpha_sweep.end(), c.alpha) != B::alpha_sweep.end();
  const bool ok = j.at("n_zeroshot") == 40 && j.at("n_slbo") == 3 && j.at("n_inner") == 20 && j.at("n_model") == 100 &&
                  j.at("n_policy") == 20 && j.at("cg").at("max_iters") == 200 && sweep &&
                  j.at("trpo").at("n_trpo").get<int>() == static_cast<int>(std::lround(B::n_trpo * c.desk_scale));
  report("6", "defaults encode the reference budgets with a single desk_scale knob", ok,
         "n_zeroshot " + j.at("n_zeroshot").dump() + ", n_slbo " + j.at("n_slbo").dump() + ", n_inner " +
             j.at("n_inner").dump() + ", n_model " + j.at("n_model").dump() + ", n_policy " +
             j.at("n_policy").dump() + ", cg " + j.at("cg").at("max_iters").dump() + ", alpha " + num(c.alpha) +
             ", n_trpo " + j.at("trpo").at("n_trpo").dump() + " at desk_scale " + num(c.desk_scale));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite", "admrl_acceptance"};
  std::string out = "acceptance_runs";
  std::string seeds_text = "0,1,2";
  bool strict = false;
  bool skip_estimators = false;
  bool skip_e2e = false;
  int threads = 0;
  app.add_option("--out", out, "directory holding the end-to-end runs (reused when configs match)");
  app.add_option("--seeds", seeds_text, "comma-separated seeds for the end-to-end criteria");
  app.add_option("--threads", threads, "evaluation threads (default: all cores)");
  app.add_flag("--strict", strict, "exit with status 2 when any criterion fails");
  app.add_flag("--skip-estimators", skip_estimators, "do not run criterion 1");
  app.add_flag("--skip-e2e", skip_e2e, "do not run criteria 2 to 5");
  CLI11_PARSE(app, argc, argv);
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  std::vector<std::uint64_t> seeds;
  {
    std::stringstream in(seeds_text);
    for (std::string s; std::getline(in, s, ',');)
      if (!s.empty()) seeds.push_back(std::stoull(s));
  }

  try {
    const auto t_all = std::chrono::steady_clock::now();
    if (!skip_estimators) estimator_checks(0);

    if (!skip_e2e && !seeds.empty()) {
      const fs::path root(out);
      fs::create_directories(root);
      metrics::OracleCache cache(root / "oracle_cache.json");
      Outcomes runs;
      double total = 0.0;
      for (auto seed : seeds) {
        for (auto s : kSamplers) {
          const auto cfg = desk_config(s, seed);
          const fs::path dir = root / (loop::to_string(s) + "_seed" + std::to_string(seed));
          auto o = train_and_evaluate(cfg, dir, cache, threads);
          std::cout << "  run " << dir.filename().string() << ": train " << num(o.train_seconds, 3) << " s, eval "
                    << num(o.eval_seconds, 3) << " s" << std::endl;
          total += o.train_seconds + o.eval_seconds;
          runs[s].push_back(std::move(o));
        }
      }
      ordering_criteria(runs, total);
      zero_shot_criterion(runs);
      boundary_criterion(runs);
      accounting_of_runs(runs);
      accounting_equal_budget(root);
      accounting_virtual_work();
      reproducibility(runs.at(loop::Sampler::adversarial).front(), root);
    }
    constants();

    const auto failed = std::count_if(g_verdicts.begin(), g_verdicts.end(), [](const Verdict& v) { return !v.pass; });
    std::cout << "acceptance: " << g_verdicts.size() - static_cast<std::size_t>(failed) << "/" << g_verdicts.size()
              << " criteria passed in " << num(seconds_since(t_all) / 60.0, 3) << " min" << std::endl;
    return strict && failed > 0 ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "acceptance suite aborted: " << e.what() << std::endl;
    return 1;
  }
}
