#include "admrl/metrics_io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "admrl/errors.hpp"
#include "admrl/json_util.hpp"
#include "admrl/policy_opt.hpp"
#include "admrl/rollout.hpp"

namespace admrl::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kOracleStream = 0x6f7261636c65ULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kReferenceStream = 0x726566ULL;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double num_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string fmt(double x) {
  if (!std::isfinite(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string fmt_short(double x, const char* spec = "%.2f") {
  if (!std::isfinite(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<double> undiscounted_returns(const rollout::TrajectoryBatch& batch, const envs::RewardModel& reward,
                                         const Vec& psi) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& t : batch.trajectories) {
    double total = 0.0;
    for (int i = 0; i < t.length(); ++i) total += reward.value(psi, t.states.col(i), t.applied.col(i), t.states.col(i + 1));
    out.push_back(total);
  }
  return out;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += v[i];
  return s / static_cast<double>(to - from);
}

}  // namespace

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ReturnStats return_stats(const std::vector<double>& returns) {
  ReturnStats s;
  s.count = static_cast<int>(returns.size());
  if (returns.empty()) {
    s.mean = kNaN;
    s.ci = kNaN;
    return s;
  }
  s.mean = mean_of(returns, 0, returns.size());
  if (returns.size() > 1) {
    double ss = 0.0;
    for (double r : returns) ss += (r - s.mean) * (r - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(returns.size() - 1));
    s.ci = 1.96 * sd / std::sqrt(static_cast<double>(returns.size()));
  }
  return s;
}

std::vector<double> evaluation_returns(const envs::Environment& env, const policy::Policy& policy, const Vec& theta,
                                       const envs::RewardModel& reward, const Vec& psi, int n_rollouts, int horizon,
                                       Rng& rng) {
  require(n_rollouts >= 1, "evaluation needs at least one rollout");
  const auto batch = rollout::collect(env, policy, theta, n_rollouts, horizon, rng);
  const auto returns = undiscounted_returns(batch, reward, psi);
  for (double r : returns) {
    if (!std::isfinite(r)) throw NumericError("evaluation rollout produced a non-finite return");
  }
  return returns;
}

// ---------------------------------------------------------------------------
// Oracle

json to_json(const OracleResult& r) {
  return {{"a_star", num(r.a_star)},       {"ci", num(r.ci)},
          {"low_confidence", r.low_confidence}, {"iterations", r.iterations},
          {"theta", vec_to_json(r.theta)}, {"curve", r.curve}};
}

OracleResult oracle_result_from_json(const json& j) {
  OracleResult r;
  r.a_star = num_from(j.at("a_star"));
  r.ci = num_from(j.at("ci"));
  r.low_confidence = j.at("low_confidence").get<bool>();
  r.iterations = j.at("iterations").get<int>();
  r.theta = vec_from_json(j.at("theta"));
  for (const auto& x : j.at("curve")) r.curve.push_back(num_from(x));
  return r;
}

OracleCache::OracleCache(fs::path file) : file_(std::move(file)) {
  if (file_.empty() || !fs::exists(file_)) return;
  std::ifstream in(file_);
  if (!in) throw IoError("cannot read oracle cache " + file_.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw IoError("corrupt oracle cache " + file_.string());
  for (const auto& [k, v] : j.items()) entries_.emplace(k, oracle_result_from_json(v));
}

std::optional<OracleResult> OracleCache::find(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void OracleCache::insert(const std::string& key, const OracleResult& r) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_.insert_or_assign(key, r);
}

std::size_t OracleCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_.size();
}

void OracleCache::save() const {
  if (file_.empty()) return;
  json j = json::object();
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [k, v] : entries_) j[k] = to_json(v);
  }
  if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
  const fs::path tmp = file_.string() + ".tmp";
  write_file(tmp, j.dump() + "\n");
  fs::rename(tmp, file_);
}

std::string oracle_key(const loop::RunConfig& c, const Vec& psi, std::uint64_t seed) {
  const json settings = {{"eval", {{"min_iters", c.eval.oracle_min_iters},
                                   {"max_iters", c.eval.oracle_max_iters},
                                   {"window", c.eval.oracle_plateau_window},
                                   {"tol", c.eval.oracle_plateau_tol},
                                   {"samples", c.eval.oracle_samples},
                                   {"rollouts", c.eval.eval_rollouts}}},
                         {"trpo", policy_opt::to_json(c.trpo)},
                         {"gamma", c.gamma},
                         {"horizon", c.horizon},
                         {"reward", {c.reward_coeffs, c.reward_features}},
                         {"policy", {c.policy.hidden, std::vector<double>(c.policy.input_scale.data(),
                                                                          c.policy.input_scale.data() +
                                                                              c.policy.input_scale.size())}}};
  std::string key = c.env + "|" + std::to_string(seed) + "|";
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    std::uint64_t bits = 0;
    const double x = psi[i];
    std::memcpy(&bits, &x, sizeof(bits));
    key += (i ? "," : "") + hex(bits);
  }
  return key + "|" + hex(fnv1a(settings.dump()));
}

OracleResult optimal_return_oracle(const loop::RunConfig& c, const loop::Components& comp, const Vec& psi,
                                   std::uint64_t seed) {
  const auto env = comp.env->clone();
  Rng rng(mix_seed(seed, kOracleStream, fingerprint(psi)));
  const int window = c.eval.oracle_plateau_window;
  const int n_traj = std::max(1, c.eval.oracle_samples / c.horizon);

  OracleResult out;
  out.low_confidence = true;
  Vec theta = comp.policy.initial_params(rng);
  for (int it = 0; it < c.eval.oracle_max_iters; ++it) {
    const auto batch = rollout::collect(*env, comp.policy, theta, n_traj, c.horizon, rng);
    const auto returns = undiscounted_returns(batch, comp.reward, psi);
    out.curve.push_back(mean_of(returns, 0, returns.size()));
    theta = policy_opt::trpo_step(comp.policy, theta, batch, comp.reward, psi, c.gamma, c.trpo).theta;
    out.iterations = it + 1;
    const std::size_t n = out.curve.size();
    if (out.iterations >= c.eval.oracle_min_iters && n >= static_cast<std::size_t>(2 * window)) {
      const double prev = mean_of(out.curve, n - 2 * window, n - window);
      const double cur = mean_of(out.curve, n - window, n);
      if (cur - prev < c.eval.oracle_plateau_tol * std::abs(prev)) {
        out.low_confidence = false;
        break;
      }
    }
  }
  if (!theta.allFinite()) throw NumericError("oracle training diverged");
  out.theta = theta;
  const auto stats =
      return_stats(evaluation_returns(*env, comp.policy, theta, comp.reward, psi, c.eval.eval_rollouts, c.horizon, rng));
  out.a_star = stats.mean;
  out.ci = stats.ci;
  return out;
}

OracleResult optimal_return_oracle(const loop::RunConfig& c, const loop::Components& comp, const Vec& psi,
                                   std::uint64_t seed, OracleCache& cache) {
  const std::string key = oracle_key(c, psi, seed);
  if (auto hit = cache.find(key)) return *hit;
  OracleResult r = optimal_return_oracle(c, comp, psi, seed);
  cache.insert(key, r);
  return r;
}

// ---------------------------------------------------------------------------
// Per-task evaluation

CellResult eval_task(const loop::RunConfig& c, const loop::Components& comp, const loop::RunState& state,
                     const Vec& psi, const std::vector<int>& adapt_samples, Rng& rng) {
  for (std::size_t i = 0; i < adapt_samples.size(); ++i) {
    require(adapt_samples[i] > 0 && adapt_samples[i] % c.horizon == 0,
            "adapt_samples entries must be positive multiples of the horizon");
    require(i == 0 || adapt_samples[i] > adapt_samples[i - 1], "adapt_samples must be strictly increasing");
  }
  CellResult out;
  out.psi = psi;

  dyn_model::DynModel model = state.model;
  dyn_model::TransitionDataset dataset = state.dataset;
  const auto inner = comp.inner(c);
  const auto eval_env = comp.env->clone();
  const auto adapt_env = comp.env->clone();
  eval_env->reset_counter();
  adapt_env->reset_counter();

  const auto zs =
      policy_opt::zero_shot_adapt(inner, model, psi, dataset, c.n_zeroshot, c.inner_budget(), rng);
  Vec theta = zs ? zs->theta : comp.policy.initial_params(rng);
  auto evaluate = [&] {
    return return_stats(
        evaluation_returns(*eval_env, comp.policy, theta, comp.reward, psi, c.eval.eval_rollouts, c.horizon, rng));
  };
  out.a0 = evaluate();

  const int adaptation_tag = c.n_tasks;
  int done = 0;
  for (int n : adapt_samples) {
    while (done < n) {
      const int chunk = std::min(c.n_collect, n - done);
      const auto batch = rollout::collect(*adapt_env, comp.policy, theta, chunk / c.horizon, c.horizon, rng,
                                          c.noise_std);
      rollout::append_to_dataset(batch, dataset, adaptation_tag);
      theta = policy_opt::virtual_training(inner, theta, model, psi, dataset, c.inner_budget(), rng).theta;
      done += chunk;
    }
    out.a_n.push_back(evaluate());
  }
  out.adapt_steps = adapt_env->real_steps();
  out.eval_steps = eval_env->real_steps();
  return out;
}

// ---------------------------------------------------------------------------
// Grids

namespace {

double axis_value(const envs::TaskBox& box, int axis, int index, int size) {
  if (size == 1) return box.center()[axis];
  const double t = static_cast<double>(index) / static_cast<double>(size - 1);
  return box.lo()[axis] + t * (box.hi()[axis] - box.lo()[axis]);
}

}  // namespace

std::vector<std::vector<int>> GridSpec::indices() const {
  require(size >= 1, "grid size must be >= 1");
  const int k = box.dim();
  std::vector<std::vector<int>> out;
  std::vector<int> idx(static_cast<std::size_t>(k), 0);
  while (true) {
    const bool on_boundary =
        std::any_of(idx.begin(), idx.end(), [&](int i) { return i == 0 || i == size - 1; });
    if (!boundary_only || on_boundary) out.push_back(idx);
    int axis = k - 1;
    while (axis >= 0 && ++idx[static_cast<std::size_t>(axis)] == size) {
      idx[static_cast<std::size_t>(axis)] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
  return out;
}

std::vector<Vec> GridSpec::cells() const {
  std::vector<Vec> out;
  for (const auto& idx : indices()) {
    Vec psi(box.dim());
    for (int a = 0; a < box.dim(); ++a) psi[a] = axis_value(box, a, idx[static_cast<std::size_t>(a)], size);
    out.push_back(psi);
  }
  return out;
}

GridSpec in_distribution_grid(const loop::RunConfig& c) {
  return GridSpec{"in_distribution", c.task_box(), c.eval.grid_size, false};
}

GridSpec ood_grid(const loop::RunConfig& c) { return GridSpec{"ood", c.ood_box(), c.eval.ood_grid_size, true}; }

std::vector<int> EvalGrid::sample_axis() const {
  std::vector<int> out{0};
  out.insert(out.end(), adapt_samples.begin(), adapt_samples.end());
  return out;
}

std::size_t EvalGrid::failed_count() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return c.failed; }));
}

void finalize(EvalGrid& grid) {
  const std::size_t m = grid.adapt_samples.size();
  grid.g_max.assign(m + 1, kNaN);
  for (auto& cell : grid.cells) {
    cell.gap.assign(m + 1, kNaN);
    if (cell.failed) continue;
    const double star = cell.oracle.a_star;
    cell.gap[0] = star - cell.a0.mean;
    bool ok = star + cell.oracle.ci >= cell.a0.mean - cell.a0.ci;
    for (std::size_t i = 0; i < m; ++i) {
      cell.gap[i + 1] = star - cell.a_n[i].mean;
      ok = ok && star + cell.oracle.ci >= cell.a_n[i].mean - cell.a_n[i].ci;
    }
    cell.dominance_ok = ok;
    for (std::size_t i = 0; i <= m; ++i) {
      if (!std::isfinite(grid.g_max[i]) || cell.gap[i] > grid.g_max[i]) grid.g_max[i] = cell.gap[i];
    }
  }
}

EvalGrid grid_eval(const loop::RunConfig& c, const loop::Components& comp, const loop::RunState& state,
                   const GridSpec& spec, const std::vector<int>& adapt_samples, const EvalOptions& opts) {
  EvalGrid grid;
  grid.spec = spec;
  grid.adapt_samples = adapt_samples;
  const auto psis = spec.cells();
  grid.cells.resize(psis.size());

  OracleCache local;
  OracleCache& cache = opts.cache ? *opts.cache : local;
  auto evaluate_cell = [&](std::size_t i) {
    CellResult& cell = grid.cells[i];
    try {
      Rng rng(mix_seed(c.seed, kEvalStream, fingerprint(psis[i])));
      cell = eval_task(c, comp, state, psis[i], adapt_samples, rng);
      cell.oracle = optimal_return_oracle(c, comp, psis[i], c.seed, cache);
    } catch (const std::exception& e) {
      cell = CellResult{};
      cell.psi = psis[i];
      cell.failed = true;
      cell.cause = e.what();
      cell.a0 = return_stats({});
      cell.a_n.assign(adapt_samples.size(), return_stats({}));
      cell.oracle.a_star = kNaN;
      cell.oracle.ci = kNaN;
    }
  };

  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(psis.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < psis.size(); ++i) evaluate_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < psis.size(); i = next++) evaluate_cell(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  finalize(grid);
  return grid;
}

// ---------------------------------------------------------------------------
// Model error

dyn_model::TransitionDataset oracle_transitions(const loop::RunConfig& c, const loop::Components& comp,
                                                const EvalGrid& grid, std::uint64_t seed) {
  dyn_model::TransitionDataset out(comp.env->state_dim(), comp.env->action_dim());
  const auto env = comp.env->clone();
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const CellResult& cell = grid.cells[i];
    if (cell.failed || cell.oracle.theta.size() == 0) continue;
    Rng rng(mix_seed(seed, kReferenceStream, static_cast<std::uint64_t>(i)));
    const auto batch = rollout::collect(*env, comp.policy, cell.oracle.theta, 1, c.horizon, rng);
    rollout::append_to_dataset(batch, out, static_cast<int>(i));
  }
  return out;
}

ModelErrorSeries model_error_series(const loop::RunConfig& c, const fs::path& run_dir, const loop::RunState& state,
                                    const dyn_model::TransitionDataset& reference) {
  ModelErrorSeries out;
  if (reference.empty()) {
    out.final_value = kNaN;
    return out;
  }
  if (!run_dir.empty()) {
    for (int t = 0; t < c.n_tasks; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "task_%03d.ckpt", t);
      const fs::path p = run_dir / "state" / name;
      if (!fs::exists(p)) continue;
      std::ifstream in(p);
      const json j = json::parse(in, nullptr, false);
      if (j.is_discarded()) throw IoError("corrupt checkpoint " + p.string());
      const auto model = dyn_model::DynModel::from_json(j.at("model"));
      out.tasks.push_back(t);
      out.values.push_back(dyn_model::model_error(model, reference));
    }
  }
  out.final_value = dyn_model::model_error(state.model, reference);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json stats_json(const ReturnStats& s) { return {{"mean", num(s.mean)}, {"ci", num(s.ci)}, {"count", s.count}}; }

ReturnStats stats_from(const json& j) {
  return {num_from(j.at("mean")), num_from(j.at("ci")), j.at("count").get<int>()};
}

json cell_json(const CellResult& c) {
  json j;
  j["psi"] = vec_to_json(c.psi);
  j["failed"] = c.failed;
  j["cause"] = c.cause;
  j["A0"] = stats_json(c.a0);
  j["A_n"] = json::array();
  for (const auto& s : c.a_n) j["A_n"].push_back(stats_json(s));
  j["oracle"] = to_json(c.oracle);
  j["gap"] = json::array();
  for (double g : c.gap) j["gap"].push_back(num(g));
  j["adapt_steps"] = c.adapt_steps;
  j["eval_steps"] = c.eval_steps;
  j["dominance_ok"] = c.dominance_ok;
  return j;
}

CellResult cell_from(const json& j) {
  CellResult c;
  c.psi = vec_from_json(j.at("psi"));
  c.failed = j.at("failed").get<bool>();
  c.cause = j.at("cause").get<std::string>();
  c.a0 = stats_from(j.at("A0"));
  for (const auto& s : j.at("A_n")) c.a_n.push_back(stats_from(s));
  c.oracle = oracle_result_from_json(j.at("oracle"));
  for (const auto& g : j.at("gap")) c.gap.push_back(num_from(g));
  c.adapt_steps = j.at("adapt_steps").get<std::uint64_t>();
  c.eval_steps = j.at("eval_steps").get<std::uint64_t>();
  c.dominance_ok = j.at("dominance_ok").get<bool>();
  return c;
}

json grid_json(const EvalGrid& g) {
  json j;
  j["name"] = g.spec.name;
  j["box"] = {{"lo", vec_to_json(g.spec.box.lo())}, {"hi", vec_to_json(g.spec.box.hi())}};
  j["size"] = g.spec.size;
  j["boundary_only"] = g.spec.boundary_only;
  j["adapt_samples"] = g.adapt_samples;
  j["g_max"] = json::array();
  for (double x : g.g_max) j["g_max"].push_back(num(x));
  j["cells"] = json::array();
  for (const auto& c : g.cells) j["cells"].push_back(cell_json(c));
  return j;
}

EvalGrid grid_from(const json& j) {
  EvalGrid g;
  g.spec = GridSpec{j.at("name").get<std::string>(),
                    envs::TaskBox(vec_from_json(j.at("box").at("lo")), vec_from_json(j.at("box").at("hi"))),
                    j.at("size").get<int>(), j.at("boundary_only").get<bool>()};
  g.adapt_samples = j.at("adapt_samples").get<std::vector<int>>();
  for (const auto& x : j.at("g_max")) g.g_max.push_back(num_from(x));
  for (const auto& c : j.at("cells")) g.cells.push_back(cell_from(c));
  return g;
}

}  // namespace

const EvalGrid& Report::grid(const std::string& name) const {
  for (const auto& g : grids) {
    if (g.spec.name == name) return g;
  }
  throw InputError("report has no grid named '" + name + "'");
}

json to_json(const Report& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["metadata"] = {{"sampler", r.sampler}, {"seed", r.seed}, {"env", r.env}, {"created", r.created}};
  j["training"] = {{"real_steps", r.training_real_steps}, {"psi", json::array()}};
  for (const auto& p : r.training_psi) j["training"]["psi"].push_back(vec_to_json(p));
  j["grids"] = json::array();
  for (const auto& g : r.grids) j["grids"].push_back(grid_json(g));
  json me;
  me["tasks"] = r.model_error.tasks;
  me["values"] = json::array();
  for (double v : r.model_error.values) me["values"].push_back(num(v));
  me["final"] = num(r.model_error.final_value);
  j["model_error"] = me;
  return j;
}

Report report_from_json(const json& j) {
  Report r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kReportSchemaVersion)
    throw InputError("unsupported report schema version " + std::to_string(r.schema_version));
  const json& m = j.at("metadata");
  r.sampler = m.at("sampler").get<std::string>();
  r.seed = m.at("seed").get<std::uint64_t>();
  r.env = m.at("env").get<std::string>();
  r.created = m.at("created").get<std::string>();
  r.training_real_steps = j.at("training").at("real_steps").get<std::uint64_t>();
  for (const auto& p : j.at("training").at("psi")) r.training_psi.push_back(vec_from_json(p));
  for (const auto& g : j.at("grids")) r.grids.push_back(grid_from(g));
  const json& me = j.at("model_error");
  r.model_error.tasks = me.at("tasks").get<std::vector<int>>();
  for (const auto& v : me.at("values")) r.model_error.values.push_back(num_from(v));
  r.model_error.final_value = num_from(me.at("final"));
  return r;
}

Report read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read report " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InputError("report " + path.string() + " is not valid JSON");
  return report_from_json(j);
}

Report evaluate_run(const loop::RunConfig& c, const fs::path& run_dir, const loop::RunState& state,
                    const EvalOptions& opts) {
  const loop::Components comp = loop::make_components(c);
  OracleCache local;
  EvalOptions o = opts;
  if (!o.cache) o.cache = &local;

  Report r;
  r.sampler = loop::to_string(c.sampler);
  r.seed = c.seed;
  r.env = c.env;
  r.training_real_steps = state.real_steps;
  for (const auto& rec : state.records) r.training_psi.push_back(rec.psi);
  r.grids.push_back(grid_eval(c, comp, state, in_distribution_grid(c), c.eval.adapt_samples, o));
  r.grids.push_back(grid_eval(c, comp, state, ood_grid(c), c.eval.adapt_samples, o));
  const auto reference = oracle_transitions(c, comp, r.grids.back(), c.seed);
  r.model_error = model_error_series(c, run_dir, state, reference);
  return r;
}

std::string grid_csv(const EvalGrid& grid) {
  std::ostringstream out;
  const int k = grid.spec.box.dim();
  out << "cell";
  for (int a = 0; a < k; ++a) out << ",psi_" << a;
  out << ",failed,A0";
  for (int n : grid.adapt_samples) out << ",A_" << n;
  out << ",A_star,A_star_low_confidence";
  for (int n : grid.sample_axis()) out << ",G_" << n;
  out << "\n";
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const CellResult& c = grid.cells[i];
    out << i;
    for (int a = 0; a < k; ++a) out << "," << fmt(c.psi[a]);
    out << "," << (c.failed ? 1 : 0) << "," << fmt(c.a0.mean);
    for (std::size_t n = 0; n < grid.adapt_samples.size(); ++n)
      out << "," << fmt(n < c.a_n.size() ? c.a_n[n].mean : kNaN);
    out << "," << fmt(c.oracle.a_star) << "," << (c.oracle.low_confidence ? 1 : 0);
    for (std::size_t n = 0; n <= grid.adapt_samples.size(); ++n) out << "," << fmt(n < c.gap.size() ? c.gap[n] : kNaN);
    out << "\n";
  }
  return out.str();
}

namespace {

/// sampler -> per-sample-count median G^max over that sampler's seeds.
std::map<std::string, std::vector<double>> worst_case_medians(const std::vector<Report>& reports,
                                                              const std::string& grid_name, std::vector<int>& axis) {
  std::map<std::string, std::vector<std::vector<double>>> by_sampler;
  axis.clear();
  for (const auto& r : reports) {
    const EvalGrid& g = r.grid(grid_name);
    if (axis.empty()) axis = g.sample_axis();
    if (g.sample_axis() != axis) throw InputError("reports disagree on adapt_samples for grid " + grid_name);
    auto& rows = by_sampler[r.sampler];
    rows.resize(axis.size());
    for (std::size_t i = 0; i < axis.size(); ++i) rows[i].push_back(g.g_max[i]);
  }
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, rows] : by_sampler) {
    auto& v = out[name];
    for (const auto& seeds : rows) v.push_back(median(seeds));
  }
  return out;
}

}  // namespace

std::string worst_case_csv(const std::vector<Report>& reports, const std::string& grid_name) {
  std::vector<int> axis;
  const auto med = worst_case_medians(reports, grid_name, axis);
  std::ostringstream out;
  out << "n";
  for (const auto& [name, _] : med) out << "," << name;
  out << "\n";
  for (std::size_t i = 0; i < axis.size(); ++i) {
    out << axis[i];
    for (const auto& [_, v] : med) out << "," << fmt(v[i]);
    out << "\n";
  }
  return out.str();
}

void write_report(const Report& r, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "report.json", to_json(r).dump(2) + "\n");
  for (const auto& g : r.grids) write_file(dir / ("grid_" + g.spec.name + ".csv"), grid_csv(g));
  std::string wc;
  for (const auto& g : r.grids) {
    wc += "# grid " + g.spec.name + "\n";
    wc += worst_case_csv({r}, g.spec.name);
  }
  write_file(dir / "worst_case.csv", wc);
  std::ostringstream me;
  me << "task,model_error\n";
  for (std::size_t i = 0; i < r.model_error.tasks.size(); ++i)
    me << r.model_error.tasks[i] << "," << fmt(r.model_error.values[i]) << "\n";
  me << "final," << fmt(r.model_error.final_value) << "\n";
  write_file(dir / "model_error.csv", me.str());
}

// ---------------------------------------------------------------------------
// Rendering

HeatmapMetric heatmap_metric_from_string(const std::string& s) {
  if (s == "gap") return HeatmapMetric::gap;
  if (s == "a_star") return HeatmapMetric::a_star;
  if (s == "a0") return HeatmapMetric::a0;
  throw InputError("unknown heatmap metric '" + s + "' (expected gap, a_star or a0)");
}

std::string to_string(HeatmapMetric m) {
  switch (m) {
    case HeatmapMetric::gap: return "gap";
    case HeatmapMetric::a_star: return "a_star";
    case HeatmapMetric::a0: return "a0";
  }
  return "gap";
}

std::array<int, 3> ramp_color(double t) {
  static constexpr std::array<std::array<double, 3>, 4> stops{{
      {255, 247, 236}, {253, 187, 132}, {227, 74, 51}, {127, 0, 0}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double x = t * static_cast<double>(stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(x), stops.size() - 2);
  const double f = x - static_cast<double>(i);
  std::array<int, 3> rgb{};
  for (std::size_t ch = 0; ch < 3; ++ch)
    rgb[ch] = static_cast<int>(std::lround(stops[i][ch] + f * (stops[i + 1][ch] - stops[i][ch])));
  return rgb;
}

double relative_luminance(const std::array<int, 3>& rgb) {
  auto lin = [](int c) {
    const double s = c / 255.0;
    return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
  };
  return 0.2126 * lin(rgb[0]) + 0.7152 * lin(rgb[1]) + 0.0722 * lin(rgb[2]);
}

namespace {

std::string rgb_hex(const std::array<int, 3>& c) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

double metric_value(const CellResult& c, HeatmapMetric m, std::size_t n_index) {
  if (c.failed) return kNaN;
  switch (m) {
    case HeatmapMetric::gap: return n_index < c.gap.size() ? c.gap[n_index] : kNaN;
    case HeatmapMetric::a_star: return c.oracle.a_star;
    case HeatmapMetric::a0: return c.a0.mean;
  }
  return kNaN;
}

}  // namespace

std::string render_heatmap(const EvalGrid& grid, HeatmapMetric metric, std::size_t n_index) {
  require(grid.spec.box.dim() == 2, "heatmaps need a two-dimensional task grid");
  const auto axis = grid.sample_axis();
  require(metric != HeatmapMetric::gap || n_index < axis.size(), "heatmap: sample index out of range");
  const auto idx = grid.spec.indices();
  require(idx.size() == grid.cells.size(), "heatmap: grid cells do not match the grid spec");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : grid.cells) {
    const double v = metric_value(c, metric, n_index);
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  auto normalized = [&](double v) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };

  const int n = grid.spec.size;
  const int cell = 56;
  const int left = 70;
  const int top = 50;
  const int map_w = n * cell;
  const int legend_x = left + map_w + 30;
  const int width = legend_x + 110;
  const int height = top + map_w + 60;

  std::ostringstream out;
  std::string title = to_string(metric);
  if (metric == HeatmapMetric::gap) title = "G_" + std::to_string(axis[n_index]);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\" data-grid=\"" << grid.spec.name << "\" data-metric=\""
      << to_string(metric) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << left << "\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\">" << grid.spec.name
      << ": " << title << "</text>\n";
  out << "<g class=\"cells\">\n";
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const CellResult& c = grid.cells[i];
    const int x = left + idx[i][0] * cell;
    const int y = top + (n - 1 - idx[i][1]) * cell;
    const double v = metric_value(c, metric, n_index);
    const bool valid = std::isfinite(v);
    const auto rgb = valid ? ramp_color(normalized(v)) : std::array<int, 3>{200, 200, 200};
    const double lum = relative_luminance(rgb);
    out << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"" << rgb_hex(rgb) << "\" stroke=\"#ffffff\" data-psi=\"" << fmt(c.psi[0]) << ","
        << fmt(c.psi[1]) << "\" data-value=\"" << fmt(v) << "\" data-luminance=\"" << fmt(lum) << "\""
        << (c.failed ? " data-failed=\"1\"" : "") << "/>\n";
    out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
        << (lum < 0.35 ? "#ffffff" : "#000000") << "\">" << (valid ? fmt_short(v, "%.1f") : "failed")
        << "</text>\n";
  }
  out << "</g>\n";

  // Axis labels from the grid coordinates.
  for (int i = 0; i < n; ++i) {
    const double vx = axis_value(grid.spec.box, 0, i, n);
    const double vy = axis_value(grid.spec.box, 1, i, n);
    out << "<text x=\"" << left + i * cell + cell / 2 << "\" y=\"" << top + map_w + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_short(vx) << "</text>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << top + (n - 1 - i) * cell + cell / 2 + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_short(vy) << "</text>\n";
  }
  out << "<text x=\"" << left + map_w / 2 << "\" y=\"" << top + map_w + 40
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">psi_0</text>\n";
  out << "<text x=\"18\" y=\"" << top + map_w / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 " << top + map_w / 2
      << ")\">psi_1</text>\n";

  // Legend: top is the largest value.
  constexpr int kStops = 10;
  const int bar_h = map_w / kStops;
  out << "<g class=\"legend\">\n";
  for (int s = 0; s < kStops; ++s) {
    const double t = 1.0 - static_cast<double>(s) / (kStops - 1);
    const double v = lo + t * (hi - lo);
    out << "<rect class=\"legend-stop\" x=\"" << legend_x << "\" y=\"" << top + s * bar_h
        << "\" width=\"20\" height=\"" << bar_h << "\" fill=\"" << rgb_hex(ramp_color(t)) << "\" data-value=\""
        << fmt(v) << "\"/>\n";
  }
  out << "<text x=\"" << legend_x + 26 << "\" y=\"" << top + 10
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_short(hi) << "</text>\n";
  out << "<text x=\"" << legend_x + 26 << "\" y=\"" << top + kStops * bar_h
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_short(lo) << "</text>\n";
  out << "</g>\n</svg>\n";
  return out.str();
}

void render_heatmap(const EvalGrid& grid, HeatmapMetric metric, std::size_t n_index, const fs::path& path) {
  write_file(path, render_heatmap(grid, metric, n_index));
}

std::string render_worst_case_curve(const std::vector<Report>& reports, const std::string& grid_name) {
  std::vector<int> axis;
  const auto med = worst_case_medians(reports, grid_name, axis);
  require(!axis.empty(), "worst-case curve needs at least one report");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [_, v] : med) {
    for (double x : v) {
      if (std::isfinite(x)) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi <= lo) hi = lo + 1.0;
  const double x_max = std::max(1, axis.back());
  const int left = 70, top = 40, w = 420, h = 260;
  auto px = [&](double n) { return left + w * n / x_max; };
  auto py = [&](double v) { return top + h * (1.0 - (v - lo) / (hi - lo)); };
  static const std::array<const char*, 6> colors{"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + w + 150 << "\" height=\"" << top + h + 60
      << "\" data-grid=\"" << grid_name << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">" << grid_name
      << ": worst-case gap vs adaptation samples</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + h << "\" x2=\"" << left + w << "\" y2=\"" << top + h
      << "\" stroke=\"#000000\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + h
      << "\" stroke=\"#000000\"/>\n";
  for (int n : axis) {
    out << "<text x=\"" << fmt_short(px(n), "%.1f") << "\" y=\"" << top + h + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << n << "</text>\n";
  }
  for (int s = 0; s <= 4; ++s) {
    const double v = lo + (hi - lo) * s / 4.0;
    out << "<text x=\"" << left - 6 << "\" y=\"" << fmt_short(py(v) + 4, "%.1f")
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_short(v, "%.1f")
        << "</text>\n";
  }
  std::size_t ci = 0;
  for (const auto& [name, v] : med) {
    const char* color = colors[ci % colors.size()];
    out << "<polyline class=\"series\" data-sampler=\"" << name << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < axis.size(); ++i) {
      if (std::isfinite(v[i])) out << fmt_short(px(axis[i]), "%.1f") << "," << fmt_short(py(v[i]), "%.1f") << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << left + w + 12 << "\" y=\"" << top + 16 + 18 * static_cast<int>(ci)
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">" << name << "</text>\n";
    ++ci;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace admrl::metrics
