#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/admrl_loop.hpp"
#include "admrl/dyn_model.hpp"
#include "admrl/envs.hpp"
#include "admrl/types.hpp"

namespace admrl::metrics {

inline constexpr int kReportSchemaVersion = 1;

/// Mean and 95% normal confidence half-width of a set of episode returns.
struct ReturnStats {
  double mean = 0.0;
  double ci = 0.0;
  int count = 0;
};

ReturnStats return_stats(const std::vector<double>& returns);

/// Undiscounted returns of `n_rollouts` fresh episodes of pi_theta on `env`.
/// Callers pass a dedicated clone so these steps stay out of any budget.
std::vector<double> evaluation_returns(const envs::Environment& env, const policy::Policy& policy, const Vec& theta,
                                       const envs::RewardModel& reward, const Vec& psi, int n_rollouts, int horizon,
                                       Rng& rng);

// ---------------------------------------------------------------------------
// Optimal-return oracle

struct OracleResult {
  double a_star = 0.0;
  double ci = 0.0;
  bool low_confidence = false;  // no plateau inside the iteration budget
  int iterations = 0;
  Vec theta;
  std::vector<double> curve;  // mean training-batch return per iteration

  bool operator==(const OracleResult&) const = default;
};

nlohmann::json to_json(const OracleResult& r);
OracleResult oracle_result_from_json(const nlohmann::json& j);

/// Memoizes oracle runs by (environment, psi bits, seed, oracle settings).
/// Optionally backed by a JSON file so separate processes share results.
class OracleCache {
 public:
  OracleCache() = default;
  explicit OracleCache(std::filesystem::path file);

  std::optional<OracleResult> find(const std::string& key) const;
  void insert(const std::string& key, const OracleResult& r);
  std::size_t size() const;
  /// Writes the backing file (no-op without one).
  void save() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, OracleResult> entries_;
  std::filesystem::path file_;
};

std::string oracle_key(const loop::RunConfig& c, const Vec& psi, std::uint64_t seed);

/// Trains a fresh policy with TRPO directly on the true environment for at
/// least eval.oracle_min_iters steps and then until the windowed mean
/// training return stops improving by more than eval.oracle_plateau_tol
/// (relative), then evaluates it on fresh rollouts.
/// The training samples are oracle cost and are not part of any budget.
OracleResult optimal_return_oracle(const loop::RunConfig& c, const loop::Components& comp, const Vec& psi,
                                   std::uint64_t seed);
OracleResult optimal_return_oracle(const loop::RunConfig& c, const loop::Components& comp, const Vec& psi,
                                   std::uint64_t seed, OracleCache& cache);

// ---------------------------------------------------------------------------
// Per-task evaluation

struct CellResult {
  Vec psi;
  bool failed = false;
  std::string cause;
  ReturnStats a0;
  std::vector<ReturnStats> a_n;  // one per adapt_samples entry
  OracleResult oracle;
  std::vector<double> gap;       // [G_0, G_n...] with G = A_star - A
  std::uint64_t adapt_steps = 0;  // real samples consumed by adaptation
  std::uint64_t eval_steps = 0;   // real samples consumed by evaluation rollouts (reported separately)
  bool dominance_ok = true;       // A_star >= A - CI for every recorded A
};

/// Zero-shot adaptation in a copy of the trained model, then SLBO
/// adaptation on real samples, recording the evaluation return after each
/// cumulative sample count. `state` is never modified. The oracle entry of
/// the result is left empty; grid_eval fills it.
CellResult eval_task(const loop::RunConfig& c, const loop::Components& comp, const loop::RunState& state,
                     const Vec& psi, const std::vector<int>& adapt_samples, Rng& rng);

// ---------------------------------------------------------------------------
// Grids

struct GridSpec {
  std::string name;
  envs::TaskBox box{Vec::Zero(1), Vec::Ones(1)};
  int size = 6;
  bool boundary_only = false;

  /// Cartesian product of per-axis linspaces, last axis fastest. A size of 1
  /// yields the box center.
  std::vector<Vec> cells() const;
  /// Per-axis indices of each cell, same order as cells().
  std::vector<std::vector<int>> indices() const;
};

GridSpec in_distribution_grid(const loop::RunConfig& c);
GridSpec ood_grid(const loop::RunConfig& c);

struct EvalGrid {
  GridSpec spec;
  std::vector<int> adapt_samples;
  std::vector<CellResult> cells;
  std::vector<double> g_max;  // [G^max_0, G^max_n...] over non-failed cells; NaN when all failed

  /// Sample counts matching gap / g_max entries: 0 followed by adapt_samples.
  std::vector<int> sample_axis() const;
  std::size_t failed_count() const;
};

/// Recomputes gaps and G^max from the stored returns.
void finalize(EvalGrid& grid);

struct EvalOptions {
  int threads = 1;
  OracleCache* cache = nullptr;  // nullptr: no memoization
};

EvalGrid grid_eval(const loop::RunConfig& c, const loop::Components& comp, const loop::RunState& state,
                   const GridSpec& spec, const std::vector<int>& adapt_samples, const EvalOptions& opts = {});

// ---------------------------------------------------------------------------
// Model error

/// Real transitions visited by the oracle policies of `grid`'s cells, one
/// episode per cell.
dyn_model::TransitionDataset oracle_transitions(const loop::RunConfig& c, const loop::Components& comp,
                                                const EvalGrid& grid, std::uint64_t seed);

struct ModelErrorSeries {
  std::vector<int> tasks;       // checkpoint task index
  std::vector<double> values;   // model error on the reference transitions
  double final_value = 0.0;     // the trained model in the evaluated state
};

/// Model error of every checkpointed model under `run_dir` and of the final
/// state's model on `reference`.
ModelErrorSeries model_error_series(const loop::RunConfig& c, const std::filesystem::path& run_dir,
                                    const loop::RunState& state, const dyn_model::TransitionDataset& reference);

// ---------------------------------------------------------------------------
// Reports

struct Report {
  int schema_version = kReportSchemaVersion;
  std::string sampler;
  std::uint64_t seed = 0;
  std::string env;
  std::string created;  // free-form timestamp, the only non-reproducible field
  std::vector<Vec> training_psi;  // task visited by each training iteration
  std::uint64_t training_real_steps = 0;
  std::vector<EvalGrid> grids;
  ModelErrorSeries model_error;

  const EvalGrid& grid(const std::string& name) const;
};

nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);
Report read_report(const std::filesystem::path& path);

/// Full evaluation of a trained run: in-distribution grid, OOD grid and the
/// model-error series on OOD oracle transitions.
Report evaluate_run(const loop::RunConfig& c, const std::filesystem::path& run_dir, const loop::RunState& state,
                    const EvalOptions& opts = {});

/// Columns: grid index, psi_0..psi_{k-1}, failed, A0, A_<n>..., A_star,
/// A_star_low_confidence, G_0, G_<n>...
std::string grid_csv(const EvalGrid& grid);

/// Columns: n, then one G^max column per sampler (median over the seeds of
/// that sampler). `grid_name` selects which grid of each report is used.
std::string worst_case_csv(const std::vector<Report>& reports, const std::string& grid_name);

/// report.json, grid_<name>.csv per grid, worst_case.csv, model_error.csv.
void write_report(const Report& r, const std::filesystem::path& dir);

enum class HeatmapMetric { gap, a_star, a0 };

HeatmapMetric heatmap_metric_from_string(const std::string& s);
std::string to_string(HeatmapMetric m);

/// Self-contained SVG heatmap of a two-dimensional grid. Each cell <rect>
/// carries data-psi, data-value and data-luminance attributes; lighter means
/// a smaller value. `n_index` selects the sample count for the gap metric.
std::string render_heatmap(const EvalGrid& grid, HeatmapMetric metric, std::size_t n_index = 0);
void render_heatmap(const EvalGrid& grid, HeatmapMetric metric, std::size_t n_index,
                    const std::filesystem::path& path);

/// Line chart of G^max against the sample count, one series per sampler.
std::string render_worst_case_curve(const std::vector<Report>& reports, const std::string& grid_name);

/// Color for a normalized value in [0, 1] and its relative luminance.
std::array<int, 3> ramp_color(double t);
double relative_luminance(const std::array<int, 3>& rgb);

double median(std::vector<double> v);

}  // namespace admrl::metrics
