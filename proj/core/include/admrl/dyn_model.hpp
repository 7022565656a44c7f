#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/envs.hpp"
#include "admrl/mlp.hpp"
#include "admrl/types.hpp"

namespace admrl::dyn_model {

/// Append-only store of (s, a, s') triples, each tagged with the index of the
/// task whose rollout produced it. Columns are transitions.
class TransitionDataset {
 public:
  TransitionDataset(int state_dim, int action_dim);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t size() const { return tags_.size(); }
  bool empty() const { return tags_.empty(); }

  void append(const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
              const Eigen::Ref<const Vec>& s_next, int tag);

  Eigen::Map<const Mat> states() const;
  Eigen::Map<const Mat> actions() const;
  Eigen::Map<const Mat> next_states() const;
  const std::vector<int>& tags() const { return tags_; }

  /// Rows: tag, s..., a..., s_next...
  void save_csv(const std::filesystem::path& path) const;
  static TransitionDataset load_csv(const std::filesystem::path& path, int state_dim, int action_dim);

  nlohmann::json to_json() const;
  static TransitionDataset from_json(const nlohmann::json& j);

 private:
  int state_dim_;
  int action_dim_;
  std::vector<double> s_;
  std::vector<double> a_;
  std::vector<double> s_next_;
  std::vector<int> tags_;
};

struct ModelArch {
  int state_dim = 4;
  int action_dim = 2;
  std::vector<int> hidden{64};
};

struct FitConfig {
  double lr = 1e-3;
  int batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Learned transition model: an MLP maps normalized (s, a) to the normalized
/// state delta; predict returns s + denormalized delta.
class DynModel {
 public:
  static DynModel zeros(const ModelArch& arch);
  static DynModel random(const ModelArch& arch, Rng& rng);

  const ModelArch& arch() const { return arch_; }
  const Vec& phi() const { return phi_; }
  Vec& phi() { return phi_; }
  const envs::NormStats& input_norm() const { return in_norm_; }
  const envs::NormStats& output_norm() const { return out_norm_; }

  Vec predict(const Vec& s, const Vec& a) const;
  Mat predict_batch(const Mat& states, const Mat& actions) const;

  nlohmann::json to_json() const;
  static DynModel from_json(const nlohmann::json& j);

 private:
  friend struct FitAccess;
  explicit DynModel(const ModelArch& arch);

  Mat network_input(const Mat& states, const Mat& actions) const;

  ModelArch arch_;
  Mlp net_;
  Vec phi_;
  envs::NormStats in_norm_;
  envs::NormStats out_norm_;
  std::size_t norm_count_ = 0;  // dataset size the norms were computed from
  // Adam state
  Vec m_;
  Vec v_;
  long adam_t_ = 0;
};

struct FitResult {
  std::vector<double> losses;  // one per gradient step
};

/// n_steps Adam steps on minibatch MSE of normalized deltas. Normalization
/// statistics are refreshed from the dataset whenever it grew since the
/// last fit. Minibatch indices are floor(u * |D|), u ~ U[0,1).
FitResult fit(DynModel& model, const TransitionDataset& dataset, int n_steps, Rng& rng,
              const FitConfig& config = {});

/// Mean normalized-delta MSE over the whole dataset (training objective).
double normalized_loss(const DynModel& model, const TransitionDataset& dataset);

/// Mean over triples of ||predict(s, a) - s'||^2.
double model_error(const DynModel& model, const TransitionDataset& eval);

/// Rolls trajectories on a learned model, borrowing the initial-state
/// distribution and action box from a reference environment.
class ModelDynamics final : public envs::Dynamics {
 public:
  ModelDynamics(const DynModel& model, const envs::Dynamics& reference) : model_(model), ref_(reference) {}

  int state_dim() const override { return ref_.state_dim(); }
  int action_dim() const override { return ref_.action_dim(); }
  bool is_real() const override { return false; }
  Vec initial_state(Rng& rng) const override { return ref_.initial_state(rng); }
  Mat step_batch(const Mat& states, const Mat& actions, std::span<Rng> rngs) const override;
  Vec action_lo() const override { return ref_.action_lo(); }
  Vec action_hi() const override { return ref_.action_hi(); }

 private:
  const DynModel& model_;
  const envs::Dynamics& ref_;
};

}  // namespace admrl::dyn_model
