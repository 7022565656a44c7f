#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "admrl/types.hpp"

namespace admrl::envs {

/// Axis-aligned box of admissible task parameters.
class TaskBox {
 public:
  TaskBox(Vec lo, Vec hi);

  int dim() const { return static_cast<int>(lo_.size()); }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  Vec center() const { return 0.5 * (lo_ + hi_); }
  bool contains(const Vec& psi) const;

  /// Box with every side scaled around the center by `factor`.
  TaskBox scaled(double factor) const;

 private:
  Vec lo_;
  Vec hi_;
};

struct TaskParams {
  Vec psi;
};

constexpr double kNormEpsilon = 1e-6;

struct NormStats {
  Vec mu;
  Vec sigma;

  Vec apply(const Eigen::Ref<const Vec>& x) const {
    return (x - mu).cwiseQuotient(sigma);
  }
};

/// Componentwise mean and population standard deviation (floored at
/// kNormEpsilon) of the columns of `states`.
NormStats normalize_stats(const Mat& states);

/// Clip `psi` into `box`. Throws InputError on non-finite input.
TaskParams project_task(const TaskBox& box, const Vec& psi);

// ---------------------------------------------------------------------------
// Dynamics

/// Anything trajectories can be rolled out on: the true environment or a
/// learned model. Batched: column i of `states`/`actions` is one sample and
/// `rngs[i]` is its private randomness stream.
class Dynamics {
 public:
  virtual ~Dynamics() = default;

  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  /// True only for the real environment; drives sample accounting.
  virtual bool is_real() const = 0;
  virtual Vec initial_state(Rng& rng) const = 0;
  virtual Mat step_batch(const Mat& states, const Mat& actions, std::span<Rng> rngs) const = 0;
  virtual Vec action_lo() const = 0;
  virtual Vec action_hi() const = 0;
};

/// A ground-truth environment. Every transition taken through step or
/// step_batch is counted.
class Environment : public Dynamics {
 public:
  bool is_real() const final { return true; }
  virtual std::string name() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  Vec step(const Vec& state, const Vec& action, Rng& rng) const;

  std::uint64_t real_steps() const { return real_steps_; }
  void reset_counter() { real_steps_ = 0; }

 protected:
  void count(std::uint64_t n) const { real_steps_ += n; }

 private:
  mutable std::uint64_t real_steps_ = 0;
};

/// Point mass on the plane with velocity control.
/// State (pos_x, pos_y, vel_x, vel_y); action is an acceleration in [-1, 1]^2.
class PointMass2D final : public Environment {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kVMax = 5.0;

  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  std::string name() const override { return "point_mass_2d"; }
  std::unique_ptr<Environment> clone() const override;
  Vec initial_state(Rng& rng) const override;
  Mat step_batch(const Mat& states, const Mat& actions, std::span<Rng> rngs) const override;
  Vec action_lo() const override { return Vec::Constant(2, -1.0); }
  Vec action_hi() const override { return Vec::Constant(2, 1.0); }
};

std::unique_ptr<Environment> make_environment(const std::string& name);

// ---------------------------------------------------------------------------
// Rewards

/// A reward family r_psi(s, a, s') known in closed form and differentiable
/// in psi.
class RewardModel {
 public:
  virtual ~RewardModel() = default;
  virtual int task_dim() const = 0;
  virtual double value(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
                       const Eigen::Ref<const Vec>& s_next) const = 0;
  /// out += scale * d r / d psi
  virtual void accumulate_grad_psi(const Vec& psi, const Eigen::Ref<const Vec>& s,
                                   const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& s_next,
                                   double scale, Eigen::Ref<Vec> out) const = 0;

  Vec grad_psi(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
               const Eigen::Ref<const Vec>& s_next) const;
};

enum class RewardKind { velocity_match, linear_state };

std::string to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& s);

/// velocity_match: r = -(sum_i c_i |f_i(s') - psi_i|), f_i = s'[feature_index[i]].
/// linear_state:   r = psi . ((s' - mu) / sigma).
class RewardFamily final : public RewardModel {
 public:
  static RewardFamily velocity_match(std::vector<double> coeffs, std::vector<int> feature_index);
  static RewardFamily linear_state(NormStats norm);

  RewardKind kind() const { return kind_; }
  const std::vector<double>& coeffs() const { return coeffs_; }
  const std::vector<int>& feature_index() const { return feature_index_; }
  const std::optional<NormStats>& norm() const { return norm_; }

  int task_dim() const override;
  double value(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
               const Eigen::Ref<const Vec>& s_next) const override;
  void accumulate_grad_psi(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
                           const Eigen::Ref<const Vec>& s_next, double scale,
                           Eigen::Ref<Vec> out) const override;

 private:
  RewardFamily() = default;
  void check_psi(const Vec& psi) const;

  RewardKind kind_ = RewardKind::velocity_match;
  std::vector<double> coeffs_;
  std::vector<int> feature_index_;
  std::optional<NormStats> norm_;
};

double reward(const RewardFamily& family, const TaskParams& psi, const Vec& s, const Vec& a, const Vec& s_next);
Vec reward_grad_psi(const RewardFamily& family, const TaskParams& psi, const Vec& s, const Vec& a,
                    const Vec& s_next);

/// Coefficients of the Ant2D velocity task (c1 = c2 = 1, c3 = 0) mapped onto
/// the point-mass velocity coordinates.
RewardFamily point_mass_velocity_reward();

}  // namespace admrl::envs
