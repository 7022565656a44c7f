#include "admrl/envs.hpp"

#include <algorithm>

namespace admrl::envs {

TaskBox::TaskBox(Vec lo, Vec hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  require(lo_.size() >= 1, "task box must have at least one dimension");
  require(lo_.size() == hi_.size(), "task box bounds differ in dimension");
  require(lo_.allFinite() && hi_.allFinite(), "task box bounds must be finite");
  for (Eigen::Index i = 0; i < lo_.size(); ++i) {
    require(lo_[i] < hi_[i], "task box requires lo < hi in every coordinate");
  }
}

bool TaskBox::contains(const Vec& psi) const {
  if (psi.size() != lo_.size()) return false;
  return (psi.array() >= lo_.array()).all() && (psi.array() <= hi_.array()).all();
}

TaskBox TaskBox::scaled(double factor) const {
  require(factor > 0.0, "box scale factor must be positive");
  const Vec c = center();
  const Vec half = 0.5 * factor * (hi_ - lo_);
  return TaskBox(c - half, c + half);
}

NormStats normalize_stats(const Mat& states) {
  if (states.cols() < 2) throw InputError("normalize_stats needs at least 2 states");
  require(states.allFinite(), "normalize_stats: non-finite state");
  const double n = static_cast<double>(states.cols());
  NormStats out;
  out.mu = states.rowwise().sum() / n;
  const Mat centered = states.colwise() - out.mu;
  out.sigma = (centered.array().square().rowwise().sum() / n).sqrt().matrix();
  out.sigma = out.sigma.cwiseMax(kNormEpsilon);
  return out;
}

TaskParams project_task(const TaskBox& box, const Vec& psi) {
  require(psi.size() == box.dim(), "project_task: dimension mismatch");
  require(psi.allFinite(), "project_task: non-finite task parameters");
  return TaskParams{psi.cwiseMax(box.lo()).cwiseMin(box.hi())};
}

// ---------------------------------------------------------------------------

Vec Environment::step(const Vec& state, const Vec& action, Rng& rng) const {
  Mat s = state;
  Mat a = action;
  Rng* r = &rng;
  return step_batch(s, a, std::span<Rng>(r, 1)).col(0);
}

std::unique_ptr<Environment> PointMass2D::clone() const {
  return std::make_unique<PointMass2D>();
}

Vec PointMass2D::initial_state(Rng&) const {
  return Vec::Zero(4);
}

Mat PointMass2D::step_batch(const Mat& states, const Mat& actions, std::span<Rng>) const {
  require(states.rows() == 4 && actions.rows() == 2 && states.cols() == actions.cols(),
          "PointMass2D: bad batch shape");
  if (!actions.allFinite()) throw InputError("PointMass2D: non-finite action");
  Mat next(4, states.cols());
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    for (int j = 0; j < 2; ++j) {
      const double a = std::clamp(actions(j, i), -1.0, 1.0);
      const double v = std::clamp(states(2 + j, i) + a * kDt, -kVMax, kVMax);
      next(2 + j, i) = v;
      next(j, i) = states(j, i) + v * kDt;
    }
  }
  count(static_cast<std::uint64_t>(states.cols()));
  return next;
}

std::unique_ptr<Environment> make_environment(const std::string& name) {
  if (name == "point_mass_2d") return std::make_unique<PointMass2D>();
  throw InputError("unknown environment '" + name + "'");
}

// ---------------------------------------------------------------------------

Vec RewardModel::grad_psi(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
                          const Eigen::Ref<const Vec>& s_next) const {
  Vec g = Vec::Zero(task_dim());
  accumulate_grad_psi(psi, s, a, s_next, 1.0, g);
  return g;
}

std::string to_string(RewardKind kind) {
  return kind == RewardKind::velocity_match ? "velocity_match" : "linear_state";
}

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "velocity_match") return RewardKind::velocity_match;
  if (s == "linear_state") return RewardKind::linear_state;
  throw InputError("unknown reward kind '" + s + "'");
}

RewardFamily RewardFamily::velocity_match(std::vector<double> coeffs, std::vector<int> feature_index) {
  const auto k = feature_index.size();
  require(k == 2 || k == 3, "velocity_match needs 2 or 3 target features");
  require(coeffs.size() >= k, "velocity_match: fewer coefficients than targets");
  for (double c : coeffs) require(std::isfinite(c), "velocity_match: non-finite coefficient");
  RewardFamily f;
  f.kind_ = RewardKind::velocity_match;
  f.coeffs_ = std::move(coeffs);
  f.feature_index_ = std::move(feature_index);
  return f;
}

RewardFamily RewardFamily::linear_state(NormStats norm) {
  require(norm.mu.size() == norm.sigma.size() && norm.mu.size() >= 1, "linear_state: bad norm stats");
  require((norm.sigma.array() > 0.0).all(), "linear_state: norm sigma must be positive");
  RewardFamily f;
  f.kind_ = RewardKind::linear_state;
  f.norm_ = std::move(norm);
  return f;
}

int RewardFamily::task_dim() const {
  return kind_ == RewardKind::velocity_match ? static_cast<int>(feature_index_.size())
                                             : static_cast<int>(norm_->mu.size());
}

void RewardFamily::check_psi(const Vec& psi) const {
  if (psi.size() != task_dim()) {
    throw InputError("reward: psi has dimension " + std::to_string(psi.size()) + ", family expects " +
                     std::to_string(task_dim()));
  }
}

double RewardFamily::value(const Vec& psi, const Eigen::Ref<const Vec>&, const Eigen::Ref<const Vec>&,
                           const Eigen::Ref<const Vec>& s_next) const {
  check_psi(psi);
  if (kind_ == RewardKind::velocity_match) {
    double cost = 0.0;
    for (std::size_t i = 0; i < feature_index_.size(); ++i) {
      cost += coeffs_[i] * std::abs(s_next[feature_index_[i]] - psi[static_cast<Eigen::Index>(i)]);
    }
    return -cost;
  }
  require(s_next.size() == norm_->mu.size(), "linear_state: state dimension mismatch");
  return psi.dot((s_next - norm_->mu).cwiseQuotient(norm_->sigma));
}

void RewardFamily::accumulate_grad_psi(const Vec& psi, const Eigen::Ref<const Vec>&,
                                       const Eigen::Ref<const Vec>&, const Eigen::Ref<const Vec>& s_next,
                                       double scale, Eigen::Ref<Vec> out) const {
  check_psi(psi);
  if (kind_ == RewardKind::velocity_match) {
    // d/dpsi of -c|f - psi| = c * sign(f - psi), with sign(0) = 0.
    for (std::size_t i = 0; i < feature_index_.size(); ++i) {
      const double diff = s_next[feature_index_[i]] - psi[static_cast<Eigen::Index>(i)];
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      out[static_cast<Eigen::Index>(i)] += scale * coeffs_[i] * sgn;
    }
    return;
  }
  require(s_next.size() == norm_->mu.size(), "linear_state: state dimension mismatch");
  out += scale * (s_next - norm_->mu).cwiseQuotient(norm_->sigma);
}

double reward(const RewardFamily& family, const TaskParams& psi, const Vec& s, const Vec& a, const Vec& s_next) {
  return family.value(psi.psi, s, a, s_next);
}

Vec reward_grad_psi(const RewardFamily& family, const TaskParams& psi, const Vec& s, const Vec& a,
                    const Vec& s_next) {
  return family.grad_psi(psi.psi, s, a, s_next);
}

RewardFamily point_mass_velocity_reward() {
  return RewardFamily::velocity_match({1.0, 1.0, 0.0}, {2, 3});
}

}  // namespace admrl::envs
