#include "admrl/dyn_model.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "admrl/json_util.hpp"

namespace admrl::dyn_model {

TransitionDataset::TransitionDataset(int state_dim, int action_dim)
    : state_dim_(state_dim), action_dim_(action_dim) {
  require(state_dim >= 1 && action_dim >= 1, "TransitionDataset: bad dimensions");
}

void TransitionDataset::append(const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
                               const Eigen::Ref<const Vec>& s_next, int tag) {
  require(s.size() == state_dim_ && s_next.size() == state_dim_ && a.size() == action_dim_,
          "TransitionDataset::append: dimension mismatch");
  require(s.allFinite() && a.allFinite() && s_next.allFinite(), "TransitionDataset::append: non-finite triple");
  require(tag >= 0, "TransitionDataset::append: negative task tag");
  s_.insert(s_.end(), s.data(), s.data() + state_dim_);
  a_.insert(a_.end(), a.data(), a.data() + action_dim_);
  s_next_.insert(s_next_.end(), s_next.data(), s_next.data() + state_dim_);
  tags_.push_back(tag);
}

Eigen::Map<const Mat> TransitionDataset::states() const {
  return {s_.data(), state_dim_, static_cast<Eigen::Index>(size())};
}
Eigen::Map<const Mat> TransitionDataset::actions() const {
  return {a_.data(), action_dim_, static_cast<Eigen::Index>(size())};
}
Eigen::Map<const Mat> TransitionDataset::next_states() const {
  return {s_next_.data(), state_dim_, static_cast<Eigen::Index>(size())};
}

void TransitionDataset::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "tag";
  for (int i = 0; i < state_dim_; ++i) out << ",s" << i;
  for (int i = 0; i < action_dim_; ++i) out << ",a" << i;
  for (int i = 0; i < state_dim_; ++i) out << ",s_next" << i;
  out << '\n' << std::setprecision(17);
  const auto S = states();
  const auto A = actions();
  const auto N = next_states();
  for (std::size_t k = 0; k < size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    out << tags_[k];
    for (int i = 0; i < state_dim_; ++i) out << ',' << S(i, c);
    for (int i = 0; i < action_dim_; ++i) out << ',' << A(i, c);
    for (int i = 0; i < state_dim_; ++i) out << ',' << N(i, c);
    out << '\n';
  }
}

TransitionDataset TransitionDataset::load_csv(const std::filesystem::path& path, int state_dim, int action_dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  TransitionDataset d(state_dim, action_dim);
  std::string line;
  std::getline(in, line);  // header
  Vec s(state_dim), a(action_dim), sn(state_dim);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != static_cast<std::size_t>(1 + 2 * state_dim + action_dim))
      throw InputError("dataset csv: wrong column count");
    for (int i = 0; i < state_dim; ++i) s[i] = vals[static_cast<std::size_t>(1 + i)];
    for (int i = 0; i < action_dim; ++i) a[i] = vals[static_cast<std::size_t>(1 + state_dim + i)];
    for (int i = 0; i < state_dim; ++i) sn[i] = vals[static_cast<std::size_t>(1 + state_dim + action_dim + i)];
    d.append(s, a, sn, static_cast<int>(vals[0]));
  }
  return d;
}

nlohmann::json TransitionDataset::to_json() const {
  return {{"state_dim", state_dim_}, {"action_dim", action_dim_}, {"s", s_}, {"a", a_}, {"s_next", s_next_},
          {"tags", tags_}};
}

TransitionDataset TransitionDataset::from_json(const nlohmann::json& j) {
  TransitionDataset d(j.at("state_dim").get<int>(), j.at("action_dim").get<int>());
  d.s_ = j.at("s").get<std::vector<double>>();
  d.a_ = j.at("a").get<std::vector<double>>();
  d.s_next_ = j.at("s_next").get<std::vector<double>>();
  d.tags_ = j.at("tags").get<std::vector<int>>();
  const auto n = d.tags_.size();
  if (d.s_.size() != n * static_cast<std::size_t>(d.state_dim_) ||
      d.a_.size() != n * static_cast<std::size_t>(d.action_dim_) || d.s_next_.size() != d.s_.size())
    throw InputError("dataset json: inconsistent sizes");
  return d;
}

// ---------------------------------------------------------------------------

namespace {
std::vector<int> layer_sizes(const ModelArch& arch) {
  std::vector<int> sizes{arch.state_dim + arch.action_dim};
  sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
  sizes.push_back(arch.state_dim);
  return sizes;
}

envs::NormStats identity_norm(int d) {
  return {Vec::Zero(d), Vec::Ones(d)};
}
}  // namespace

DynModel::DynModel(const ModelArch& arch)
    : arch_(arch),
      net_(layer_sizes(arch)),
      phi_(Vec::Zero(net_.param_count())),
      in_norm_(identity_norm(arch.state_dim + arch.action_dim)),
      out_norm_(identity_norm(arch.state_dim)),
      m_(Vec::Zero(net_.param_count())),
      v_(Vec::Zero(net_.param_count())) {}

DynModel DynModel::zeros(const ModelArch& arch) {
  return DynModel(arch);
}

DynModel DynModel::random(const ModelArch& arch, Rng& rng) {
  DynModel m(arch);
  m.net_.init_orthogonal({m.phi_.data(), static_cast<std::size_t>(m.phi_.size())}, 1.0, 0.1, rng);
  return m;
}

Mat DynModel::network_input(const Mat& states, const Mat& actions) const {
  require(states.rows() == arch_.state_dim && actions.rows() == arch_.action_dim &&
              states.cols() == actions.cols(),
          "DynModel: input shape mismatch");
  Mat x(arch_.state_dim + arch_.action_dim, states.cols());
  x.topRows(arch_.state_dim) = states;
  x.bottomRows(arch_.action_dim) = actions;
  x.colwise() -= in_norm_.mu;
  return in_norm_.sigma.cwiseInverse().asDiagonal() * x;
}

Mat DynModel::predict_batch(const Mat& states, const Mat& actions) const {
  Mat y = net_.forward({phi_.data(), static_cast<std::size_t>(phi_.size())}, network_input(states, actions));
  Mat delta = out_norm_.sigma.asDiagonal() * y;
  delta.colwise() += out_norm_.mu;
  return states + delta;
}

Vec DynModel::predict(const Vec& s, const Vec& a) const {
  return predict_batch(Mat(s), Mat(a)).col(0);
}

nlohmann::json DynModel::to_json() const {
  return {{"arch", {{"state_dim", arch_.state_dim}, {"action_dim", arch_.action_dim}, {"hidden", arch_.hidden}}},
          {"phi", vec_to_json(phi_)},
          {"in_mu", vec_to_json(in_norm_.mu)},
          {"in_sigma", vec_to_json(in_norm_.sigma)},
          {"out_mu", vec_to_json(out_norm_.mu)},
          {"out_sigma", vec_to_json(out_norm_.sigma)},
          {"norm_count", norm_count_},
          {"adam_m", vec_to_json(m_)},
          {"adam_v", vec_to_json(v_)},
          {"adam_t", adam_t_}};
}

DynModel DynModel::from_json(const nlohmann::json& j) {
  ModelArch arch;
  arch.state_dim = j.at("arch").at("state_dim").get<int>();
  arch.action_dim = j.at("arch").at("action_dim").get<int>();
  arch.hidden = j.at("arch").at("hidden").get<std::vector<int>>();
  DynModel m(arch);
  m.phi_ = vec_from_json(j.at("phi"));
  if (m.phi_.size() != m.net_.param_count()) throw InputError("model checkpoint: phi size mismatch");
  m.in_norm_ = {vec_from_json(j.at("in_mu")), vec_from_json(j.at("in_sigma"))};
  m.out_norm_ = {vec_from_json(j.at("out_mu")), vec_from_json(j.at("out_sigma"))};
  m.norm_count_ = j.at("norm_count").get<std::size_t>();
  m.m_ = vec_from_json(j.at("adam_m"));
  m.v_ = vec_from_json(j.at("adam_v"));
  m.adam_t_ = j.at("adam_t").get<long>();
  return m;
}

// ---------------------------------------------------------------------------

struct FitAccess {
  static void refresh_norms(DynModel& m, const TransitionDataset& d) {
    if (m.norm_count_ == d.size()) return;
    Mat x(d.state_dim() + d.action_dim(), static_cast<Eigen::Index>(d.size()));
    x.topRows(d.state_dim()) = d.states();
    x.bottomRows(d.action_dim()) = d.actions();
    if (d.size() >= 2) {
      m.in_norm_ = envs::normalize_stats(x);
      m.out_norm_ = envs::normalize_stats(d.next_states() - d.states());
    }
    m.norm_count_ = d.size();
  }

  static double step(DynModel& m, const Mat& states, const Mat& actions, const Mat& next, const FitConfig& cfg) {
    Mlp::Cache cache;
    const std::span<const double> params{m.phi_.data(), static_cast<std::size_t>(m.phi_.size())};
    const Mat out = m.net_.forward(params, m.network_input(states, actions), &cache);
    Mat target = next - states;
    target.colwise() -= m.out_norm_.mu;
    target = m.out_norm_.sigma.cwiseInverse().asDiagonal() * target;
    const Mat err = out - target;
    const double denom = static_cast<double>(err.size());
    const double loss = err.squaredNorm() / denom;

    Vec grad = Vec::Zero(m.phi_.size());
    m.net_.backward(params, cache, (2.0 / denom) * err, {grad.data(), static_cast<std::size_t>(grad.size())});

    ++m.adam_t_;
    m.m_ = cfg.beta1 * m.m_ + (1.0 - cfg.beta1) * grad;
    m.v_ = cfg.beta2 * m.v_ + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(m.adam_t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(m.adam_t_));
    m.phi_.array() -= cfg.lr * (m.m_.array() / bc1) / ((m.v_.array() / bc2).sqrt() + cfg.eps);
    return loss;
  }
};

FitResult fit(DynModel& model, const TransitionDataset& dataset, int n_steps, Rng& rng, const FitConfig& config) {
  if (dataset.empty()) throw StateError("fit: dataset is empty");
  require(n_steps >= 0, "fit: negative step count");
  require(config.batch_size >= 1 && config.lr > 0.0, "fit: bad optimizer config");
  FitResult result;
  if (n_steps == 0) return result;
  FitAccess::refresh_norms(model, dataset);

  const auto S = dataset.states();
  const auto A = dataset.actions();
  const auto N = dataset.next_states();
  const auto size = static_cast<double>(dataset.size());
  const int bs = config.batch_size;
  Mat bs_s(dataset.state_dim(), bs), bs_a(dataset.action_dim(), bs), bs_n(dataset.state_dim(), bs);
  result.losses.reserve(static_cast<std::size_t>(n_steps));
  for (int step = 0; step < n_steps; ++step) {
    for (int i = 0; i < bs; ++i) {
      auto idx = static_cast<Eigen::Index>(std::floor(uniform01(rng) * size));
      idx = std::min<Eigen::Index>(idx, static_cast<Eigen::Index>(dataset.size()) - 1);
      bs_s.col(i) = S.col(idx);
      bs_a.col(i) = A.col(idx);
      bs_n.col(i) = N.col(idx);
    }
    result.losses.push_back(FitAccess::step(model, bs_s, bs_a, bs_n, config));
  }
  return result;
}

double normalized_loss(const DynModel& model, const TransitionDataset& dataset) {
  if (dataset.empty()) throw InputError("normalized_loss: empty dataset");
  const Mat pred = model.predict_batch(dataset.states(), dataset.actions());
  const Mat err = model.output_norm().sigma.cwiseInverse().asDiagonal() * (pred - dataset.next_states());
  return err.squaredNorm() / static_cast<double>(err.size());
}

double model_error(const DynModel& model, const TransitionDataset& eval) {
  if (eval.empty()) throw InputError("model_error: empty dataset");
  const Mat pred = model.predict_batch(eval.states(), eval.actions());
  return (pred - eval.next_states()).colwise().squaredNorm().mean();
}

Mat ModelDynamics::step_batch(const Mat& states, const Mat& actions, std::span<Rng>) const {
  const Mat clipped = actions.cwiseMax(ref_.action_lo().replicate(1, actions.cols()))
                          .cwiseMin(ref_.action_hi().replicate(1, actions.cols()));
  return model_.predict_batch(states, clipped);
}

}  // namespace admrl::dyn_model
