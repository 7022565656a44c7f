#include "admrl/mlp.hpp"

namespace admrl {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  require(sizes_.size() >= 2, "Mlp needs at least an input and an output size");
  for (int s : sizes_) require(s >= 1, "Mlp layer sizes must be positive");
  offsets_.reserve(sizes_.size());
  int off = 0;
  for (int l = 0; l < layers(); ++l) {
    offsets_.push_back(off);
    off += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  param_count_ = off;
}

Mlp::LayerView Mlp::layer(std::span<const double> params, int l) const {
  const int in = sizes_[l];
  const int out = sizes_[l + 1];
  const double* p = params.data() + offsets_[l];
  return {Eigen::Map<const Mat>(p, out, in), Eigen::Map<const Vec>(p + out * in, out)};
}

std::pair<Eigen::Map<Mat>, Eigen::Map<Vec>> Mlp::layer_mut(std::span<double> params, int l) const {
  const int in = sizes_[l];
  const int out = sizes_[l + 1];
  double* p = params.data() + offsets_[l];
  return {Eigen::Map<Mat>(p, out, in), Eigen::Map<Vec>(p + out * in, out)};
}

Mat Mlp::forward(std::span<const double> params, const Mat& x, Cache* cache) const {
  require(static_cast<int>(params.size()) >= param_count_, "Mlp: parameter vector too short");
  require(x.rows() == in_dim(), "Mlp: input dimension mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->inputs.reserve(static_cast<std::size_t>(layers()));
  }
  Mat a = x;
  for (int l = 0; l < layers(); ++l) {
    const auto [w, b] = layer(params, l);
    Mat z = w * a;
    z.colwise() += b;
    if (cache) cache->inputs.push_back(std::move(a));
    if (l + 1 < layers()) {
      a = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
    } else {
      return z;
    }
  }
  return a;  // unreachable
}

void Mlp::backward(std::span<const double> params, const Cache& cache, const Mat& delta_out,
                   std::span<double> grad) const {
  Mat delta = delta_out;
  for (int l = layers() - 1; l >= 0; --l) {
    const Mat& a = cache.inputs[static_cast<std::size_t>(l)];
    auto [gw, gb] = layer_mut(grad, l);
    gw.noalias() += delta * a.transpose();
    gb += delta.rowwise().sum();
    if (l > 0) {
      const auto [w, b] = layer(params, l);
      Mat dh = w.transpose() * delta;
      delta = dh.array() * (1.0 - a.array().square());
    }
  }
}

Mat Mlp::per_sample_grads(std::span<const double> params, const Cache& cache, const Mat& delta_out) const {
  const Eigen::Index n = delta_out.cols();
  Mat out(param_count_, n);
  Mat delta = delta_out;
  for (int l = layers() - 1; l >= 0; --l) {
    const Mat& a = cache.inputs[static_cast<std::size_t>(l)];
    const int in = sizes_[l];
    const int o = sizes_[l + 1];
    const int off = offsets_[l];
    for (Eigen::Index i = 0; i < n; ++i) {
      // vec(delta_i a_i^T) in column-major order
      for (int c = 0; c < in; ++c) {
        out.block(off + c * o, i, o, 1) = delta.col(i) * a(c, i);
      }
      out.block(off + o * in, i, o, 1) = delta.col(i);
    }
    if (l > 0) {
      const auto [w, b] = layer(params, l);
      Mat dh = w.transpose() * delta;
      delta = dh.array() * (1.0 - a.array().square());
    }
  }
  return out;
}

Mat Mlp::jvp(std::span<const double> params, std::span<const double> dir, const Cache& cache,
             std::vector<Mat>* r_inputs) const {
  r_inputs->assign(static_cast<std::size_t>(layers()), Mat());
  const Eigen::Index n = cache.inputs.front().cols();
  Mat r_a;  // directional derivative of the current layer input; zero for the network input
  for (int l = 0; l < layers(); ++l) {
    const Mat& a = cache.inputs[static_cast<std::size_t>(l)];
    const auto [w, b] = layer(params, l);
    const auto [v, c] = layer(dir, l);
    Mat rz = v * a;
    rz.colwise() += c;
    if (l > 0) rz.noalias() += w * r_a;
    if (l > 0) {
      (*r_inputs)[static_cast<std::size_t>(l)] = r_a;
    } else {
      (*r_inputs)[0] = Mat::Zero(a.rows(), n);
    }
    if (l + 1 < layers()) {
      const Mat& next = cache.inputs[static_cast<std::size_t>(l + 1)];
      r_a = (1.0 - next.array().square()) * rz.array();
    } else {
      return rz;
    }
  }
  return r_a;  // unreachable
}

void Mlp::r_backward(std::span<const double> params, std::span<const double> dir, const Cache& cache,
                     const std::vector<Mat>& r_inputs, const Mat& delta_out, const Mat& r_delta_out,
                     std::span<double> hvp) const {
  Mat delta = delta_out;
  Mat r_delta = r_delta_out;
  for (int l = layers() - 1; l >= 0; --l) {
    const Mat& a = cache.inputs[static_cast<std::size_t>(l)];
    const Mat& r_a = r_inputs[static_cast<std::size_t>(l)];
    auto [hw, hb] = layer_mut(hvp, l);
    hw.noalias() += r_delta * a.transpose();
    if (l > 0) hw.noalias() += delta * r_a.transpose();
    hb += r_delta.rowwise().sum();
    if (l > 0) {
      const auto [w, b] = layer(params, l);
      const auto [v, c] = layer(dir, l);
      Mat dh = w.transpose() * delta;
      Mat r_dh = v.transpose() * delta;
      r_dh.noalias() += w.transpose() * r_delta;
      const auto d = 1.0 - a.array().square();
      delta = dh.array() * d;
      r_delta = r_dh.array() * d - 2.0 * a.array() * r_a.array() * dh.array();
    }
  }
}

Mat orthogonal_matrix(int rows, int cols, double gain, Rng& rng) {
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Mat g(big, small);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(big, small);
  const Mat r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  Mat out = rows >= cols ? q : Mat(q.transpose());
  return gain * out;
}

void Mlp::init_orthogonal(std::span<double> params, double hidden_gain, double output_gain, Rng& rng) const {
  for (int l = 0; l < layers(); ++l) {
    auto [w, b] = layer_mut(params, l);
    const double gain = l + 1 < layers() ? hidden_gain : output_gain;
    w = orthogonal_matrix(static_cast<int>(w.rows()), static_cast<int>(w.cols()), gain, rng);
    b.setZero();
  }
}

}  // namespace admrl
