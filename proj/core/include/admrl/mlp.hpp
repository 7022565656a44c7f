#pragma once

#include <span>
#include <vector>

#include "admrl/types.hpp"

namespace admrl {

/// Fully connected network with tanh hidden layers and a linear head,
/// operating on column batches (features x samples). Parameters live in a
/// caller-owned flat array: for each layer W (out x in, column-major) then b.
///
/// Besides the usual forward/backward pass this exposes the forward-mode
/// directional derivative (jvp) and the directional derivative of the
/// backward pass (r_backward), which together give exact Hessian-vector
/// products of any loss that is a function of the network output.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes);

  const std::vector<int>& sizes() const { return sizes_; }
  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  int layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int param_count() const { return param_count_; }

  struct Cache {
    std::vector<Mat> inputs;  // inputs[l] is the input to layer l
  };

  Mat forward(std::span<const double> params, const Mat& x, Cache* cache = nullptr) const;

  /// grad += d/dparams of sum(delta_out .* output).
  void backward(std::span<const double> params, const Cache& cache, const Mat& delta_out,
                std::span<double> grad) const;

  /// Column i of the result is the parameter gradient of sample i alone.
  Mat per_sample_grads(std::span<const double> params, const Cache& cache, const Mat& delta_out) const;

  /// Directional derivative of the output along `dir`. Fills `r_inputs`
  /// (directional derivatives of every layer input) for r_backward.
  Mat jvp(std::span<const double> params, std::span<const double> dir, const Cache& cache,
          std::vector<Mat>* r_inputs) const;

  /// hvp += directional derivative (along `dir`) of backward(delta_out),
  /// where r_delta_out is the directional derivative of delta_out itself.
  void r_backward(std::span<const double> params, std::span<const double> dir, const Cache& cache,
                  const std::vector<Mat>& r_inputs, const Mat& delta_out, const Mat& r_delta_out,
                  std::span<double> hvp) const;

  /// Orthogonal weights with the given gains (hidden layers, last layer), zero biases.
  void init_orthogonal(std::span<double> params, double hidden_gain, double output_gain, Rng& rng) const;

 private:
  struct LayerView {
    Eigen::Map<const Mat> w;
    Eigen::Map<const Vec> b;
  };
  LayerView layer(std::span<const double> params, int l) const;
  std::pair<Eigen::Map<Mat>, Eigen::Map<Vec>> layer_mut(std::span<double> params, int l) const;

  std::vector<int> sizes_;
  std::vector<int> offsets_;
  int param_count_ = 0;
};

/// Matrix with orthonormal rows or columns (whichever is shorter), scaled by `gain`.
Mat orthogonal_matrix(int rows, int cols, double gain, Rng& rng);

}  // namespace admrl
