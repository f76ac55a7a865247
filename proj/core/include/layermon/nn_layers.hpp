#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "layermon/tensor.hpp"

namespace layermon {

/// 3x3 cross-correlation, stride 1, zero padding 1; spatial size preserved.
/// weights are (out_c, in_c, 3, 3), bias (out_c).
Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct ConvGrads {
  Tensor dx;
  Tensor dweights;
  Tensor dbias;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, const Tensor& dy);

/// Non-overlapping 2x2 max pooling, stride 2; requires even spatial dims.
/// Ties break to the first maximal element in row-major window order, and
/// argmax stores the flat input index the gradient routes back to.
struct PoolResult {
  Tensor y;
  std::vector<std::int64_t> argmax;
};
PoolResult maxpool2x2_forward(const Tensor& x);
Tensor maxpool2x2_backward(const Tensor& dy, const std::vector<std::int64_t>& argmax,
                           const Tensor& x_like);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;  // per channel
};

/// Per-channel batch normalisation over (n, h, w). Training mode normalises
/// with batch statistics (biased variance) and updates the running stats in
/// place with momentum 0.1; inference mode uses the running stats. Training
/// requires a batch of at least 2.
Tensor batchnorm_forward(const Tensor& x, std::span<const double> gamma,
                         std::span<const double> beta, std::vector<double>& running_mean,
                         std::vector<double>& running_var, bool training,
                         BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor dx;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};
BatchNormGrads batchnorm_backward(const Tensor& dy, const BatchNormCache& cache,
                                  std::span<const double> gamma);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& dy, const Tensor& x);

/// Fully connected layer: x (n, d), weights (out, d), bias (out) -> (n, out).
Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor dx;
  Tensor dweights;
  Tensor dbias;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& dy);

/// Row-wise softmax with max subtraction; shapes preserved.
Tensor softmax(const Tensor& logits);

/// Mean cross-entropy over the batch, evaluated from logits with log-sum-exp
/// (never log of the softmax output). dlogits is (softmax - onehot) / n.
struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;
};
CrossEntropyResult cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// One Adam update with bias correction; t is the 1-based step count.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::int64_t t, const AdamConfig& cfg = {});

}  // namespace layermon
