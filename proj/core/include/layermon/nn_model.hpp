#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "layermon/image.hpp"
#include "layermon/nn_layers.hpp"
#include "layermon/rng.hpp"
#include "layermon/tensor.hpp"

namespace layermon {

inline constexpr int kConvBlockCount = 6;

/// Architecture description: six conv(3x3, stride 1, pad 1) -> maxpool(2x2)
/// -> batchnorm -> ReLU blocks, then dense(hidden) + ReLU and a dense class
/// head read through softmax. The six poolings shrink the input 64-fold, so
/// the spatial size must be divisible by 64.
struct ModelSpec {
  int input_height = 192;
  int input_width = 192;
  std::array<int, kConvBlockCount> conv_channels{8, 16, 32, 64, 64, 64};
  int dense_hidden = 128;
  int num_classes = 2;

  void validate() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

struct ConvBlockParams {
  Tensor weights;  // (out_c, in_c, 3, 3)
  Tensor bias;     // (1, out_c)
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
};

/// Per-batch intermediate activations kept for backpropagation.
struct ForwardCache {
  Tensor input;
  std::array<Tensor, kConvBlockCount> conv_out;
  std::array<PoolResult, kConvBlockCount> pool;
  std::array<BatchNormCache, kConvBlockCount> bn;
  std::array<Tensor, kConvBlockCount> bn_out;   // pre-ReLU
  std::array<Tensor, kConvBlockCount> block_out;  // post-ReLU
  Tensor fc1_in;   // flattened
  Tensor fc1_out;  // pre-ReLU
  Tensor fc1_act;
};

class Model {
 public:
  Model() = default;
  explicit Model(const ModelSpec& spec);

  /// He initialisation scaled by fan-in; batchnorm starts at identity.
  void init_weights(Rng& rng);

  /// Logits for a (n, 1, h, w) batch. Training mode uses batch statistics and
  /// fills `cache` for backward; inference mode reads running statistics.
  Tensor forward(const Tensor& x, bool training, ForwardCache* cache = nullptr);

  /// Gradient of the mean loss w.r.t. every trainable tensor, same order as
  /// trainable_views().
  std::vector<std::vector<double>> backward(const Tensor& dlogits, const ForwardCache& cache);

  /// Class probabilities for one image (batchnorm in inference mode).
  std::vector<double> predict(const GrayImage& img);

  /// Trainable parameters in serialisation order (conv w/b and bn gamma/beta
  /// per block, then the two dense layers).
  std::vector<std::span<double>> trainable_views();

  /// Every tensor including batchnorm running statistics, in file order.
  std::vector<std::span<double>> all_views();
  std::vector<std::span<const double>> all_views() const;

  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  const ModelSpec& spec() const { return spec_; }
  std::vector<std::string> class_names;  // size num_classes; label order

  std::array<ConvBlockParams, kConvBlockCount> blocks;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;

 private:
  ModelSpec spec_;
};

/// Pixel intensities scaled to [0, 1]; output shape (1, 1, h, w).
Tensor image_to_tensor(const GrayImage& img);

/// Argmax with ties resolved to the lowest index.
int argmax_class(std::span<const double> probs);

}  // namespace layermon
