#include "layermon/nn_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "layermon/errors.hpp"

namespace layermon {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts are unsupported");

void ModelSpec::validate() const {
  if (input_height < 64 || input_width < 64 || input_height % 64 != 0 || input_width % 64 != 0)
    throw ValidationError("model spec: input size must be a positive multiple of 64 "
                          "(six 2x2 poolings)");
  for (int ch : conv_channels)
    if (ch < 1) throw ValidationError("model spec: conv channels must be positive");
  if (dense_hidden < 1) throw ValidationError("model spec: dense hidden width must be positive");
  if (num_classes < 2) throw ValidationError("model spec: need at least 2 classes");
}

std::string ModelSpec::to_json() const {
  nlohmann::ordered_json j;
  j["input_height"] = input_height;
  j["input_width"] = input_width;
  j["conv_channels"] = conv_channels;
  j["dense_hidden"] = dense_hidden;
  j["num_classes"] = num_classes;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("model spec is not valid JSON: ") + e.what());
  }
  ModelSpec spec;
  try {
    if (j.contains("input_height")) spec.input_height = j.at("input_height").get<int>();
    if (j.contains("input_width")) spec.input_width = j.at("input_width").get<int>();
    if (j.contains("conv_channels")) {
      const auto ch = j.at("conv_channels").get<std::vector<int>>();
      if (ch.size() != kConvBlockCount)
        throw ValidationError("model spec: exactly 6 conv blocks required");
      std::copy(ch.begin(), ch.end(), spec.conv_channels.begin());
    }
    if (j.contains("dense_hidden")) spec.dense_hidden = j.at("dense_hidden").get<int>();
    if (j.contains("num_classes")) spec.num_classes = j.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model spec: bad field type: ") + e.what());
  }
  spec.validate();
  return spec;
}

Model::Model(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  int in_ch = 1;
  for (int b = 0; b < kConvBlockCount; ++b) {
    const int out_ch = spec_.conv_channels[static_cast<std::size_t>(b)];
    ConvBlockParams& blk = blocks[static_cast<std::size_t>(b)];
    blk.weights = Tensor(out_ch, in_ch, 3, 3);
    blk.bias = Tensor(1, out_ch);
    blk.gamma.assign(static_cast<std::size_t>(out_ch), 1.0);
    blk.beta.assign(static_cast<std::size_t>(out_ch), 0.0);
    blk.running_mean.assign(static_cast<std::size_t>(out_ch), 0.0);
    blk.running_var.assign(static_cast<std::size_t>(out_ch), 1.0);
    in_ch = out_ch;
  }
  const int spatial = (spec_.input_height / 64) * (spec_.input_width / 64);
  const int flat = in_ch * spatial;
  fc1_w = Tensor(spec_.dense_hidden, flat, 1, 1);
  fc1_b = Tensor(1, spec_.dense_hidden);
  fc2_w = Tensor(spec_.num_classes, spec_.dense_hidden, 1, 1);
  fc2_b = Tensor(1, spec_.num_classes);

  class_names.resize(static_cast<std::size_t>(spec_.num_classes));
  for (int i = 0; i < spec_.num_classes; ++i) class_names[static_cast<std::size_t>(i)] = std::to_string(i);
}

void Model::init_weights(Rng& rng) {
  const auto he_fill = [&rng](Tensor& t, int fan_in) {
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.normal() * scale;
  };
  for (auto& blk : blocks) {
    he_fill(blk.weights, blk.weights.c * 9);
    std::fill(blk.bias.data.begin(), blk.bias.data.end(), 0.0);
    std::fill(blk.gamma.begin(), blk.gamma.end(), 1.0);
    std::fill(blk.beta.begin(), blk.beta.end(), 0.0);
    std::fill(blk.running_mean.begin(), blk.running_mean.end(), 0.0);
    std::fill(blk.running_var.begin(), blk.running_var.end(), 1.0);
  }
  he_fill(fc1_w, fc1_w.c);
  std::fill(fc1_b.data.begin(), fc1_b.data.end(), 0.0);
  he_fill(fc2_w, fc2_w.c);
  std::fill(fc2_b.data.begin(), fc2_b.data.end(), 0.0);
}

Tensor Model::forward(const Tensor& x, bool training, ForwardCache* cache) {
  if (x.c != 1 || x.h != spec_.input_height || x.w != spec_.input_width)
    throw ValidationError("model forward: input shape does not match spec");
  if (training && cache == nullptr)
    throw ValidationError("model forward: training mode requires a cache");

  if (cache != nullptr) cache->input = x;
  Tensor cur = x;
  for (int b = 0; b < kConvBlockCount; ++b) {
    ConvBlockParams& blk = blocks[static_cast<std::size_t>(b)];
    Tensor conv = conv2d_forward(cur, blk.weights, blk.bias);
    PoolResult pool = maxpool2x2_forward(conv);
    BatchNormCache* bn_cache = cache != nullptr ? &cache->bn[static_cast<std::size_t>(b)] : nullptr;
    Tensor bn = batchnorm_forward(pool.y, blk.gamma, blk.beta, blk.running_mean, blk.running_var,
                                  training, bn_cache);
    Tensor act = relu_forward(bn);
    if (cache != nullptr) {
      cache->conv_out[static_cast<std::size_t>(b)] = std::move(conv);
      cache->pool[static_cast<std::size_t>(b)] = std::move(pool);
      cache->bn_out[static_cast<std::size_t>(b)] = std::move(bn);
      cache->block_out[static_cast<std::size_t>(b)] = act;
    }
    cur = std::move(act);
  }

  Tensor flat = cur.reshaped(cur.n, cur.c * cur.h * cur.w, 1, 1);
  Tensor fc1 = dense_forward(flat, fc1_w, fc1_b);
  Tensor fc1_act = relu_forward(fc1);
  Tensor logits = dense_forward(fc1_act, fc2_w, fc2_b);
  if (cache != nullptr) {
    cache->fc1_in = std::move(flat);
    cache->fc1_out = std::move(fc1);
    cache->fc1_act = std::move(fc1_act);
  }
  return logits;
}

std::vector<std::vector<double>> Model::backward(const Tensor& dlogits,
                                                 const ForwardCache& cache) {
  std::vector<std::vector<double>> grads(trainable_views().size());

  DenseGrads d2 = dense_backward(cache.fc1_act, fc2_w, dlogits);
  Tensor dfc1 = relu_backward(d2.dx, cache.fc1_out);
  DenseGrads d1 = dense_backward(cache.fc1_in, fc1_w, dfc1);

  const Tensor& last = cache.block_out[kConvBlockCount - 1];
  Tensor dcur = d1.dx.reshaped(last.n, last.c, last.h, last.w);

  // grads layout mirrors trainable_views(): per block w, b, gamma, beta; then
  // fc1 w/b, fc2 w/b.
  std::size_t gi = static_cast<std::size_t>(kConvBlockCount) * 4;
  grads[gi + 0] = std::move(d1.dweights.data);
  grads[gi + 1] = std::move(d1.dbias.data);
  grads[gi + 2] = std::move(d2.dweights.data);
  grads[gi + 3] = std::move(d2.dbias.data);

  for (int b = kConvBlockCount - 1; b >= 0; --b) {
    const std::size_t bi = static_cast<std::size_t>(b);
    ConvBlockParams& blk = blocks[bi];
    Tensor dbn = relu_backward(dcur, cache.bn_out[bi]);
    BatchNormGrads bn = batchnorm_backward(dbn, cache.bn[bi], blk.gamma);
    Tensor dpool = maxpool2x2_backward(bn.dx, cache.pool[bi].argmax, cache.conv_out[bi]);
    const Tensor& conv_in = b == 0 ? cache.input : cache.block_out[bi - 1];
    ConvGrads cg = conv2d_backward(conv_in, blk.weights, dpool);

    grads[bi * 4 + 0] = std::move(cg.dweights.data);
    grads[bi * 4 + 1] = std::move(cg.dbias.data);
    grads[bi * 4 + 2] = std::move(bn.dgamma);
    grads[bi * 4 + 3] = std::move(bn.dbeta);
    dcur = std::move(cg.dx);
  }
  return grads;
}

std::vector<double> Model::predict(const GrayImage& img) {
  if (img.height != spec_.input_height || img.width != spec_.input_width)
    throw ValidationError("predict: image size does not match model spec");
  Tensor x = image_to_tensor(img);
  Tensor logits = forward(x, false, nullptr);
  Tensor probs = softmax(logits);
  return probs.data;
}

std::vector<std::span<double>> Model::trainable_views() {
  std::vector<std::span<double>> views;
  for (auto& blk : blocks) {
    views.emplace_back(blk.weights.data);
    views.emplace_back(blk.bias.data);
    views.emplace_back(blk.gamma);
    views.emplace_back(blk.beta);
  }
  views.emplace_back(fc1_w.data);
  views.emplace_back(fc1_b.data);
  views.emplace_back(fc2_w.data);
  views.emplace_back(fc2_b.data);
  return views;
}

std::vector<std::span<double>> Model::all_views() {
  std::vector<std::span<double>> views;
  for (auto& blk : blocks) {
    views.emplace_back(blk.weights.data);
    views.emplace_back(blk.bias.data);
    views.emplace_back(blk.gamma);
    views.emplace_back(blk.beta);
    views.emplace_back(blk.running_mean);
    views.emplace_back(blk.running_var);
  }
  views.emplace_back(fc1_w.data);
  views.emplace_back(fc1_b.data);
  views.emplace_back(fc2_w.data);
  views.emplace_back(fc2_b.data);
  return views;
}

std::vector<std::span<const double>> Model::all_views() const {
  auto& self = const_cast<Model&>(*this);
  std::vector<std::span<const double>> views;
  for (std::span<double> v : self.all_views()) views.emplace_back(v);
  return views;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (std::span<const double> v : all_views()) total += v.size();
  return total;
}

// Weight file: magic line, then a JSON header (spec + class names) preceded
// by its byte length, then each tensor's doubles little-endian in all_views()
// order.
static constexpr char kWeightMagic[] = "layermon-weights-v1\n";

void Model::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");

  nlohmann::ordered_json header;
  header["spec"] = nlohmann::ordered_json::parse(spec_.to_json());
  header["class_names"] = class_names;
  const std::string header_text = header.dump();

  out.write(kWeightMagic, static_cast<std::streamsize>(sizeof(kWeightMagic) - 1));
  const std::uint64_t len = header_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (std::span<const double> v : all_views())
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");

  char magic[sizeof(kWeightMagic) - 1];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kWeightMagic, sizeof magic) != 0)
    throw ValidationError("'" + path.string() + "' is not a weight file (bad magic)");

  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 20)) throw ValidationError("weight file header length corrupt");
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("weight file truncated in header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("weight file header is not valid JSON: ") + e.what());
  }

  Model model(ModelSpec::from_json(header.at("spec").dump()));
  model.class_names = header.at("class_names").get<std::vector<std::string>>();
  if (model.class_names.size() != static_cast<std::size_t>(model.spec_.num_classes))
    throw ValidationError("weight file: class name count does not match spec");

  for (std::span<double> v : model.all_views()) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw IoError("weight file truncated in tensor data");
  }
  in.peek();
  if (!in.eof()) throw ValidationError("weight file has trailing bytes");
  return model;
}

Tensor image_to_tensor(const GrayImage& img) {
  Tensor t(1, 1, img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    t.data[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return t;
}

int argmax_class(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("argmax of empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i)
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  return best;
}

}  // namespace layermon
