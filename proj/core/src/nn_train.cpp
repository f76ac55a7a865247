#include "layermon/nn_train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "layermon/errors.hpp"
#include "layermon/stats.hpp"
#include "layermon/synth.hpp"
#include "text_io.hpp"

namespace layermon {

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw ValidationError("train config: batch size must be >= 2 (batchnorm)");
  if (max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("train config: patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ValidationError("train config: val_fraction must lie in (0, 1)");
  if (augment.translate_px < 0 || augment.brightness < 0.0)
    throw ValidationError("train config: augmentation magnitudes must be non-negative");
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (manifest.records.empty()) throw ValidationError("dataset manifest is empty");
  const std::filesystem::path base = manifest_path.parent_path();

  std::set<std::string> names;
  for (const ManifestRecord& r : manifest.records) names.insert(r.class_label);

  Dataset ds;
  ds.class_names.assign(names.begin(), names.end());
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i)
    index[ds.class_names[i]] = static_cast<int>(i);

  ds.images.reserve(manifest.records.size());
  ds.labels.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records) {
    ds.images.push_back(load_image(base / r.image_path));
    ds.labels.push_back(index.at(r.class_label));
  }
  return ds;
}

std::string history_to_csv(const History& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_accuracy\n";
  char buf[96];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_accuracy);
    out << buf;
  }
  return out.str();
}

void save_history(const History& history, const std::filesystem::path& path) {
  detail::write_text_file(path, history_to_csv(history));
}

// ---------------------------------------------------------------------------
// Augmentation

GrayImage hflip(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
  return out;
}

GrayImage translate(const GrayImage& img, int dx, int dy) {
  GrayImage out(img.width, img.height, 0);
  for (int y = 0; y < img.height; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= img.height) continue;
    for (int x = 0; x < img.width; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= img.width) continue;
      out.at(x, y) = img.at(sx, sy);
    }
  }
  return out;
}

GrayImage adjust_brightness(const GrayImage& img, double delta) {
  GrayImage out = img;
  for (auto& px : out.pixels) {
    const double v = std::floor(px + delta + 0.5);
    px = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

GrayImage augment_image(const GrayImage& img, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return img;
  GrayImage out = img;
  if (cfg.hflip && rng.uniform01() < 0.5) out = hflip(out);
  if (cfg.translate_px > 0) {
    const int span = 2 * cfg.translate_px + 1;
    const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) - cfg.translate_px;
    const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) - cfg.translate_px;
    if (dx != 0 || dy != 0) out = translate(out, dx, dy);
  }
  if (cfg.brightness > 0.0) {
    const double delta = rng.uniform(-cfg.brightness, cfg.brightness);
    out = adjust_brightness(out, delta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr std::uint64_t kSplitTag = 0x51;
constexpr std::uint64_t kInitTag = 0x1717;
constexpr std::uint64_t kEpochTag = 0xe90c;

Tensor make_batch(const Dataset& ds, std::span<const std::size_t> idx,
                  const AugmentConfig* aug, Rng* rng, int height, int width) {
  Tensor x(static_cast<int>(idx.size()), 1, height, width);
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const GrayImage* img = &ds.images[idx[s]];
    GrayImage scratch;
    if (aug != nullptr) {
      scratch = augment_image(*img, *aug, *rng);
      img = &scratch;
    }
    double* dst = x.data.data() + s * static_cast<std::size_t>(height) * width;
    for (std::size_t i = 0; i < img->pixels.size(); ++i)
      dst[i] = static_cast<double>(img->pixels[i]) / 255.0;
  }
  return x;
}

std::vector<double> snapshot(const Model& model) {
  std::vector<double> flat;
  for (std::span<const double> v : model.all_views()) flat.insert(flat.end(), v.begin(), v.end());
  return flat;
}

void restore(Model& model, const std::vector<double>& flat) {
  std::size_t off = 0;
  for (std::span<double> v : model.all_views()) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
    off += v.size();
  }
}

double validation_accuracy(Model& model, const Dataset& ds, std::span<const std::size_t> idx) {
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    const std::vector<double> probs = model.predict(ds.images[i]);
    if (argmax_class(probs) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (dataset.images.empty()) throw ValidationError("train: dataset is empty");
  if (dataset.images.size() != dataset.labels.size())
    throw ValidationError("train: image/label count mismatch");

  std::set<int> present(dataset.labels.begin(), dataset.labels.end());
  if (present.size() < 2) throw ValidationError("train: dataset contains a single class");
  if (static_cast<std::size_t>(spec.num_classes) != dataset.class_names.size())
    throw ValidationError("train: model class count does not match dataset (" +
                          std::to_string(spec.num_classes) + " vs " +
                          std::to_string(dataset.class_names.size()) + ")");
  for (const GrayImage& img : dataset.images)
    if (img.height != spec.input_height || img.width != spec.input_width)
      throw ValidationError("train: image size incompatible with model spec");

  Rng master(cfg.seed);

  // Stratified split: shuffle within each class, hold out val_fraction.
  std::vector<std::size_t> train_idx, val_idx;
  {
    Rng split_rng = master.split(kSplitTag);
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.labels.size(); ++i)
      by_label[dataset.labels[i]].push_back(i);
    for (auto& [label, idx] : by_label) {
      for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(split_rng.below(i))]);
      std::size_t n_val =
          static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(idx.size()) + 0.5));
      if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
      else n_val = 0;
      val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
      train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
  }
  if (train_idx.empty() || val_idx.empty())
    throw ValidationError("train: dataset too small for a train/validation split");

  Model model(spec);
  model.class_names = dataset.class_names;
  {
    Rng init_rng = master.split(kInitTag);
    model.init_weights(init_rng);
  }

  std::vector<std::span<double>> params = model.trainable_views();
  std::vector<AdamState> adam(params.size());
  std::int64_t step = 0;

  TrainResult result;
  double best_acc = -1.0;
  std::vector<double> best_weights = snapshot(model);
  int epochs_since_improvement = 0;

  std::vector<std::size_t> order = train_idx;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng epoch_rng = master.split(kEpochTag + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(epoch_rng.below(i))]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bn = end - start;
      if (bn < 2) continue;  // batchnorm cannot train on a single sample

      const std::span<const std::size_t> batch_idx(order.data() + start, bn);
      Tensor x = make_batch(dataset, batch_idx, cfg.augment.enabled ? &cfg.augment : nullptr,
                            &epoch_rng, spec.input_height, spec.input_width);
      std::vector<int> labels(bn);
      for (std::size_t s = 0; s < bn; ++s) labels[s] = dataset.labels[batch_idx[s]];

      ForwardCache cache;
      Tensor logits = model.forward(x, true, &cache);
      CrossEntropyResult ce = cross_entropy_with_logits(logits, labels);
      std::vector<std::vector<double>> grads = model.backward(ce.dlogits, cache);

      ++step;
      for (std::size_t p = 0; p < params.size(); ++p)
        adam_step(params[p], grads[p], adam[p], step, cfg.adam);

      loss_sum += ce.loss * static_cast<double>(bn);
      seen += bn;
    }
    if (seen == 0) throw ValidationError("train: no usable batches (batch size vs dataset)");

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.val_accuracy = validation_accuracy(model, dataset, val_idx);
    result.history.push_back(stats);

    if (stats.val_accuracy > best_acc) {
      best_acc = stats.val_accuracy;
      best_weights = snapshot(model);
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
      if (epochs_since_improvement >= cfg.patience) break;
    }
  }

  restore(model, best_weights);
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

Metrics evaluate(Model& model, const Dataset& test_set) {
  if (test_set.images.empty()) throw ValidationError("evaluate: empty test set");
  if (test_set.images.size() != test_set.labels.size())
    throw ValidationError("evaluate: image/label count mismatch");
  const int k = model.spec().num_classes;
  if (static_cast<std::size_t>(k) != test_set.class_names.size())
    throw ValidationError("evaluate: class count mismatch between model and test set");

  Metrics m;
  m.confusion.assign(static_cast<std::size_t>(k), std::vector<std::size_t>(static_cast<std::size_t>(k), 0));

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_set.images.size(); ++i) {
    const int truth = test_set.labels[i];
    if (truth < 0 || truth >= k) throw ValidationError("evaluate: label out of range");
    const int pred = argmax_class(model.predict(test_set.images[i]));
    m.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
    if (pred == truth) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(test_set.images.size());

  m.normalized_confusion.assign(static_cast<std::size_t>(k),
                                std::vector<double>(static_cast<std::size_t>(k), 0.0));
  for (int t = 0; t < k; ++t) {
    std::size_t row_sum = 0;
    for (int p = 0; p < k; ++p) row_sum += m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    if (row_sum == 0) continue;
    for (int p = 0; p < k; ++p)
      m.normalized_confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] =
          static_cast<double>(m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]) /
          static_cast<double>(row_sum);
  }

  m.precision.assign(static_cast<std::size_t>(k), 0.0);
  m.recall.assign(static_cast<std::size_t>(k), 0.0);
  m.f1.assign(static_cast<std::size_t>(k), 0.0);
  double f1_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    std::size_t tp = m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    std::size_t fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += m.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      fn += m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
    }
    const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    m.precision[static_cast<std::size_t>(c)] = prec;
    m.recall[static_cast<std::size_t>(c)] = rec;
    m.f1[static_cast<std::size_t>(c)] = f1;
    f1_sum += f1;
  }
  m.macro_f1 = f1_sum / static_cast<double>(k);

  m.binary_f1 = m.macro_f1;
  if (k == 2) {
    int positive = 1;
    for (int c = 0; c < 2; ++c)
      if (test_set.class_names[static_cast<std::size_t>(1 - c)] == "good") positive = c;
    m.binary_f1 = m.f1[static_cast<std::size_t>(positive)];
  }
  return m;
}

RepetitionSummary summarize_repetitions(const std::vector<Metrics>& per_rep) {
  if (per_rep.size() < 2)
    throw ValidationError("summarize_repetitions: need at least 2 repetitions");
  const std::size_t k = per_rep.front().normalized_confusion.size();
  for (const Metrics& m : per_rep)
    if (m.normalized_confusion.size() != k)
      throw ValidationError("summarize_repetitions: inconsistent class counts");

  RepetitionSummary s;
  s.mean_confusion.assign(k, std::vector<double>(k, 0.0));
  s.ci95_confusion.assign(k, std::vector<double>(k, 0.0));

  std::vector<double> cell(per_rep.size());
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t r = 0; r < per_rep.size(); ++r)
        cell[r] = per_rep[r].normalized_confusion[t][p];
      s.mean_confusion[t][p] = mean(cell);
      s.ci95_confusion[t][p] = ci95_half_width(cell);
    }
  }

  s.per_rep_f1.resize(per_rep.size());
  for (std::size_t r = 0; r < per_rep.size(); ++r) s.per_rep_f1[r] = per_rep[r].binary_f1;
  s.mean_f1 = mean(s.per_rep_f1);
  s.ci95_f1 = ci95_half_width(s.per_rep_f1);
  return s;
}

RepetitionSummary repeat_experiment(const ModelSpec& spec, const Dataset& train_set,
                                    const Dataset& test_set, const TrainConfig& cfg) {
  if (cfg.repetitions < 2) throw ValidationError("repeat_experiment: repetitions must be >= 2");

  Rng master(cfg.seed);
  std::vector<Metrics> per_rep;
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < cfg.repetitions; ++r) {
    TrainConfig rep_cfg = cfg;
    rep_cfg.seed = master.split(static_cast<std::uint64_t>(r)).seed();
    seeds.push_back(rep_cfg.seed);
    TrainResult trained = train(spec, train_set, rep_cfg);
    per_rep.push_back(evaluate(trained.model, test_set));
  }
  RepetitionSummary summary = summarize_repetitions(per_rep);
  summary.seeds = std::move(seeds);
  return summary;
}

}  // namespace layermon
