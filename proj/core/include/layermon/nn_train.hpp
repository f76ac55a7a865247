#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "layermon/image.hpp"
#include "layermon/nn_model.hpp"
#include "layermon/rng.hpp"

namespace layermon {

struct AugmentConfig {
  bool enabled = true;
  bool hflip = true;           // p = 0.5
  int translate_px = 4;        // uniform integer shift in [-4, 4], zero fill
  double brightness = 10.0;    // uniform shift in [-10, 10] intensity, clamped
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;            // early stopping on validation accuracy
  double val_fraction = 0.2;
  AugmentConfig augment;
  int repetitions = 1;  // > 1 switches training to the repeated-run protocol
  std::uint64_t seed = 0;

  void validate() const;
};

/// In-memory labelled image set. labels index into class_names.
struct Dataset {
  std::vector<GrayImage> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
};

/// Reads a manifest (JSON Lines) and the PGM files referenced by it, paths
/// relative to the manifest's directory. Class names are the sorted distinct
/// labels.
Dataset load_dataset(const std::filesystem::path& manifest_path);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};
using History = std::vector<EpochStats>;

std::string history_to_csv(const History& history);
void save_history(const History& history, const std::filesystem::path& path);

GrayImage hflip(const GrayImage& img);
GrayImage translate(const GrayImage& img, int dx, int dy);  // zero fill
GrayImage adjust_brightness(const GrayImage& img, double delta);

/// Independent per-image augmentation: horizontal flip (p = 0.5), integer
/// translation, brightness shift, in that order. Draws nothing when disabled.
GrayImage augment_image(const GrayImage& img, const AugmentConfig& cfg, Rng& rng);

struct TrainResult {
  Model model;
  History history;
};

/// Stratified 80/20 split, He init, Adam, early stopping on validation
/// accuracy; returns the weights of the best-validation epoch. Bit-identical
/// for identical (spec, dataset, cfg).
TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg);

struct Metrics {
  std::vector<std::vector<std::size_t>> confusion;       // [true][pred]
  std::vector<std::vector<double>> normalized_confusion;  // rows sum to 1
  std::vector<double> precision, recall, f1;             // per class
  double macro_f1 = 0.0;
  /// Two-class tasks: F1 of the anomaly class (the one not named "good",
  /// else class 1). Equals macro_f1 otherwise.
  double binary_f1 = 0.0;
  double accuracy = 0.0;
};

Metrics evaluate(Model& model, const Dataset& test_set);

struct RepetitionSummary {
  std::vector<std::vector<double>> mean_confusion;   // normalised, averaged
  std::vector<std::vector<double>> ci95_confusion;   // t-based half-widths
  double mean_f1 = 0.0;
  double ci95_f1 = 0.0;
  std::vector<double> per_rep_f1;
  std::vector<std::uint64_t> seeds;
};

/// Mean and Student-t 95% confidence half-width per normalised-confusion cell
/// and for F1 over per-repetition metrics.
RepetitionSummary summarize_repetitions(const std::vector<Metrics>& per_rep);

/// Trains `cfg.repetitions` models with independent seeds derived from
/// cfg.seed, evaluates each on test_set, and summarises.
RepetitionSummary repeat_experiment(const ModelSpec& spec, const Dataset& train_set,
                                    const Dataset& test_set, const TrainConfig& cfg);

}  // namespace layermon
