#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "layermon/camera.hpp"
#include "layermon/image.hpp"
#include "layermon/nn_train.hpp"
#include "layermon/registration.hpp"
#include "layermon/synth.hpp"

namespace layermon {

/// One configuration file drives every subcommand; sections are optional
/// until the subcommand that needs them runs. Relative paths resolve against
/// the config file's directory.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_root;
  std::filesystem::path camera_file;

  struct CalibrateSection {
    std::filesystem::path correspondences;
    int image_width = 0;
    int image_height = 0;
  } calibrate;

  struct PrepareSection {
    std::filesystem::path input_dir;
    std::filesystem::path reference_image;  // estimate the warp against this...
    std::filesystem::path warp_file;        // ...or apply a stored warp
    WarpKind warp = WarpKind::euclidean;
    Rect roi{};  // w == 0 or h == 0 means full frame
  } prepare;

  struct SliceSection {
    std::filesystem::path mesh;
    double layer_height = 0.1;
    double scale_px_per_mm = 10.0;  // SVG raster density
  } slice;

  struct SynthSection {
    std::string task = "type2";  // "type2" (5-class) or "type1" (good/occluded)
    std::filesystem::path mesh;
    double layer_height = 0.1;
    int canvas_width = 192;
    int canvas_height = 192;
    double scale_px_per_mm = 2.0;
    int jobs = 5;
    std::size_t target_per_class = 10;  // type2
    std::size_t good_count = 0;         // type1
    std::size_t occluded_count = 0;     // type1
    RandomisationConfig randomisation;
    std::vector<DefectSpec> defects;  // per-job plan, applied to every job
  } synth;

  struct TrainSection {
    std::filesystem::path dataset;       // manifest.jsonl; default <out>/dataset/manifest.jsonl
    std::filesystem::path test_dataset;  // needed when repetitions > 1
    std::filesystem::path model_out;     // default <out>/model.bin
    ModelSpec spec;                      // num_classes is taken from the dataset
    TrainConfig cfg;
  } train;

  struct ClassifySection {
    std::filesystem::path model;      // default <out>/model.bin
    std::filesystem::path input;      // manifest.jsonl or a directory of PGMs
    std::filesystem::path output_csv; // default <out>/probabilities.csv
  } classify;

  struct CleanSection {
    std::filesystem::path model;
    std::filesystem::path input_dir;
    double threshold = 0.5;
  } clean;

  struct ReportSection {
    std::vector<std::filesystem::path> classify_csv;
    std::filesystem::path output;  // default <out>/report.json
  } report;

  std::string config_hash;  // FNV-1a 64 of the raw config bytes

  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig parse(const std::string& text, const std::filesystem::path& base_dir);
};

/// CLI flag overrides; unset values fall back to the config.
struct CmdOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<double> threshold;
  std::optional<int> repetitions;
};

std::uint64_t fnv1a64(std::string_view bytes);

void cmd_calibrate(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_prepare(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_slice(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_synth(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_train(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_classify(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_clean(const PipelineConfig& cfg, const CmdOverrides& ov = {});
void cmd_report(const PipelineConfig& cfg, const CmdOverrides& ov = {});

/// Parsed row of a classify CSV.
struct ClassifyRow {
  std::string path;
  std::string label;  // empty when unknown
  std::vector<double> probs;
};
struct ClassifyTable {
  std::vector<std::string> classes;
  std::vector<ClassifyRow> rows;
};
ClassifyTable parse_classify_csv(const std::string& text);

}  // namespace layermon
