#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "layermon/image.hpp"
#include "layermon/rng.hpp"
#include "layermon/slicer.hpp"

namespace layermon {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Whether a randomised parameter is drawn once per job or once per layer.
enum class Scope { jobwise, layerwise };

std::string to_string(Scope scope);
Scope scope_from_string(const std::string& s);

/// Domain-randomisation intervals with per-parameter scope. Defaults follow
/// the rig's appearance: intensities vary between jobs, geometry and noise
/// vary between layers.
struct RandomisationConfig {
  Interval bg_intensity{20.0, 60.0};
  Interval part_intensity{150.0, 220.0};
  Interval position_jitter{-4.0, 4.0};
  Interval translucency_alpha{0.6, 0.95};
  Interval contour_blur_sigma{0.5, 1.5};
  Interval per_layer_noise_sigma{1.0, 3.0};

  Scope bg_intensity_scope = Scope::jobwise;
  Scope part_intensity_scope = Scope::jobwise;
  Scope position_jitter_scope = Scope::layerwise;
  Scope translucency_alpha_scope = Scope::layerwise;
  Scope contour_blur_sigma_scope = Scope::layerwise;
  Scope per_layer_noise_sigma_scope = Scope::layerwise;

  void validate() const;
  std::string to_json() const;
  static RandomisationConfig from_json(const std::string& text);
};

enum class DefectClass { good, agglomerate, foreign_object, porous, striation };

std::string to_string(DefectClass cls);
DefectClass defect_class_from_string(const std::string& s);

inline constexpr int kClassCount = 5;

/// The classes in canonical label order (also the dataset/model class order).
const std::vector<DefectClass>& all_defect_classes();

struct DefectSpec {
  DefectClass cls = DefectClass::good;
  int layer_begin = 0;
  int layer_end = -1;  // inclusive; empty when < layer_begin
  double intensity_offset = 40.0;

  Interval width_px{2.0, 6.0};      // striation band width
  Interval diameter_px{8.0, 30.0};  // blob diameter (foreign_object, agglomerate)
  double density = 0.01;            // porous: fraction of part pixels affected

  /// Class defaults; agglomerates are larger blobs than foreign objects.
  static DefectSpec make(DefectClass cls, int layer_begin, int layer_end);
};

/// The values drawn for one layer, in draw order.
struct LayerSample {
  double bg = 0.0;
  double part = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double alpha = 1.0;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
};

struct RasterResult {
  GrayImage image;
  GrayImage part_mask;  // 255 inside the filled part region
  bool clipped = false;  // contour escaped the canvas after jitter
  LayerSample sample;
};

struct InjectResult {
  GrayImage image;
  GrayImage mask;  // 255 where the defect geometry applies
  std::string params_json;  // sampled geometry, embedded in manifest records
};

struct ManifestRecord {
  std::string image_path;
  int job_id = 0;
  int layer_index = 0;
  std::string class_label;
  std::uint64_t seed = 0;
  std::string defect_params = "{}";
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::map<std::string, std::size_t> class_counts;
  std::vector<std::string> warnings;  // run diagnostics, not serialized with the records
};

struct JobResult {
  std::vector<GrayImage> images;
  std::vector<ManifestRecord> records;
  bool clipped = false;
};

struct JobPlan {
  SliceStack stack;
  std::vector<DefectSpec> plan;
};

/// Pools intensity extrema from a subsample of real images: background from
/// pixels outside the part masks, part from pixels inside. All other
/// intervals keep their defaults.
RandomisationConfig derive_randomisation_intervals(std::span<const GrayImage> sample,
                                                   std::span<const GrayImage> part_masks);

/// Renders one layer: fills the contours (even-odd, pixel-center rule) at a
/// sampled part intensity over a sampled background, blends with the previous
/// layer by sampled translucency, then blurs and adds noise. All parameters
/// are drawn from `rng` in LayerSample field order; scope flags only take
/// effect inside generate_job.
RasterResult rasterize_layer(const std::vector<Contour>& contours, const RandomisationConfig& cfg,
                             Rng& rng, const GrayImage* prev, int width, int height, double scale,
                             Vec2 origin_mm = {0.0, 0.0});

/// Applies one defect overlay and returns the image, the affected-pixel mask
/// and the sampled geometry. Pixels outside the mask are untouched; an
/// intensity offset of zero leaves the image unchanged. Porous defects need
/// the part mask.
InjectResult inject_defect(const GrayImage& img, const DefectSpec& spec, Rng& rng,
                           const GrayImage* part_mask = nullptr);

/// Renders every layer of a job in order with translucency chaining.
/// Deterministic in (stack, cfg, seed, plan): jobwise parameters come from
/// the job stream, everything else from per-layer substreams.
JobResult generate_job(const SliceStack& stack, const RandomisationConfig& cfg,
                       std::uint64_t seed, const std::vector<DefectSpec>& plan, int width,
                       int height, double scale, int job_id = 0);

/// Process-flow (hidden print bed) surrogate: covers at least min_coverage of
/// the image from a random side with a near-uniform occluder at a random
/// intensity. Returns the occluded image and the covered fraction.
struct OcclusionResult {
  GrayImage image;
  double coverage = 0.0;
};
OcclusionResult apply_occlusion(const GrayImage& img, Rng& rng, double min_coverage = 0.6);

/// Two-class process-flow dataset: renders defect-free jobs, labels
/// good_count images "good" and occludes another occluded_count as
/// "occluded". Writes images plus manifest.jsonl into out_dir.
DatasetManifest generate_type1_dataset(const std::vector<SliceStack>& stacks,
                                       const RandomisationConfig& cfg, std::uint64_t seed,
                                       std::size_t good_count, std::size_t occluded_count,
                                       const std::filesystem::path& out_dir, int width,
                                       int height, double scale);

/// Runs all jobs, balances classes to exactly target_per_class records each
/// (uniform subsample of any surplus), writes PGM images plus manifest.jsonl
/// into out_dir and returns the manifest.
DatasetManifest generate_dataset(const std::vector<JobPlan>& jobs,
                                 const RandomisationConfig& cfg, std::uint64_t seed,
                                 std::size_t target_per_class,
                                 const std::filesystem::path& out_dir, int width, int height,
                                 double scale);

std::string manifest_to_jsonl(const DatasetManifest& manifest);
DatasetManifest manifest_from_jsonl(const std::string& text);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace layermon
