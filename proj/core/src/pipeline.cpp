#include "layermon/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "layermon/errors.hpp"
#include "layermon/parallel.hpp"
#include "layermon/slicer.hpp"
#include "layermon/stats.hpp"
#include "text_io.hpp"

namespace layermon {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

using json = nlohmann::json;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string get_string(const json& j, const char* key, const std::string& fallback = "") {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ValidationError(std::string("config: '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

template <typename T>
T get_number(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ValidationError(std::string("config: '") + key + "' must be a number");
  return j.at(key).get<T>();
}

Interval interval_from_json(const json& j, const Interval& fallback) {
  Interval iv = fallback;
  if (j.contains("lo")) iv.lo = j.at("lo").get<double>();
  if (j.contains("hi")) iv.hi = j.at("hi").get<double>();
  return iv;
}

DefectSpec defect_from_json(const json& j) {
  if (!j.contains("class")) throw ValidationError("config: defect entry needs a 'class'");
  const DefectClass cls = defect_class_from_string(j.at("class").get<std::string>());
  DefectSpec spec = DefectSpec::make(cls, get_number<int>(j, "layer_begin", 0),
                                     get_number<int>(j, "layer_end", -1));
  spec.intensity_offset = get_number<double>(j, "intensity_offset", spec.intensity_offset);
  if (j.contains("width_px")) spec.width_px = interval_from_json(j.at("width_px"), spec.width_px);
  if (j.contains("diameter_px"))
    spec.diameter_px = interval_from_json(j.at("diameter_px"), spec.diameter_px);
  spec.density = get_number<double>(j, "density", spec.density);
  return spec;
}

ModelSpec model_spec_from_config(const json& j) {
  // ModelSpec::from_json validates; the config section carries the same keys.
  return ModelSpec::from_json(j.dump());
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.batch_size = get_number<int>(j, "batch_size", cfg.batch_size);
  cfg.max_epochs = get_number<int>(j, "max_epochs", cfg.max_epochs);
  cfg.patience = get_number<int>(j, "patience", cfg.patience);
  cfg.val_fraction = get_number<double>(j, "val_fraction", cfg.val_fraction);
  cfg.repetitions = get_number<int>(j, "repetitions", cfg.repetitions);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    cfg.adam.lr = get_number<double>(a, "lr", cfg.adam.lr);
    cfg.adam.beta1 = get_number<double>(a, "beta1", cfg.adam.beta1);
    cfg.adam.beta2 = get_number<double>(a, "beta2", cfg.adam.beta2);
    cfg.adam.eps = get_number<double>(a, "eps", cfg.adam.eps);
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    if (a.contains("enabled")) cfg.augment.enabled = a.at("enabled").get<bool>();
    if (a.contains("hflip")) cfg.augment.hflip = a.at("hflip").get<bool>();
    cfg.augment.translate_px = get_number<int>(a, "translate_px", cfg.augment.translate_px);
    cfg.augment.brightness = get_number<double>(a, "brightness", cfg.augment.brightness);
  }
  return cfg;
}

}  // namespace

PipelineConfig PipelineConfig::parse(const std::string& text,
                                     const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");

  PipelineConfig cfg;
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof hash_buf, "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(text)));
  cfg.config_hash = hash_buf;

  cfg.seed = get_number<std::uint64_t>(j, "seed", 0);
  cfg.output_root = resolve(base_dir, get_string(j, "output_root", "out"));
  cfg.camera_file = resolve(base_dir, get_string(j, "camera_file"));

  if (j.contains("calibrate")) {
    const json& s = j.at("calibrate");
    cfg.calibrate.correspondences = resolve(base_dir, get_string(s, "correspondences"));
    cfg.calibrate.image_width = get_number<int>(s, "image_width", 0);
    cfg.calibrate.image_height = get_number<int>(s, "image_height", 0);
  }

  if (j.contains("prepare")) {
    const json& s = j.at("prepare");
    cfg.prepare.input_dir = resolve(base_dir, get_string(s, "input_dir"));
    cfg.prepare.reference_image = resolve(base_dir, get_string(s, "reference_image"));
    cfg.prepare.warp_file = resolve(base_dir, get_string(s, "warp_file"));
    if (s.contains("warp")) cfg.prepare.warp = warp_kind_from_string(s.at("warp").get<std::string>());
    if (s.contains("roi")) {
      const json& r = s.at("roi");
      cfg.prepare.roi = Rect{get_number<int>(r, "x", 0), get_number<int>(r, "y", 0),
                             get_number<int>(r, "w", 0), get_number<int>(r, "h", 0)};
    }
  }

  if (j.contains("slice")) {
    const json& s = j.at("slice");
    cfg.slice.mesh = resolve(base_dir, get_string(s, "mesh"));
    cfg.slice.layer_height = get_number<double>(s, "layer_height", cfg.slice.layer_height);
    cfg.slice.scale_px_per_mm =
        get_number<double>(s, "scale_px_per_mm", cfg.slice.scale_px_per_mm);
  }

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    cfg.synth.task = get_string(s, "task", cfg.synth.task);
    if (cfg.synth.task != "type1" && cfg.synth.task != "type2")
      throw ValidationError("config: synth.task must be 'type1' or 'type2'");
    cfg.synth.mesh = resolve(base_dir, get_string(s, "mesh"));
    cfg.synth.layer_height = get_number<double>(s, "layer_height", cfg.synth.layer_height);
    cfg.synth.canvas_width = get_number<int>(s, "canvas_width", cfg.synth.canvas_width);
    cfg.synth.canvas_height = get_number<int>(s, "canvas_height", cfg.synth.canvas_height);
    cfg.synth.scale_px_per_mm = get_number<double>(s, "scale_px_per_mm", cfg.synth.scale_px_per_mm);
    cfg.synth.jobs = get_number<int>(s, "jobs", cfg.synth.jobs);
    cfg.synth.target_per_class =
        get_number<std::size_t>(s, "target_per_class", cfg.synth.target_per_class);
    cfg.synth.good_count = get_number<std::size_t>(s, "good_count", cfg.synth.good_count);
    cfg.synth.occluded_count =
        get_number<std::size_t>(s, "occluded_count", cfg.synth.occluded_count);
    if (s.contains("randomisation"))
      cfg.synth.randomisation = RandomisationConfig::from_json(s.at("randomisation").dump());
    if (s.contains("defects")) {
      if (!s.at("defects").is_array())
        throw ValidationError("config: synth.defects must be an array");
      for (const json& d : s.at("defects")) cfg.synth.defects.push_back(defect_from_json(d));
    }
  }

  if (j.contains("train")) {
    const json& s = j.at("train");
    cfg.train.dataset = resolve(base_dir, get_string(s, "dataset"));
    cfg.train.test_dataset = resolve(base_dir, get_string(s, "test_dataset"));
    cfg.train.model_out = resolve(base_dir, get_string(s, "model_out"));
    if (s.contains("spec")) cfg.train.spec = model_spec_from_config(s.at("spec"));
    cfg.train.cfg = train_config_from_json(s);
  }

  if (j.contains("classify")) {
    const json& s = j.at("classify");
    cfg.classify.model = resolve(base_dir, get_string(s, "model"));
    cfg.classify.input = resolve(base_dir, get_string(s, "input"));
    cfg.classify.output_csv = resolve(base_dir, get_string(s, "output_csv"));
  }

  if (j.contains("clean")) {
    const json& s = j.at("clean");
    cfg.clean.model = resolve(base_dir, get_string(s, "model"));
    cfg.clean.input_dir = resolve(base_dir, get_string(s, "input_dir"));
    cfg.clean.threshold = get_number<double>(s, "threshold", cfg.clean.threshold);
  }

  if (j.contains("report")) {
    const json& s = j.at("report");
    if (s.contains("classify_csv")) {
      const json& c = s.at("classify_csv");
      if (c.is_string()) {
        cfg.report.classify_csv.push_back(resolve(base_dir, c.get<std::string>()));
      } else if (c.is_array()) {
        for (const json& e : c)
          cfg.report.classify_csv.push_back(resolve(base_dir, e.get<std::string>()));
      } else {
        throw ValidationError("config: report.classify_csv must be a path or array of paths");
      }
    }
    cfg.report.output = resolve(base_dir, get_string(s, "output"));
  }

  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return parse(detail::read_text_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Shared command plumbing

namespace {

std::filesystem::path out_root(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = ov.out ? *ov.out : cfg.output_root;
  if (root.empty()) throw ValidationError("config: output_root is not set");
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create output root '" + root.string() + "'");
  return root;
}

std::uint64_t master_seed(const PipelineConfig& cfg, const CmdOverrides& ov) {
  return ov.seed ? *ov.seed : cfg.seed;
}

/// Writes wall-clock duration to <out>/timings/<stage>.json on destruction.
/// Timing artifacts are the only outputs allowed to differ between reruns.
class StageTimer {
 public:
  StageTimer(std::filesystem::path root, std::string stage)
      : root_(std::move(root)), stage_(std::move(stage)),
        start_(std::chrono::steady_clock::now()) {}

  ~StageTimer() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::error_code ec;
    std::filesystem::create_directories(root_ / "timings", ec);
    if (ec) return;
    nlohmann::ordered_json j{{"stage", stage_}, {"seconds", seconds}};
    try {
      detail::write_text_file(root_ / "timings" / (stage_ + ".json"), j.dump(2) + "\n");
    } catch (...) {
      // Timing is best-effort; never mask the command's own result.
    }
  }

 private:
  std::filesystem::path root_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<std::filesystem::path> list_pgms(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("'" + dir.string() + "' is not a readable directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

SliceStack slice_for_synth(const PipelineConfig::SynthSection& s) {
  if (s.mesh.empty()) throw ValidationError("config: synth.mesh is not set");
  const TriMesh mesh = load_stl(s.mesh);  // missing file surfaces as an I/O error
  return slice_job(mesh, s.layer_height);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

void cmd_calibrate(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "calibrate");

  if (cfg.calibrate.correspondences.empty())
    throw ValidationError("config: calibrate.correspondences is not set");
  const std::vector<CalibView> views = load_correspondences(cfg.calibrate.correspondences);

  CalibOptions opts;
  opts.image_width = cfg.calibrate.image_width;
  opts.image_height = cfg.calibrate.image_height;
  const CalibResult result = calibrate(views, opts);

  const std::filesystem::path target =
      cfg.camera_file.empty() ? root / "camera.json" : cfg.camera_file;
  save_calib_result(result, target);
}

void cmd_prepare(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "prepare");

  // Fail fast on configuration before any image is touched.
  if (cfg.camera_file.empty())
    throw ValidationError("config: camera_file is not set (required by prepare)");
  if (!std::filesystem::exists(cfg.camera_file))
    throw ValidationError("config: camera file '" + cfg.camera_file.string() +
                          "' does not exist");
  const CameraModel camera = load_camera_model(cfg.camera_file);
  if (cfg.prepare.input_dir.empty())
    throw ValidationError("config: prepare.input_dir is not set");

  const std::vector<std::filesystem::path> inputs = list_pgms(cfg.prepare.input_dir);

  WarpParams warp = WarpParams::identity(cfg.prepare.warp);
  if (!cfg.prepare.warp_file.empty()) {
    // A stored warp carries its own kind; the config's warp kind only matters
    // when the warp has to be estimated here.
    warp = WarpParams::from_json(detail::read_text_file(cfg.prepare.warp_file));
  } else if (!cfg.prepare.reference_image.empty()) {
    if (inputs.empty())
      throw ValidationError("prepare: cannot estimate a warp from an empty input directory");
    const GrayImage reference = load_image(cfg.prepare.reference_image);
    const GrayImage first = undistort_image(load_image(inputs.front()), camera);
    warp = ecc_align(reference, first, cfg.prepare.warp).params;
  }

  const std::filesystem::path out_dir = root / "prepared";
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "'");

  parallel_for(inputs.size(), [&](std::size_t i) {
    GrayImage img = load_image(inputs[i]);
    img = undistort_image(img, camera);
    img = warp_image(img, warp);
    Rect roi = cfg.prepare.roi;
    if (roi.w == 0 || roi.h == 0) roi = Rect{0, 0, img.width, img.height};
    img = crop_roi(img, roi);
    save_image(img, out_dir / inputs[i].filename());
  });

  nlohmann::ordered_json summary{{"inputs", inputs.size()}, {"outputs", inputs.size()}};
  detail::write_text_file(root / "prepare_summary.json", summary.dump(2) + "\n");
}

void cmd_slice(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "slice");

  if (cfg.slice.mesh.empty()) throw ValidationError("config: slice.mesh is not set");
  const TriMesh mesh = load_stl(cfg.slice.mesh);
  const SliceStack stack = slice_job(mesh, cfg.slice.layer_height);
  write_slice_artifacts(stack, mesh.bounds, cfg.slice.scale_px_per_mm, root / "slices");
}

void cmd_synth(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "synth");

  const PipelineConfig::SynthSection& s = cfg.synth;
  const SliceStack stack = slice_for_synth(s);
  const std::uint64_t seed = master_seed(cfg, ov);
  const std::filesystem::path dataset_dir = root / "dataset";

  DatasetManifest manifest;
  if (s.task == "type1") {
    const std::vector<SliceStack> stacks(static_cast<std::size_t>(s.jobs), stack);
    manifest = generate_type1_dataset(stacks, s.randomisation, seed, s.good_count,
                                      s.occluded_count, dataset_dir, s.canvas_width,
                                      s.canvas_height, s.scale_px_per_mm);
  } else {
    const std::vector<JobPlan> jobs(static_cast<std::size_t>(s.jobs), JobPlan{stack, s.defects});
    manifest = generate_dataset(jobs, s.randomisation, seed, s.target_per_class, dataset_dir,
                                s.canvas_width, s.canvas_height, s.scale_px_per_mm);
  }

  nlohmann::ordered_json summary;
  summary["seed"] = seed;
  summary["records"] = manifest.records.size();
  nlohmann::ordered_json counts;
  for (const auto& [label, count] : manifest.class_counts) counts[label] = count;
  summary["class_counts"] = counts;
  summary["warnings"] = manifest.warnings;
  detail::write_text_file(root / "synth_summary.json", summary.dump(2) + "\n");
}

void cmd_train(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "train");

  std::filesystem::path manifest_path = cfg.train.dataset;
  if (manifest_path.empty()) manifest_path = root / "dataset" / "manifest.jsonl";
  const Dataset dataset = load_dataset(manifest_path);

  ModelSpec spec = cfg.train.spec;
  spec.num_classes = static_cast<int>(dataset.class_names.size());

  TrainConfig tc = cfg.train.cfg;
  tc.seed = master_seed(cfg, ov);
  if (ov.repetitions) tc.repetitions = *ov.repetitions;

  TrainResult result = train(spec, dataset, tc);
  const std::filesystem::path model_path =
      cfg.train.model_out.empty() ? root / "model.bin" : cfg.train.model_out;
  result.model.save(model_path);
  save_history(result.history, root / "history.csv");

  if (tc.repetitions > 1) {
    if (cfg.train.test_dataset.empty())
      throw ValidationError("config: train.test_dataset is required when repetitions > 1");
    const Dataset test_set = load_dataset(cfg.train.test_dataset);
    const RepetitionSummary summary = repeat_experiment(spec, dataset, test_set, tc);

    nlohmann::ordered_json j;
    j["repetitions"] = tc.repetitions;
    j["seeds"] = summary.seeds;
    j["classes"] = dataset.class_names;
    j["mean_f1"] = summary.mean_f1;
    j["ci95_f1"] = summary.ci95_f1;
    j["per_rep_f1"] = summary.per_rep_f1;
    j["mean_confusion"] = summary.mean_confusion;
    j["ci95_confusion"] = summary.ci95_confusion;
    detail::write_text_file(root / "repetitions.json", j.dump(2) + "\n");
  }
}

namespace {

void write_classify_csv(const std::filesystem::path& path,
                        const std::vector<std::string>& classes,
                        const std::vector<ClassifyRow>& rows) {
  std::ostringstream out;
  out << "path,label";
  for (const std::string& c : classes) out << ",p_" << c;
  out << "\n";
  for (const ClassifyRow& r : rows) {
    out << r.path << "," << r.label;
    for (double p : r.probs) out << "," << format_double(p);
    out << "\n";
  }
  detail::write_text_file(path, out.str());
}

}  // namespace

void cmd_classify(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "classify");

  const std::filesystem::path model_path =
      cfg.classify.model.empty() ? root / "model.bin" : cfg.classify.model;
  Model model = Model::load(model_path);

  if (cfg.classify.input.empty()) throw ValidationError("config: classify.input is not set");

  // Inference never touches the batchnorm running estimates, so one shared
  // model instance serves all workers.
  std::vector<ClassifyRow> rows;
  if (cfg.classify.input.extension() == ".jsonl") {
    const DatasetManifest manifest = load_manifest(cfg.classify.input);
    const std::filesystem::path base = cfg.classify.input.parent_path();
    rows.resize(manifest.records.size());
    parallel_for(manifest.records.size(), [&](std::size_t i) {
      const ManifestRecord& rec = manifest.records[i];
      rows[i] = ClassifyRow{rec.image_path, rec.class_label,
                            model.predict(load_image(base / rec.image_path))};
    });
  } else {
    const std::vector<std::filesystem::path> files = list_pgms(cfg.classify.input);
    rows.resize(files.size());
    parallel_for(files.size(), [&](std::size_t i) {
      rows[i] = ClassifyRow{files[i].filename().string(), "",
                            model.predict(load_image(files[i]))};
    });
  }

  const std::filesystem::path csv_path =
      cfg.classify.output_csv.empty() ? root / "probabilities.csv" : cfg.classify.output_csv;
  write_classify_csv(csv_path, model.class_names, rows);
}

void cmd_clean(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "clean");

  if (cfg.clean.model.empty()) throw ValidationError("config: clean.model is not set");
  Model model = Model::load(cfg.clean.model);
  const auto good_it = std::find(model.class_names.begin(), model.class_names.end(), "good");
  if (good_it == model.class_names.end())
    throw ValidationError("clean: model has no 'good' class");
  const std::size_t good_index =
      static_cast<std::size_t>(good_it - model.class_names.begin());

  if (cfg.clean.input_dir.empty()) throw ValidationError("config: clean.input_dir is not set");
  const double threshold = ov.threshold ? *ov.threshold : cfg.clean.threshold;

  const std::filesystem::path good_dir = root / "good";
  const std::filesystem::path bad_dir = root / "bad";
  std::error_code ec;
  std::filesystem::create_directories(good_dir, ec);
  std::filesystem::create_directories(bad_dir, ec);

  std::size_t good_count = 0, bad_count = 0, skipped = 0;
  for (const std::filesystem::path& file : list_pgms(cfg.clean.input_dir)) {
    GrayImage img;
    try {
      img = load_image(file);
    } catch (const IoError&) {
      ++skipped;
      continue;
    }
    std::vector<double> probs;
    try {
      probs = model.predict(img);
    } catch (const ValidationError&) {
      ++skipped;  // wrong size for the model counts as unreadable input
      continue;
    }
    const double p_bad = 1.0 - probs[good_index];
    const std::filesystem::path target =
        (p_bad >= threshold ? bad_dir : good_dir) / file.filename();
    std::filesystem::copy_file(file, target, std::filesystem::copy_options::overwrite_existing,
                               ec);
    if (ec) throw IoError("cannot copy '" + file.string() + "' to '" + target.string() + "'");
    (p_bad >= threshold ? bad_count : good_count) += 1;
  }

  nlohmann::ordered_json summary{{"good", good_count},
                                 {"bad", bad_count},
                                 {"skipped", skipped},
                                 {"threshold", threshold}};
  detail::write_text_file(root / "clean_summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Classify CSV parsing and the report

ClassifyTable parse_classify_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("classify csv: empty file");

  ClassifyTable table;
  {
    std::istringstream header(line);
    std::string field;
    int idx = 0;
    while (std::getline(header, field, ',')) {
      if (idx == 0 && field != "path")
        throw ValidationError("classify csv: first column must be 'path'");
      if (idx == 1 && field != "label")
        throw ValidationError("classify csv: second column must be 'label'");
      if (idx >= 2) {
        if (field.rfind("p_", 0) != 0)
          throw ValidationError("classify csv: probability columns must be named p_<class>");
        table.classes.push_back(field.substr(2));
      }
      ++idx;
    }
    if (table.classes.empty()) throw ValidationError("classify csv: no probability columns");
  }

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    ClassifyRow r;
    int idx = 0;
    while (std::getline(row, field, ',')) {
      if (idx == 0) {
        r.path = field;
      } else if (idx == 1) {
        r.label = field;
      } else {
        try {
          r.probs.push_back(std::stod(field));
        } catch (const std::exception&) {
          throw ValidationError("classify csv line " + std::to_string(lineno) +
                                ": bad probability value '" + field + "'");
        }
      }
      ++idx;
    }
    if (r.probs.size() != table.classes.size())
      throw ValidationError("classify csv line " + std::to_string(lineno) +
                            ": wrong number of probability columns");
    table.rows.push_back(std::move(r));
  }
  return table;
}

void cmd_report(const PipelineConfig& cfg, const CmdOverrides& ov) {
  const std::filesystem::path root = out_root(cfg, ov);
  StageTimer timer(root, "report");

  std::vector<std::filesystem::path> csv_paths = cfg.report.classify_csv;
  if (csv_paths.empty()) csv_paths.push_back(root / "probabilities.csv");

  std::vector<ClassifyTable> tables;
  for (const std::filesystem::path& p : csv_paths)
    tables.push_back(parse_classify_csv(detail::read_text_file(p)));
  const std::vector<std::string>& classes = tables.front().classes;
  for (const ClassifyTable& t : tables)
    if (t.classes != classes)
      throw ValidationError("report: classify csv files disagree on class columns");

  const std::size_t k = classes.size();
  std::map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < k; ++i) class_index[classes[i]] = i;

  // Fig. 5 statistic: mean probability vector per true class, pooled rows.
  std::map<std::string, std::vector<double>> prob_sums;
  std::map<std::string, std::size_t> label_counts;
  std::size_t unlabelled = 0;

  // Fig. 4 statistic: per-table normalised confusion, then mean and CI.
  std::vector<std::vector<std::vector<double>>> per_table_norm;

  for (const ClassifyTable& t : tables) {
    std::vector<std::vector<double>> counts(k, std::vector<double>(k, 0.0));
    for (const ClassifyRow& r : t.rows) {
      if (r.label.empty()) {
        ++unlabelled;
        continue;
      }
      const auto it = class_index.find(r.label);
      if (it == class_index.end())
        throw ValidationError("report: row label '" + r.label +
                              "' is not one of the probability columns");
      auto& sums = prob_sums[r.label];
      if (sums.empty()) sums.assign(k, 0.0);
      for (std::size_t c = 0; c < k; ++c) sums[c] += r.probs[c];
      label_counts[r.label] += 1;

      std::size_t pred = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (r.probs[c] > r.probs[pred]) pred = c;
      counts[it->second][pred] += 1.0;
    }
    for (std::size_t row = 0; row < k; ++row) {
      double sum = 0.0;
      for (double v : counts[row]) sum += v;
      if (sum > 0.0)
        for (double& v : counts[row]) v /= sum;
    }
    per_table_norm.push_back(std::move(counts));
  }

  nlohmann::ordered_json report;
  report["config_hash"] = cfg.config_hash;
  report["seeds"] = {{"master", master_seed(cfg, ov)}};

  nlohmann::ordered_json sizes;
  sizes["classify_tables"] = tables.size();
  std::size_t total_rows = 0;
  for (const ClassifyTable& t : tables) total_rows += t.rows.size();
  sizes["rows"] = total_rows;
  sizes["unlabelled_rows"] = unlabelled;
  nlohmann::ordered_json per_label;
  for (const auto& [label, count] : label_counts) per_label[label] = count;
  sizes["rows_per_label"] = per_label;
  report["dataset_sizes"] = sizes;

  nlohmann::ordered_json mean_probs;
  for (const auto& [label, sums] : prob_sums) {
    nlohmann::ordered_json entry;
    for (std::size_t c = 0; c < k; ++c)
      entry[classes[c]] = sums[c] / static_cast<double>(label_counts.at(label));
    mean_probs[label] = entry;
  }
  report["mean_probabilities"] = mean_probs;

  nlohmann::ordered_json confusion;
  confusion["classes"] = classes;
  if (per_table_norm.size() == 1) {
    confusion["mean"] = per_table_norm.front();
    confusion["ci95"] = nullptr;
  } else {
    std::vector<std::vector<double>> mean_cm(k, std::vector<double>(k, 0.0));
    std::vector<std::vector<double>> ci_cm(k, std::vector<double>(k, 0.0));
    std::vector<double> cell(per_table_norm.size());
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t t = 0; t < per_table_norm.size(); ++t)
          cell[t] = per_table_norm[t][r][c];
        mean_cm[r][c] = mean(cell);
        ci_cm[r][c] = ci95_half_width(cell);
      }
    }
    confusion["mean"] = mean_cm;
    confusion["ci95"] = ci_cm;
  }
  report["confusion"] = confusion;

  nlohmann::json warnings = nlohmann::json::array();
  const std::filesystem::path synth_summary = root / "synth_summary.json";
  if (std::filesystem::exists(synth_summary)) {
    try {
      const nlohmann::json s = nlohmann::json::parse(detail::read_text_file(synth_summary));
      if (s.contains("warnings"))
        for (const auto& w : s.at("warnings")) warnings.push_back(w);
    } catch (const std::exception&) {
      warnings.push_back("synth_summary.json unreadable");
    }
  }
  report["warnings"] = warnings;

  // Timing lives in its own section so everything above is reproducible.
  nlohmann::ordered_json timings;
  const std::filesystem::path timing_dir = root / "timings";
  if (std::filesystem::is_directory(timing_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(timing_dir))
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        const nlohmann::json t = nlohmann::json::parse(detail::read_text_file(f));
        timings[t.at("stage").get<std::string>()] = t.at("seconds");
      } catch (const std::exception&) {
        // Skip malformed timing stubs.
      }
    }
  }
  report["timings"] = timings;

  const std::filesystem::path target =
      cfg.report.output.empty() ? root / "report.json" : cfg.report.output;
  detail::write_text_file(target, report.dump(2) + "\n");
}

}  // namespace layermon
