#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "layermon/errors.hpp"
#include "layermon/image.hpp"
#include "layermon/pipeline.hpp"

using namespace layermon;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

/// Runs the installed binary, captures combined output, returns the exit code.
int run_cli(const std::string& args, const std::filesystem::path& scratch,
            std::string* output = nullptr) {
  const std::filesystem::path capture = scratch / "cli_output.txt";
  const std::string cmd = std::string(LAYERMON_CLI_PATH) + " " + args + " > \"" +
                          capture.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (output != nullptr) *output = read_file(capture);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
}

/// Small five-class pipeline config: an 8 mm cube sliced into 16 layers with
/// every defect class planned somewhere in the stack.
ordered_json pipeline_config(const std::filesystem::path& mesh,
                             const std::filesystem::path& out_root) {
  ordered_json cfg;
  cfg["seed"] = 11;
  cfg["output_root"] = out_root.string();
  cfg["synth"] = {
      {"task", "type2"},
      {"mesh", mesh.string()},
      {"layer_height", 0.5},
      {"canvas_width", 64},
      {"canvas_height", 64},
      {"scale_px_per_mm", 4.0},
      {"jobs", 4},
      {"target_per_class", 3},
      {"defects",
       json::array({{{"class", "agglomerate"}, {"layer_begin", 0}, {"layer_end", 3}},
                    {{"class", "foreign_object"}, {"layer_begin", 4}, {"layer_end", 7}},
                    {{"class", "porous"}, {"layer_begin", 8}, {"layer_end", 11}},
                    {{"class", "striation"}, {"layer_begin", 12}, {"layer_end", 14}}})},
  };
  cfg["train"] = {
      {"spec",
       {{"input_height", 64},
        {"input_width", 64},
        {"conv_channels", json::array({4, 4, 8, 8, 8, 8})},
        {"dense_hidden", 16}}},
      {"batch_size", 4},
      {"max_epochs", 1},
      {"patience", 1},
      {"augment", {{"enabled", false}}},
  };
  return cfg;
}

}  // namespace

TEST_CASE("cli help and argument errors") {
  testutil::TempDir dir("cli_args");
  std::string out;
  SUBCASE("--help lists the subcommands") {
    CHECK(run_cli("--help", dir.path(), &out) == 0);
    CHECK(out.find("synth") != std::string::npos);
    CHECK(out.find("train") != std::string::npos);
    CHECK(out.find("classify") != std::string::npos);
  }
  SUBCASE("a subcommand is required") {
    CHECK(run_cli("", dir.path(), &out) != 0);
  }
  SUBCASE("unknown subcommand rejected") {
    CHECK(run_cli("frobnicate --config x.json", dir.path(), &out) != 0);
  }
  SUBCASE("--config is mandatory") {
    CHECK(run_cli("slice", dir.path(), &out) != 0);
  }
}

TEST_CASE("cli error exit codes") {
  testutil::TempDir dir("cli_codes");
  std::string out;

  SUBCASE("missing config file maps to the i/o code") {
    const auto absent = dir.path() / "absent.json";
    CHECK(run_cli("slice --config \"" + absent.string() + "\"", dir.path(), &out) == 2);
    CHECK(out.find("i/o error") != std::string::npos);
  }
  SUBCASE("malformed config maps to the validation code") {
    const auto cfg = dir.path() / "broken.json";
    write_file(cfg, "{ not json");
    CHECK(run_cli("slice --config \"" + cfg.string() + "\"", dir.path(), &out) == 1);
    CHECK(out.find("error") != std::string::npos);
  }
  SUBCASE("slice without a mesh entry is a config error") {
    const auto cfg = dir.path() / "nomesh.json";
    write_file(cfg, ordered_json{{"output_root", (dir.path() / "out").string()}}.dump());
    CHECK(run_cli("slice --config \"" + cfg.string() + "\"", dir.path(), &out) == 1);
  }
  SUBCASE("synth with a missing mesh file is an i/o error") {
    ordered_json cfg =
        pipeline_config(dir.path() / "missing.stl", dir.path() / "out");
    const auto path = dir.path() / "synth.json";
    write_file(path, cfg.dump(2));
    CHECK(run_cli("synth --config \"" + path.string() + "\"", dir.path(), &out) == 2);
  }
  SUBCASE("prepare without a camera file is a config error") {
    ordered_json cfg;
    cfg["output_root"] = (dir.path() / "out").string();
    cfg["prepare"] = {{"input_dir", dir.path().string()}};
    const auto path = dir.path() / "prep.json";
    write_file(path, cfg.dump(2));
    CHECK(run_cli("prepare --config \"" + path.string() + "\"", dir.path(), &out) == 1);
    CHECK(out.find("camera") != std::string::npos);
  }
}

TEST_CASE("cli slice writes layer artefacts") {
  testutil::TempDir dir("cli_slice");
  const auto mesh = dir.path() / "cube.stl";
  testutil::write_stl(testutil::cube_triangles(8.0), mesh);
  const auto out_root = dir.path() / "out";
  ordered_json cfg;
  cfg["output_root"] = out_root.string();
  cfg["slice"] = {{"mesh", mesh.string()}, {"layer_height", 0.5}, {"scale_px_per_mm", 4.0}};
  const auto path = dir.path() / "slice.json";
  write_file(path, cfg.dump(2));

  std::string out;
  REQUIRE(run_cli("slice --config \"" + path.string() + "\"", dir.path(), &out) == 0);
  CHECK(std::filesystem::exists(out_root / "slices" / "layer_0000.svg"));
  CHECK(std::filesystem::exists(out_root / "slices" / "layer_0015.svg"));
  CHECK(std::filesystem::exists(out_root / "slices" / "stack_index.json"));
  CHECK(std::filesystem::exists(out_root / "timings" / "slice.json"));
}

TEST_CASE("cli prepare with an identity camera copies the stack") {
  testutil::TempDir dir("cli_prepare");
  const auto input_dir = dir.path() / "frames";
  std::filesystem::create_directories(input_dir);
  for (int i = 0; i < 3; ++i)
    save_image(testutil::value_noise_texture(64, 64, 40 + static_cast<std::uint64_t>(i)),
               input_dir / ("frame_" + std::to_string(i) + ".pgm"));

  const auto camera = dir.path() / "camera.json";
  write_file(camera, ordered_json{{"fx", 100.0},
                                  {"fy", 100.0},
                                  {"cx", 32.0},
                                  {"cy", 32.0},
                                  {"k1", 0.0},
                                  {"k2", 0.0}}
                         .dump(2));

  const auto out_root = dir.path() / "out";
  ordered_json cfg;
  cfg["output_root"] = out_root.string();
  cfg["camera_file"] = camera.string();
  cfg["prepare"] = {{"input_dir", input_dir.string()}};
  const auto path = dir.path() / "prepare.json";
  write_file(path, cfg.dump(2));

  std::string out;
  REQUIRE(run_cli("prepare --config \"" + path.string() + "\"", dir.path(), &out) == 0);

  SUBCASE("every frame survives byte for byte") {
    for (int i = 0; i < 3; ++i) {
      const std::string name = "frame_" + std::to_string(i) + ".pgm";
      CHECK(read_file(out_root / "prepared" / name) == read_file(input_dir / name));
    }
    const json summary = json::parse(read_file(out_root / "prepare_summary.json"));
    CHECK(summary.at("inputs") == 3);
    CHECK(summary.at("outputs") == 3);
  }
  SUBCASE("roi crops every output") {
    cfg["prepare"]["roi"] = {{"x", 8}, {"y", 8}, {"w", 32}, {"h", 16}};
    write_file(path, cfg.dump(2));
    REQUIRE(run_cli("prepare --config \"" + path.string() + "\"", dir.path(), &out) == 0);
    const GrayImage img = load_image(out_root / "prepared" / "frame_0.pgm");
    CHECK(img.width == 32);
    CHECK(img.height == 16);
  }
}

TEST_CASE("cli end-to-end synthetic pipeline") {
  testutil::TempDir dir("cli_pipeline");
  const auto mesh = dir.path() / "cube.stl";
  testutil::write_stl(testutil::cube_triangles(8.0), mesh);
  const auto out1 = dir.path() / "out1";
  const ordered_json cfg = pipeline_config(mesh, out1);
  const auto cfg_path = dir.path() / "pipeline.json";
  write_file(cfg_path, cfg.dump(2));
  const std::string cfg_arg = " --config \"" + cfg_path.string() + "\"";

  std::string out;
  REQUIRE(run_cli("synth" + cfg_arg, dir.path(), &out) == 0);

  const auto manifest_path = out1 / "dataset" / "manifest.jsonl";
  REQUIRE(std::filesystem::exists(manifest_path));
  const json summary = json::parse(read_file(out1 / "synth_summary.json"));
  CHECK(summary.at("seed") == 11);
  CHECK(summary.at("records") == 15);
  for (const char* cls : {"good", "agglomerate", "foreign_object", "porous", "striation"})
    CHECK(summary.at("class_counts").at(cls) == 3);

  SUBCASE("synth rerun into a fresh root is byte identical") {
    const auto out2 = dir.path() / "out2";
    REQUIRE(run_cli("synth" + cfg_arg + " --out \"" + out2.string() + "\"", dir.path(),
                    &out) == 0);
    CHECK(read_file(out2 / "dataset" / "manifest.jsonl") == read_file(manifest_path));
    // Spot-check one image payload as well.
    const DatasetManifest m = load_manifest(manifest_path);
    const std::string first = m.records.front().image_path;
    CHECK(read_file(out2 / "dataset" / first) == read_file(out1 / "dataset" / first));
  }
  SUBCASE("seed override changes the dataset and is recorded") {
    const auto out3 = dir.path() / "out3";
    REQUIRE(run_cli("synth" + cfg_arg + " --seed 99 --out \"" + out3.string() + "\"",
                    dir.path(), &out) == 0);
    const json s3 = json::parse(read_file(out3 / "synth_summary.json"));
    CHECK(s3.at("seed") == 99);
    CHECK(read_file(out3 / "dataset" / "manifest.jsonl") != read_file(manifest_path));
  }
  SUBCASE("train, classify, clean and report run off the dataset") {
    REQUIRE(run_cli("train" + cfg_arg, dir.path(), &out) == 0);
    REQUIRE(std::filesystem::exists(out1 / "model.bin"));
    const std::string history = read_file(out1 / "history.csv");
    CHECK(history.rfind("epoch,train_loss,val_accuracy\n", 0) == 0);

    // Training again into a second root over an identical dataset must
    // reproduce the weight file exactly.
    const auto out2 = dir.path() / "out2";
    REQUIRE(run_cli("synth" + cfg_arg + " --out \"" + out2.string() + "\"", dir.path(),
                    &out) == 0);
    REQUIRE(run_cli("train" + cfg_arg + " --out \"" + out2.string() + "\"", dir.path(),
                    &out) == 0);
    CHECK(read_file(out2 / "model.bin") == read_file(out1 / "model.bin"));

    // Classify the training manifest; labels flow into the csv.
    ordered_json cfg2 = cfg;
    cfg2["classify"] = {{"input", manifest_path.string()}};
    write_file(cfg_path, cfg2.dump(2));
    REQUIRE(run_cli("classify" + cfg_arg, dir.path(), &out) == 0);
    const std::string csv = read_file(out1 / "probabilities.csv");
    CHECK(csv.rfind("path,label,p_agglomerate,p_foreign_object,p_good,p_porous,p_striation\n",
                    0) == 0);
    const ClassifyTable table = parse_classify_csv(csv);
    CHECK(table.rows.size() == 15);
    CHECK(table.classes.size() == 5);
    for (const ClassifyRow& r : table.rows) {
      CHECK(!r.label.empty());
      double sum = 0.0;
      for (double p : r.probs) sum += p;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    // Threshold 0 routes everything into bad/.
    cfg2["clean"] = {{"model", (out1 / "model.bin").string()},
                     {"input_dir", (out1 / "dataset").string()}};
    write_file(cfg_path, cfg2.dump(2));
    REQUIRE(run_cli("clean" + cfg_arg + " --threshold 0", dir.path(), &out) == 0);
    const json clean_summary = json::parse(read_file(out1 / "clean_summary.json"));
    CHECK(clean_summary.at("bad") == 15);
    CHECK(clean_summary.at("good") == 0);
    CHECK(clean_summary.at("skipped") == 0);
    std::size_t bad_files = 0;
    for (const auto& e : std::filesystem::directory_iterator(out1 / "bad"))
      bad_files += e.path().extension() == ".pgm" ? 1 : 0;
    CHECK(bad_files == 15);

    // Report over the classify output; identical reruns agree on everything
    // except the timing section.
    REQUIRE(run_cli("report" + cfg_arg, dir.path(), &out) == 0);
    json first_report = json::parse(read_file(out1 / "report.json"));
    REQUIRE(run_cli("report" + cfg_arg, dir.path(), &out) == 0);
    json second_report = json::parse(read_file(out1 / "report.json"));
    CHECK(first_report.at("config_hash") == second_report.at("config_hash"));
    first_report.erase("timings");
    second_report.erase("timings");
    CHECK(first_report == second_report);

    CHECK(first_report.at("dataset_sizes").at("rows") == 15);
    CHECK(first_report.at("dataset_sizes").at("unlabelled_rows") == 0);
    CHECK(first_report.at("confusion").at("classes").size() == 5);
    CHECK(first_report.at("confusion").at("ci95").is_null());  // single table
    CHECK(first_report.at("mean_probabilities").contains("striation"));
  }
}

TEST_CASE("cli classify over a directory leaves labels empty") {
  testutil::TempDir dir("cli_classify_dir");
  // A plain image folder plus a model trained elsewhere is the common
  // production shape; build the model in process to keep this test light.
  const auto mesh = dir.path() / "cube.stl";
  testutil::write_stl(testutil::cube_triangles(8.0), mesh);
  const auto out_root = dir.path() / "out";
  ordered_json cfg = pipeline_config(mesh, out_root);
  const auto cfg_path = dir.path() / "cfg.json";
  write_file(cfg_path, cfg.dump(2));
  const std::string cfg_arg = " --config \"" + cfg_path.string() + "\"";

  std::string out;
  REQUIRE(run_cli("synth" + cfg_arg, dir.path(), &out) == 0);
  REQUIRE(run_cli("train" + cfg_arg, dir.path(), &out) == 0);

  const auto frames = dir.path() / "frames";
  std::filesystem::create_directories(frames);
  for (int i = 0; i < 4; ++i)
    save_image(testutil::value_noise_texture(64, 64, 60 + static_cast<std::uint64_t>(i)),
               frames / ("layer_" + std::to_string(i) + ".pgm"));

  cfg["classify"] = {{"input", frames.string()}};
  write_file(cfg_path, cfg.dump(2));
  REQUIRE(run_cli("classify" + cfg_arg, dir.path(), &out) == 0);
  const ClassifyTable table = parse_classify_csv(read_file(out_root / "probabilities.csv"));
  CHECK(table.rows.size() == 4);
  for (const ClassifyRow& r : table.rows) CHECK(r.label.empty());
  // Directory listing is sorted, so row order is stable.
  CHECK(table.rows.front().path == "layer_0.pgm");

  SUBCASE("empty input directory yields an empty table") {
    const auto empty = dir.path() / "empty";
    std::filesystem::create_directories(empty);
    cfg["classify"] = {{"input", empty.string()}};
    write_file(cfg_path, cfg.dump(2));
    REQUIRE(run_cli("classify" + cfg_arg, dir.path(), &out) == 0);
    const ClassifyTable t = parse_classify_csv(read_file(out_root / "probabilities.csv"));
    CHECK(t.rows.empty());
    CHECK(t.classes.size() == 5);
  }
}

TEST_CASE("parse_classify_csv validation") {
  SUBCASE("well-formed table") {
    const ClassifyTable t = parse_classify_csv(
        "path,label,p_good,p_bad\nimg_0.pgm,good,0.75,0.25\nimg_1.pgm,,0.5,0.5\n");
    REQUIRE(t.classes == std::vector<std::string>{"good", "bad"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].label == "good");
    CHECK(t.rows[0].probs == std::vector<double>{0.75, 0.25});
    CHECK(t.rows[1].label.empty());
  }
  SUBCASE("empty file rejected") {
    CHECK_THROWS_AS(parse_classify_csv(""), ValidationError);
  }
  SUBCASE("wrong leading columns rejected") {
    CHECK_THROWS_AS(parse_classify_csv("file,label,p_good\n"), ValidationError);
    CHECK_THROWS_AS(parse_classify_csv("path,tag,p_good\n"), ValidationError);
  }
  SUBCASE("probability columns must carry the prefix") {
    CHECK_THROWS_AS(parse_classify_csv("path,label,good\n"), ValidationError);
  }
  SUBCASE("missing probability columns rejected") {
    CHECK_THROWS_AS(parse_classify_csv("path,label\n"), ValidationError);
  }
  SUBCASE("non-numeric probability carries its line number") {
    CHECK_THROWS_WITH_AS(
        parse_classify_csv("path,label,p_good\nimg.pgm,good,zero.five\n"),
        doctest::Contains("line 2"), ValidationError);
  }
  SUBCASE("column count mismatch rejected") {
    CHECK_THROWS_AS(parse_classify_csv("path,label,p_good,p_bad\nimg.pgm,good,0.5\n"),
                    ValidationError);
  }
}

TEST_CASE("pipeline config parsing") {
  SUBCASE("relative paths resolve against the config directory") {
    const PipelineConfig cfg = PipelineConfig::parse(
        R"({"output_root": "out", "camera_file": "cam.json", "slice": {"mesh": "part.stl"}})",
        "/base");
    CHECK(cfg.output_root == std::filesystem::path("/base/out"));
    CHECK(cfg.camera_file == std::filesystem::path("/base/cam.json"));
    CHECK(cfg.slice.mesh == std::filesystem::path("/base/part.stl"));
  }
  SUBCASE("absolute paths pass through") {
    const PipelineConfig cfg =
        PipelineConfig::parse(R"({"camera_file": "/abs/cam.json"})", "/base");
    CHECK(cfg.camera_file == std::filesystem::path("/abs/cam.json"));
  }
  SUBCASE("config hash is stable and text-sensitive") {
    const PipelineConfig a = PipelineConfig::parse("{}", "/");
    const PipelineConfig b = PipelineConfig::parse("{}", "/somewhere/else");
    const PipelineConfig c = PipelineConfig::parse("{ }", "/");
    CHECK(a.config_hash == b.config_hash);
    CHECK(a.config_hash != c.config_hash);
    CHECK(a.config_hash.rfind("fnv1a64:", 0) == 0);
    CHECK(a.config_hash.size() == 8 + 16);
  }
  SUBCASE("bad synth task rejected") {
    CHECK_THROWS_AS(PipelineConfig::parse(R"({"synth": {"task": "type3"}})", "/"),
                    ValidationError);
  }
  SUBCASE("wrong field type rejected") {
    CHECK_THROWS_AS(PipelineConfig::parse(R"({"seed": "eleven"})", "/"), ValidationError);
  }
  SUBCASE("defect entries parse their intervals") {
    const PipelineConfig cfg = PipelineConfig::parse(
        R"({"synth": {"mesh": "m.stl", "defects": [
              {"class": "striation", "layer_begin": 2, "layer_end": 5,
               "width_px": {"lo": 3, "hi": 4}, "intensity_offset": 25}]}})",
        "/");
    REQUIRE(cfg.synth.defects.size() == 1);
    CHECK(cfg.synth.defects[0].cls == DefectClass::striation);
    CHECK(cfg.synth.defects[0].layer_begin == 2);
    CHECK(cfg.synth.defects[0].layer_end == 5);
    CHECK(cfg.synth.defects[0].width_px.lo == 3.0);
    CHECK(cfg.synth.defects[0].width_px.hi == 4.0);
    CHECK(cfg.synth.defects[0].intensity_offset == 25.0);
  }
  SUBCASE("fnv1a64 matches the reference vectors") {
    // Published FNV-1a test vectors.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  }
}
