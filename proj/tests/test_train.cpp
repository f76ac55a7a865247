#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "layermon/errors.hpp"
#include "layermon/nn_train.hpp"
#include "layermon/synth.hpp"

using namespace layermon;

namespace {

ModelSpec tiny_spec(int classes = 2) {
  ModelSpec spec;
  spec.input_height = 64;
  spec.input_width = 64;
  spec.conv_channels = {4, 4, 8, 8, 8, 8};
  spec.dense_hidden = 16;
  spec.num_classes = classes;
  return spec;
}

/// Hand-built model that routes the global max intensity to the class-0
/// logit: the centre tap copies channel 0 through every block, pooling takes
/// the max, and batchnorm at init is near identity. Predicts "defect"
/// (class 0) for images whose peak is above roughly half range, "good"
/// otherwise. No training involved, so evaluation oracles are exact.
Model threshold_model() {
  Model model(tiny_spec());
  for (auto& blk : model.blocks) blk.weights.at(0, 0, 1, 1) = 1.0;
  model.fc1_w.at(0, 0, 0, 0) = 1.0;
  model.fc2_w.at(0, 0, 0, 0) = 10.0;
  model.fc2_b.data = {0.0, 5.0};
  model.class_names = {"defect", "good"};
  return model;
}

Dataset two_tone_dataset(int defect_bright, int defect_dark, int good_bright, int good_dark) {
  Dataset ds;
  ds.class_names = {"defect", "good"};
  const auto add = [&ds](int count, std::uint8_t level, int label) {
    for (int i = 0; i < count; ++i) {
      ds.images.emplace_back(64, 64, level);
      ds.labels.push_back(label);
    }
  };
  add(defect_bright, 200, 0);
  add(defect_dark, 50, 0);
  add(good_bright, 200, 1);
  add(good_dark, 50, 1);
  return ds;
}

/// Separable blob-position dataset the network can actually learn.
Dataset blob_dataset(int per_class, std::uint64_t seed) {
  Dataset ds;
  ds.class_names = {"left", "right"};
  Rng rng(seed);
  for (int i = 0; i < 2 * per_class; ++i) {
    const int cls = i % 2;
    const int ox = cls == 0 ? 8 : 40;
    GrayImage img(64, 64, 0);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const bool lit = x >= ox && x < ox + 16 && y >= 24 && y < 40;
        img.at(x, y) = static_cast<std::uint8_t>((lit ? 200 : 30) + rng.below(10));
      }
    ds.images.push_back(img);
    ds.labels.push_back(cls);
  }
  return ds;
}

std::vector<double> flat_weights(const Model& model) {
  std::vector<double> flat;
  for (std::span<const double> v : model.all_views()) flat.insert(flat.end(), v.begin(), v.end());
  return flat;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("batch size below 2") {
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("val fraction bounds") {
    cfg.val_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.val_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("patience positive") {
    cfg.patience = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("augment magnitudes non-negative") {
    cfg.augment.translate_px = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}

TEST_CASE("load_dataset resolves paths against the manifest directory") {
  testutil::TempDir dir("dataset");
  const GrayImage a(64, 64, 10);
  const GrayImage b(64, 64, 90);
  const GrayImage c(64, 64, 170);
  save_image(a, dir.path() / "img_a.pgm");
  save_image(b, dir.path() / "img_b.pgm");
  save_image(c, dir.path() / "img_c.pgm");

  DatasetManifest manifest;
  manifest.records.push_back({"img_a.pgm", 0, 0, "zeta", 1, "{}"});
  manifest.records.push_back({"img_b.pgm", 0, 1, "alpha", 1, "{}"});
  manifest.records.push_back({"img_c.pgm", 0, 2, "zeta", 1, "{}"});
  manifest.class_counts = {{"zeta", 2}, {"alpha", 1}};
  save_manifest(manifest, dir.path() / "manifest.jsonl");

  const Dataset ds = load_dataset(dir.path() / "manifest.jsonl");
  REQUIRE(ds.images.size() == 3);
  // Class names are the sorted distinct labels.
  CHECK(ds.class_names == std::vector<std::string>{"alpha", "zeta"});
  CHECK(ds.labels == std::vector<int>{1, 0, 1});
  CHECK(ds.images[0].at(0, 0) == 10);
  CHECK(ds.images[1].at(0, 0) == 90);

  SUBCASE("missing image file") {
    manifest.records.push_back({"absent.pgm", 0, 3, "zeta", 1, "{}"});
    save_manifest(manifest, dir.path() / "manifest.jsonl");
    CHECK_THROWS_AS(load_dataset(dir.path() / "manifest.jsonl"), IoError);
  }
  SUBCASE("missing manifest") {
    CHECK_THROWS_AS(load_dataset(dir.path() / "nope.jsonl"), IoError);
  }
}

TEST_CASE("augmentation primitives") {
  const GrayImage img = testutil::value_noise_texture(32, 32, 3);
  SUBCASE("hflip is an involution and mirrors columns") {
    const GrayImage once = hflip(img);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(once.at(x, y) == img.at(31 - x, y));
    CHECK(hflip(once) == img);
  }
  SUBCASE("translate shifts and zero fills") {
    const GrayImage t = translate(img, 3, -2);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const int sx = x - 3, sy = y + 2;
        const std::uint8_t expect =
            (sx >= 0 && sx < 32 && sy >= 0 && sy < 32) ? img.at(sx, sy) : 0;
        CHECK(t.at(x, y) == expect);
      }
    CHECK(translate(img, 0, 0) == img);
  }
  SUBCASE("brightness shifts round and clamp") {
    GrayImage g(2, 1, 0);
    g.pixels = {250, 100};
    const GrayImage up = adjust_brightness(g, 10.0);
    CHECK(up.pixels[0] == 255);
    CHECK(up.pixels[1] == 110);
    g.pixels = {5, 100};
    const GrayImage down = adjust_brightness(g, -10.0);
    CHECK(down.pixels[0] == 0);
    CHECK(down.pixels[1] == 90);
    const GrayImage half = adjust_brightness(g, 2.5);
    CHECK(half.pixels[1] == 103);  // floor(102.5 + 0.5)
  }
  SUBCASE("disabled augmentation draws nothing from the stream") {
    AugmentConfig cfg;
    cfg.enabled = false;
    Rng a(5), b(5);
    const GrayImage out = augment_image(img, cfg, a);
    CHECK(out == img);
    CHECK(a.uniform01() == b.uniform01());  // no draws consumed
  }
  SUBCASE("enabled augmentation preserves the frame size") {
    AugmentConfig cfg;
    Rng rng(6);
    for (int i = 0; i < 10; ++i) {
      const GrayImage out = augment_image(img, cfg, rng);
      CHECK(out.width == 32);
      CHECK(out.height == 32);
    }
  }
}

TEST_CASE("history serialisation") {
  History h;
  h.push_back({1, 0.693, 0.5});
  h.push_back({2, 0.25, 0.875});
  const std::string csv = history_to_csv(h);
  CHECK(csv.rfind("epoch,train_loss,val_accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("2,") != std::string::npos);
  testutil::TempDir dir("history");
  save_history(h, dir.path() / "history.csv");
  CHECK(std::filesystem::exists(dir.path() / "history.csv"));
}

TEST_CASE("train validation failures") {
  const ModelSpec spec = tiny_spec();
  TrainConfig cfg;
  cfg.max_epochs = 1;
  SUBCASE("empty dataset") {
    CHECK_THROWS_AS(train(spec, Dataset{}, cfg), ValidationError);
  }
  SUBCASE("single class") {
    Dataset ds = two_tone_dataset(6, 0, 0, 0);  // every label is 0
    CHECK_THROWS_WITH_AS(train(spec, ds, cfg), doctest::Contains("single class"),
                         ValidationError);
  }
  SUBCASE("class count mismatch") {
    Dataset ds = two_tone_dataset(4, 0, 4, 0);
    CHECK_THROWS_AS(train(tiny_spec(3), ds, cfg), ValidationError);
  }
  SUBCASE("image size mismatch") {
    Dataset ds = two_tone_dataset(4, 0, 4, 0);
    ds.images[0] = GrayImage(32, 32, 0);
    CHECK_THROWS_AS(train(spec, ds, cfg), ValidationError);
  }
}

TEST_CASE("train is deterministic and learns a separable problem") {
  const ModelSpec spec = tiny_spec();
  const Dataset ds = blob_dataset(8, 2024);
  TrainConfig cfg;
  cfg.batch_size = 4;
  // Inference-mode accuracy trails training loss here: with three optimiser
  // steps per epoch the stacked batchnorm running statistics take roughly
  // fifteen epochs to settle, so give the run room beyond that.
  cfg.max_epochs = 20;
  cfg.patience = 20;
  cfg.seed = 77;
  cfg.augment.enabled = false;
  cfg.adam.lr = 2e-3;

  const TrainResult first = train(spec, ds, cfg);
  REQUIRE(!first.history.empty());
  CHECK(first.history.front().epoch == 1);
  CHECK(static_cast<int>(first.history.size()) <= cfg.max_epochs);
  for (std::size_t i = 0; i < first.history.size(); ++i)
    CHECK(first.history[i].epoch == static_cast<int>(i) + 1);
  CHECK(first.model.class_names == ds.class_names);

  SUBCASE("bit-identical rerun") {
    const TrainResult second = train(spec, ds, cfg);
    CHECK(flat_weights(first.model) == flat_weights(second.model));
    REQUIRE(first.history.size() == second.history.size());
    for (std::size_t i = 0; i < first.history.size(); ++i) {
      CHECK(first.history[i].train_loss == second.history[i].train_loss);
      CHECK(first.history[i].val_accuracy == second.history[i].val_accuracy);
    }
  }
  SUBCASE("different seed diverges") {
    TrainConfig other = cfg;
    other.seed = 78;
    const TrainResult second = train(spec, ds, other);
    CHECK(flat_weights(first.model) != flat_weights(second.model));
  }
  SUBCASE("learns to separate the training set") {
    Model model = first.model;
    const Metrics m = evaluate(model, ds);
    CHECK(m.accuracy >= 0.75);
  }
}

TEST_CASE("early stopping with patience one") {
  const ModelSpec spec = tiny_spec();
  const Dataset ds = blob_dataset(6, 11);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 12;
  cfg.patience = 1;
  cfg.seed = 5;
  cfg.augment.enabled = false;

  const TrainResult r = train(spec, ds, cfg);
  // With patience 1 every epoch before the last must strictly improve the
  // best validation accuracy; the final epoch either improved (max_epochs
  // reached) or triggered the stop.
  double best = -1.0;
  for (std::size_t i = 0; i + 1 < r.history.size(); ++i) {
    CHECK(r.history[i].val_accuracy > best);
    best = std::max(best, r.history[i].val_accuracy);
  }
  if (static_cast<int>(r.history.size()) < cfg.max_epochs)
    CHECK(r.history.back().val_accuracy <= best);
}

TEST_CASE("evaluate oracles via a hand-built predictor") {
  Model model = threshold_model();

  SUBCASE("perfect separation") {
    const Dataset test = two_tone_dataset(5, 0, 0, 5);
    const Metrics m = evaluate(model, test);
    CHECK(m.accuracy == doctest::Approx(1.0));
    CHECK(m.macro_f1 == doctest::Approx(1.0));
    CHECK(m.binary_f1 == doctest::Approx(1.0));
    CHECK(m.confusion[0][0] == 5);
    CHECK(m.confusion[0][1] == 0);
    CHECK(m.confusion[1][0] == 0);
    CHECK(m.confusion[1][1] == 5);
  }
  SUBCASE("known confusion gives exact F1") {
    // Defect row: 8 bright (caught), 2 dark (missed). Good row: 2 bright
    // (false alarms), 8 dark. Class 0 then has tp 8, fp 2, fn 2.
    const Dataset test = two_tone_dataset(8, 2, 2, 8);
    const Metrics m = evaluate(model, test);
    CHECK(m.confusion[0][0] == 8);
    CHECK(m.confusion[0][1] == 2);
    CHECK(m.confusion[1][0] == 2);
    CHECK(m.confusion[1][1] == 8);
    CHECK(m.precision[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.recall[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.f1[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(0.8).epsilon(1e-12));
    // "good" is class 1, so the anomaly class 0 is the binary positive.
    CHECK(m.binary_f1 == doctest::Approx(0.8).epsilon(1e-12));
    for (const auto& row : m.normalized_confusion) {
      double sum = 0.0;
      for (double v : row) sum += v;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(m.normalized_confusion[0][0] == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("without a good class the positive defaults to class 1") {
    Dataset test = two_tone_dataset(8, 2, 2, 8);
    test.class_names = {"alpha", "beta"};
    model.class_names = {"alpha", "beta"};
    const Metrics m = evaluate(model, test);
    CHECK(m.binary_f1 == doctest::Approx(m.f1[1]).epsilon(1e-12));
  }
  SUBCASE("empty test set rejected") {
    CHECK_THROWS_AS(evaluate(model, Dataset{}), ValidationError);
  }
  SUBCASE("class count mismatch rejected") {
    Dataset test = two_tone_dataset(2, 0, 0, 2);
    test.class_names = {"a", "b", "c"};
    CHECK_THROWS_AS(evaluate(model, test), ValidationError);
  }
}

TEST_CASE("summarize_repetitions statistics") {
  const auto metrics_with = [](std::vector<std::vector<double>> conf, double f1) {
    Metrics m;
    m.normalized_confusion = std::move(conf);
    m.binary_f1 = f1;
    return m;
  };

  SUBCASE("two repetitions match the closed form") {
    const std::vector<Metrics> reps{
        metrics_with({{1.0, 0.0}, {0.0, 1.0}}, 0.9),
        metrics_with({{0.5, 0.5}, {0.0, 1.0}}, 1.0),
    };
    const RepetitionSummary s = summarize_repetitions(reps);
    CHECK(s.mean_f1 == doctest::Approx(0.95).epsilon(1e-12));
    // s / sqrt(2) is 0.05 to within one ulp, and t(0.975, df 1) is the
    // Cauchy critical value tan(0.475 pi) = 12.706204736174705.
    CHECK(s.ci95_f1 == doctest::Approx(0.6353102368087351).epsilon(1e-12));
    CHECK(s.mean_confusion[0][0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(s.mean_confusion[0][1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s.ci95_confusion[0][0] == doctest::Approx(3.176551184043676).epsilon(1e-12));
    CHECK(s.ci95_confusion[1][1] == doctest::Approx(0.0));
    CHECK(s.per_rep_f1 == std::vector<double>{0.9, 1.0});
  }
  SUBCASE("identical repetitions collapse the interval") {
    const std::vector<Metrics> reps{
        metrics_with({{0.9, 0.1}, {0.2, 0.8}}, 0.85),
        metrics_with({{0.9, 0.1}, {0.2, 0.8}}, 0.85),
        metrics_with({{0.9, 0.1}, {0.2, 0.8}}, 0.85),
    };
    const RepetitionSummary s = summarize_repetitions(reps);
    CHECK(s.mean_f1 == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(s.ci95_f1 == doctest::Approx(0.0));
    CHECK(s.ci95_confusion[0][1] == doctest::Approx(0.0));
  }
  SUBCASE("one repetition is insufficient") {
    const std::vector<Metrics> reps{metrics_with({{1.0}}, 1.0)};
    CHECK_THROWS_AS(summarize_repetitions(reps), ValidationError);
  }
  SUBCASE("inconsistent class counts rejected") {
    const std::vector<Metrics> reps{
        metrics_with({{1.0, 0.0}, {0.0, 1.0}}, 0.9),
        metrics_with({{1.0}}, 0.9),
    };
    CHECK_THROWS_AS(summarize_repetitions(reps), ValidationError);
  }
}

TEST_CASE("repeat_experiment trains and summarises independent runs") {
  const ModelSpec spec = tiny_spec();
  const Dataset train_set = blob_dataset(6, 500);
  const Dataset test_set = blob_dataset(3, 501);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.repetitions = 2;
  cfg.seed = 9;
  cfg.augment.enabled = false;

  const RepetitionSummary s = repeat_experiment(spec, train_set, test_set, cfg);
  CHECK(s.seeds.size() == 2);
  CHECK(s.seeds[0] != s.seeds[1]);
  CHECK(s.per_rep_f1.size() == 2);
  CHECK(s.mean_f1 >= 0.0);
  CHECK(s.mean_f1 <= 1.0);
  CHECK(s.ci95_f1 >= 0.0);
  REQUIRE(s.mean_confusion.size() == 2);
  for (const auto& row : s.mean_confusion) {
    double sum = 0.0;
    for (double v : row) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("repetitions below two rejected") {
    TrainConfig bad = cfg;
    bad.repetitions = 1;
    CHECK_THROWS_AS(repeat_experiment(spec, train_set, test_set, bad), ValidationError);
  }
}
