// Command-line front end for the layerwise monitoring pipeline. Every
// subcommand reads one JSON config file; a handful of flags override the
// most commonly swept values.

#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "layermon/errors.hpp"
#include "layermon/pipeline.hpp"

namespace {

struct CliArgs {
  std::string config;
  layermon::CmdOverrides overrides;
};

void add_common_flags(CLI::App* sub, CliArgs& args, std::uint64_t& seed_slot,
                      std::string& out_slot) {
  sub->add_option("-c,--config", args.config, "pipeline configuration file (JSON)")
      ->required();
  sub->add_option("--seed", seed_slot, "override the master seed");
  sub->add_option("--out", out_slot, "override the output root directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layermon: layerwise thermal monitoring pipeline"};
  app.require_subcommand(1);

  using Command =
      std::function<void(const layermon::PipelineConfig&, const layermon::CmdOverrides&)>;
  const std::map<std::string, std::pair<std::string, Command>> commands{
      {"calibrate", {"estimate camera intrinsics from correspondences", layermon::cmd_calibrate}},
      {"prepare", {"undistort, register and crop a layer image stack", layermon::cmd_prepare}},
      {"slice", {"slice an STL mesh into layer contours", layermon::cmd_slice}},
      {"synth", {"generate a labelled synthetic dataset", layermon::cmd_synth}},
      {"train", {"train the layer anomaly classifier", layermon::cmd_train}},
      {"classify", {"write per-image class probabilities", layermon::cmd_classify}},
      {"clean", {"sort images into good/ and bad/ by anomaly probability", layermon::cmd_clean}},
      {"report", {"aggregate classification results into a run report", layermon::cmd_report}},
  };

  CliArgs args;
  std::uint64_t seed_value = 0;
  std::string out_value;
  double threshold_value = 0.5;
  int repetitions_value = 0;

  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    add_common_flags(sub, args, seed_value, out_value);
    if (name == "clean")
      sub->add_option("--threshold", threshold_value, "anomaly probability cut (default 0.5)");
    if (name == "train")
      sub->add_option("--repetitions", repetitions_value,
                      "repeat training with independent seeds");
    subs[name] = sub;
  }

  CLI11_PARSE(app, argc, argv);

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  if (chosen->count("--seed")) args.overrides.seed = seed_value;
  if (chosen->count("--out")) args.overrides.out = out_value;
  if (name == "clean" && chosen->count("--threshold"))
    args.overrides.threshold = threshold_value;
  if (name == "train" && chosen->count("--repetitions"))
    args.overrides.repetitions = repetitions_value;

  try {
    const layermon::PipelineConfig cfg = layermon::PipelineConfig::load(args.config);
    commands.at(name).second(cfg, args.overrides);
  } catch (const layermon::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const layermon::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  } catch (const layermon::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
