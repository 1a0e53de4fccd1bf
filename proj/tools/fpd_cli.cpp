#include "fpd/config.hpp"
#include "fpd/error.hpp"
#include "fpd/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string checkpoint;
  std::optional<int> k;
  std::optional<std::string> variant;
  std::optional<std::string> data;
  int images = 2;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "run configuration (JSON)");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--data", f.data, "dataset directory (overrides data_dir)");
}

void add_variant(CLI::App* cmd, Flags& f) {
  cmd->add_option("--variant", f.variant, "model variant")
      ->check(CLI::IsMember({"baseline", "bcas", "bcas+nlf", "full", "dense-match"}));
}

fpd::RunConfig resolve(const Flags& f) {
  fpd::RunConfig c = f.config.empty() ? fpd::RunConfig{} : fpd::read_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.k) c.k = *f.k;
  if (f.variant) c.variant = *f.variant;
  if (f.data) c.data_dir = *f.data;
  c.validate();
  return c;
}

void print(const std::string& s) { std::cout << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot detection with fine-grained prototype aggregation"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate-data", "render the synthetic dataset");
  add_common(gen, f);
  auto* base = app.add_subcommand("train-base", "episodic training on the base classes");
  add_common(base, f);
  add_variant(base, f);
  base->add_option("--checkpoint", f.checkpoint, "resume from this checkpoint");
  auto* fine = app.add_subcommand("finetune", "K-shot fine-tuning from a base checkpoint");
  add_common(fine, f);
  add_variant(fine, f);
  fine->add_option("--checkpoint", f.checkpoint, "base checkpoint")->required();
  fine->add_option("--k", f.k, "shots per class");
  auto* eval = app.add_subcommand("evaluate", "AP50 on the test split");
  add_common(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--k", f.k, "shots per class");
  auto* heat = app.add_subcommand("export-heatmaps", "write attention heatmaps as PGM files");
  add_common(heat, f);
  heat->add_option("--checkpoint", f.checkpoint, "checkpoint")->required();
  heat->add_option("--k", f.k, "shots per class");
  heat->add_option("--images", f.images, "query images to render");
  auto* prof = app.add_subcommand("profile", "analytic MAC and parameter counts");
  add_common(prof, f);
  add_variant(prof, f);
  auto* abl = app.add_subcommand("ablate", "component ablation over variants and seeds");
  add_common(abl, f);
  abl->add_option("--k", f.k, "shots per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const fpd::RunConfig config = resolve(f);
    const fs::path out = f.out;
    if (gen->parsed()) {
      fpd::data::GeneratorConfig g = config.generator;
      g.seed = config.seed;
      const auto m = fpd::data::generate_synthetic(g, out);
      print("wrote " + std::to_string(m.images.size()) + " images to " + out.string());
    } else if (base->parsed()) {
      fpd::harness::TrainOptions options;
      options.resume = f.checkpoint;
      const auto r = fpd::harness::train_base(config, out, options);
      print("base training: " + std::to_string(r.iterations) + " iterations, checkpoint " + r.checkpoint.string());
    } else if (fine->parsed()) {
      const auto r = fpd::harness::finetune_novel(config, f.checkpoint, out);
      print("fine-tuning: " + std::to_string(r.iterations) + " iterations, checkpoint " + r.checkpoint.string());
    } else if (eval->parsed()) {
      const auto r = fpd::harness::evaluate(config, f.checkpoint, out);
      std::printf("AP50 novel %.4f  base %.4f  all %.4f over %d images\n", r.ap.mean_novel, r.ap.mean_base,
                  r.ap.mean_all, r.images);
    } else if (heat->parsed()) {
      const auto r = fpd::harness::export_heatmaps(config, f.checkpoint, out, f.images);
      print("wrote " + std::to_string(r.files.size()) + " heatmaps to " + out.string());
    } else if (prof->parsed()) {
      const auto reports = fpd::harness::profile_cost(config, out);
      for (const auto& r : reports)
        for (const auto& v : r.variants)
          std::printf("%-6s %-12s %12.4f GMAC  %10.4f M params\n", r.scale.c_str(), v.variant.c_str(),
                      v.macs / 1e9, v.params / 1e6);
    } else if (abl->parsed()) {
      const auto r = fpd::harness::ablate(config, out);
      for (const auto& [variant, ap] : r.median_novel_ap)
        std::printf("%-12s median novel AP50 %.4f\n", variant.c_str(), ap);
      std::printf("%.1f s\n", r.seconds);
    }
  } catch (const fpd::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fpd::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fpd::ShapeError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
