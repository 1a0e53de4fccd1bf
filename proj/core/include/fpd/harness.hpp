#pragma once

#include "fpd/checkpoint.hpp"
#include "fpd/config.hpp"
#include "fpd/data.hpp"
#include "fpd/detector.hpp"
#include "fpd/metrics.hpp"
#include "fpd/params.hpp"
#include "fpd/profiler.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fpd::harness {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kBaseCheckpoint = "base.ckpt";
inline constexpr const char* kFinetuneCheckpoint = "finetune.ckpt";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kNanDumpFile = "nan_dump.json";

/// Detector plus optimizer state restored from a checkpoint.
struct Loaded {
  RunConfig config;
  std::unique_ptr<Detector> detector;
  std::map<std::string, Matrix> velocity;
  std::uint64_t iteration = 0;
};

Checkpoint snapshot(const Detector& detector, const SgdOptimizer* optimizer, const RunConfig& config,
                    std::uint64_t iteration);
Loaded load(const fs::path& checkpoint);

data::DatasetManifest load_manifest(const RunConfig& config);

struct TrainOptions {
  fs::path resume;      // continue from this checkpoint (parameters, optimizer, iteration)
  int stop_after = -1;  // stop once this many iterations have completed in total (-1: run all)
};

struct TrainResult {
  fs::path checkpoint;
  fs::path metrics;
  std::vector<double> losses;  // total loss per iteration run in this call
  int iterations = 0;
};

/// Episodic training of every parameter on the base classes.
TrainResult train_base(const RunConfig& config, const fs::path& out_dir, const TrainOptions& options = {});

/// Novel-class preparation on top of a base checkpoint: K-shot split, query transfer for
/// every novel class, and the freezing policy.
struct FinetuneSetup {
  RunConfig config;
  std::unique_ptr<Detector> detector;
  data::DatasetManifest manifest;
  std::map<ClassId, std::vector<int>> selected_rows;  // stacked base-row indices per novel class
  std::map<ClassId, Matrix> transferred;              // novel query sets right after transfer
};

FinetuneSetup prepare_finetune(const RunConfig& config, const fs::path& base_checkpoint);

TrainResult finetune_novel(const RunConfig& config, const fs::path& base_checkpoint, const fs::path& out_dir,
                           const TrainOptions& options = {});

struct EvalResult {
  metrics::ApReport ap;
  int images = 0;
  fs::path report;
};

EvalResult evaluate(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir);

struct HeatmapResult {
  std::vector<fs::path> files;
  int support_grid = 0;  // side of the support feature grid before upsampling
  int query_grid = 0;
  double min_value = 0.0;
  double max_value = 0.0;
};

HeatmapResult export_heatmaps(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir,
                              int images = 2);

std::vector<profile::CostReport> profile_cost(const RunConfig& config, const fs::path& out_dir);

struct AblationResult {
  std::map<std::string, std::vector<double>> novel_ap;  // per variant, per seed
  std::map<std::string, double> median_novel_ap;
  double seconds = 0.0;
};

/// Base training, fine-tuning and evaluation for every configured variant and seed.
AblationResult ablate(const RunConfig& config, const fs::path& out_dir);

}  // namespace fpd::harness
