#pragma once

#include "fpd/data.hpp"
#include "fpd/detector.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fpd {

inline constexpr int kConfigVersion = 1;

enum class Stage { kBase, kFinetune, kEval };

struct TrainSchedule {
  int iterations = 1200;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;
  int warmup = 20;
  int queries_per_episode = 2;
  int checkpoint_every = 0;  // 0: only the final checkpoint
};

/// Everything one CLI invocation needs. Stored as JSON:
///   version        1 (required)
///   stage          "base" | "finetune" | "eval"
///   seed           integer
///   data_dir       dataset directory holding manifest.json
///   k              shots for fine-tuning and evaluation
///   split_seed     seed of the K-shot split; fixed across runs so that seeds vary only the model
///   variant        baseline | bcas | bcas+nlf | full | dense-match
///   generator      {num_classes, novel_classes, image_size, min_shape, max_shape, max_objects,
///                   base_train_images, pool_images, test_images}
///   model          {d, support_size, n_queries, n_background, d_prime, topk,
///                   shot_weighting: "per-query"|"per-shot", rois_per_image, foreground_fraction,
///                   score_threshold, nms_iou, max_detections}
///   base, finetune {iterations, learning_rate, momentum, weight_decay, clip_norm, warmup,
///                   queries_per_episode, checkpoint_every}
///   freeze_first_stage  freeze backbone stage 1 during base training
///   freeze_rpn_max_k    RPN frozen during fine-tuning when k <= this value
///   eval           {max_images}
///   ablation       {seeds: [...], variants: [...]}
/// Missing keys keep their defaults; unknown keys are rejected.
struct RunConfig {
  int version = kConfigVersion;
  Stage stage = Stage::kBase;
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  int k = 5;
  std::uint64_t split_seed = 0;
  std::string variant = "full";
  data::GeneratorConfig generator;
  DetectorConfig model;
  TrainSchedule base;
  TrainSchedule finetune{.iterations = 400, .learning_rate = 0.005, .warmup = 10};
  bool freeze_first_stage = false;
  int freeze_rpn_max_k = 2;
  int eval_max_images = 0;  // 0: whole test split
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2};
  std::vector<std::string> ablation_variants{"baseline", "bcas", "bcas+nlf", "full"};

  /// Detector configuration for this run (variant applied, class count from the generator).
  DetectorConfig detector_config() const;
  void validate() const;
};

std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);

std::string config_to_string(const RunConfig& c);
RunConfig config_from_string(const std::string& text);
RunConfig read_config(const std::filesystem::path& path);
void write_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace fpd
