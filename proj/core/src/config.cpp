#include "fpd/config.hpp"

#include "fpd/error.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace fpd {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw ValidationError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

json schedule_json(const TrainSchedule& s) {
  return {{"iterations", s.iterations},       {"learning_rate", s.learning_rate},
          {"momentum", s.momentum},           {"weight_decay", s.weight_decay},
          {"clip_norm", s.clip_norm},         {"warmup", s.warmup},
          {"queries_per_episode", s.queries_per_episode}, {"checkpoint_every", s.checkpoint_every}};
}

TrainSchedule schedule_from(const json& j, TrainSchedule s, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  reject_unknown(j,
                 {"iterations", "learning_rate", "momentum", "weight_decay", "clip_norm", "warmup",
                  "queries_per_episode", "checkpoint_every"},
                 where);
  read(j, "iterations", s.iterations);
  read(j, "learning_rate", s.learning_rate);
  read(j, "momentum", s.momentum);
  read(j, "weight_decay", s.weight_decay);
  read(j, "clip_norm", s.clip_norm);
  read(j, "warmup", s.warmup);
  read(j, "queries_per_episode", s.queries_per_episode);
  read(j, "checkpoint_every", s.checkpoint_every);
  return s;
}

void validate_schedule(const TrainSchedule& s, const std::string& where) {
  if (s.iterations < 0 || s.warmup < 0 || s.checkpoint_every < 0)
    throw ValidationError("config: " + where + " counts must be non-negative");
  if (!(s.learning_rate > 0) || s.momentum < 0 || s.momentum >= 1 || s.weight_decay < 0 ||
      s.clip_norm < 0)
    throw ValidationError("config: bad optimizer settings in " + where);
  if (s.queries_per_episode <= 0) throw ValidationError("config: queries_per_episode must be positive");
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kBase: return "base";
    case Stage::kFinetune: return "finetune";
    case Stage::kEval: return "eval";
  }
  return "base";
}

Stage parse_stage(const std::string& s) {
  if (s == "base") return Stage::kBase;
  if (s == "finetune") return Stage::kFinetune;
  if (s == "eval") return Stage::kEval;
  throw ValidationError("config: unknown stage '" + s + "'");
}

DetectorConfig RunConfig::detector_config() const {
  DetectorConfig d = model;
  d.variant = Variant::parse(variant);
  d.num_classes = generator.num_classes;
  d.backbone.image_size = generator.image_size;
  d.seed = seed;
  return d;
}

void RunConfig::validate() const {
  if (version != kConfigVersion)
    throw ValidationError("config: unsupported version " + std::to_string(version));
  if (k < 1) throw ValidationError("config: k must be at least 1");
  generator.validate();
  validate_schedule(base, "base");
  validate_schedule(finetune, "finetune");
  if (eval_max_images < 0) throw ValidationError("config: eval.max_images must be non-negative");
  for (const auto& v : ablation_variants) Variant::parse(v);
  if (ablation_seeds.empty()) throw ValidationError("config: ablation needs at least one seed");
  detector_config().validate();
}

std::string config_to_string(const RunConfig& c) {
  const auto& m = c.model;
  json j;
  j["version"] = c.version;
  j["stage"] = stage_name(c.stage);
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir;
  j["k"] = c.k;
  j["split_seed"] = c.split_seed;
  j["variant"] = c.variant;
  const auto& g = c.generator;
  j["generator"] = {{"num_classes", g.num_classes},
                    {"novel_classes", g.novel_classes},
                    {"image_size", g.image_size},
                    {"min_shape", g.min_shape},
                    {"max_shape", g.max_shape},
                    {"max_objects", g.max_objects},
                    {"base_train_images", g.base_train_images},
                    {"pool_images", g.pool_images},
                    {"test_images", g.test_images}};
  j["model"] = {{"d", m.backbone.d},
                {"support_size", m.backbone.support_size},
                {"n_queries", m.ffa.n_queries},
                {"n_background", m.ffa.n_background},
                {"d_prime", m.ffa.d_prime},
                {"topk", m.ffa.topk},
                {"shot_weighting",
                 m.ffa.shot_weighting == transfer::ShotWeighting::kPerQuery ? "per-query" : "per-shot"},
                {"rois_per_image", m.head.rois_per_image},
                {"foreground_fraction", m.head.foreground_fraction},
                {"score_threshold", m.head.score_threshold},
                {"nms_iou", m.head.nms_iou},
                {"max_detections", m.head.max_detections}};
  j["base"] = schedule_json(c.base);
  j["finetune"] = schedule_json(c.finetune);
  j["freeze_first_stage"] = c.freeze_first_stage;
  j["freeze_rpn_max_k"] = c.freeze_rpn_max_k;
  j["eval"] = {{"max_images", c.eval_max_images}};
  j["ablation"] = {{"seeds", c.ablation_seeds}, {"variants", c.ablation_variants}};
  return j.dump(2) + "\n";
}

RunConfig config_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  if (!j.contains("version")) throw ValidationError("config: missing 'version'");
  reject_unknown(j,
                 {"version", "stage", "seed", "data_dir", "k", "split_seed", "variant", "generator", "model", "base",
                  "finetune", "freeze_first_stage", "freeze_rpn_max_k", "eval", "ablation"},
                 "top level");
  RunConfig c;
  read(j, "version", c.version);
  if (c.version != kConfigVersion)
    throw ValidationError("config: unsupported version " + std::to_string(c.version));
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  read(j, "seed", c.seed);
  read(j, "data_dir", c.data_dir);
  read(j, "k", c.k);
  read(j, "split_seed", c.split_seed);
  read(j, "variant", c.variant);
  read(j, "freeze_first_stage", c.freeze_first_stage);
  read(j, "freeze_rpn_max_k", c.freeze_rpn_max_k);
  if (j.contains("generator")) {
    const json& g = j.at("generator");
    reject_unknown(g,
                   {"num_classes", "novel_classes", "image_size", "min_shape", "max_shape",
                    "max_objects", "base_train_images", "pool_images", "test_images"},
                   "generator");
    auto& o = c.generator;
    read(g, "num_classes", o.num_classes);
    read(g, "novel_classes", o.novel_classes);
    read(g, "image_size", o.image_size);
    read(g, "min_shape", o.min_shape);
    read(g, "max_shape", o.max_shape);
    read(g, "max_objects", o.max_objects);
    read(g, "base_train_images", o.base_train_images);
    read(g, "pool_images", o.pool_images);
    read(g, "test_images", o.test_images);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"d", "support_size", "n_queries", "n_background", "d_prime", "topk",
                    "shot_weighting", "rois_per_image", "foreground_fraction", "score_threshold",
                    "nms_iou", "max_detections"},
                   "model");
    auto& o = c.model;
    read(m, "d", o.backbone.d);
    read(m, "support_size", o.backbone.support_size);
    read(m, "n_queries", o.ffa.n_queries);
    read(m, "n_background", o.ffa.n_background);
    read(m, "d_prime", o.ffa.d_prime);
    read(m, "topk", o.ffa.topk);
    if (m.contains("shot_weighting")) {
      const auto s = m.at("shot_weighting").get<std::string>();
      if (s == "per-query") o.ffa.shot_weighting = transfer::ShotWeighting::kPerQuery;
      else if (s == "per-shot") o.ffa.shot_weighting = transfer::ShotWeighting::kPerShotScalar;
      else throw ValidationError("config: unknown shot_weighting '" + s + "'");
    }
    read(m, "rois_per_image", o.head.rois_per_image);
    read(m, "foreground_fraction", o.head.foreground_fraction);
    read(m, "score_threshold", o.head.score_threshold);
    read(m, "nms_iou", o.head.nms_iou);
    read(m, "max_detections", o.head.max_detections);
    // keep the stage widths consistent with d
    auto& stages = o.backbone.mid_stages;
    stages.back().width = o.backbone.d;
    if (stages.size() > 1) stages[stages.size() - 2].width = o.backbone.d;
    stages.front().width = std::max(4, o.backbone.d / 2);
    o.backbone.high_stage.width = 2 * o.backbone.d;
  }
  if (j.contains("base")) c.base = schedule_from(j.at("base"), c.base, "base");
  if (j.contains("finetune")) c.finetune = schedule_from(j.at("finetune"), c.finetune, "finetune");
  if (j.contains("eval")) {
    reject_unknown(j.at("eval"), {"max_images"}, "eval");
    read(j.at("eval"), "max_images", c.eval_max_images);
  }
  if (j.contains("ablation")) {
    reject_unknown(j.at("ablation"), {"seeds", "variants"}, "ablation");
    read(j.at("ablation"), "seeds", c.ablation_seeds);
    read(j.at("ablation"), "variants", c.ablation_variants);
  }
  c.validate();
  return c;
}

RunConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_string(ss.str());
}

void write_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config: " + path.string());
  out << config_to_string(c);
}

}  // namespace fpd
