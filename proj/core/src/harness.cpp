#include "fpd/harness.hpp"

#include "fpd/error.hpp"
#include "fpd/ffa.hpp"
#include "fpd/image.hpp"
#include "fpd/query_transfer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace fpd::harness {

using nlohmann::json;

namespace {

constexpr std::uint64_t kBaseStream = 0x62617365;      // "base"
constexpr std::uint64_t kFinetuneStream = 0x66696e65;  // "fine"
constexpr std::uint64_t kEvalStream = 0x6576616c;      // "eval"
constexpr std::uint64_t kSplitStream = 0x73706c74;     // "splt"

double scheduled_lr(const TrainSchedule& s, int iteration) {
  if (s.warmup > 0 && iteration < s.warmup)
    return s.learning_rate * (static_cast<double>(iteration + 1) / (s.warmup + 1));
  return s.learning_rate;
}

std::unique_ptr<Detector> build(const RunConfig& config) {
  return std::make_unique<Detector>(config.detector_config());
}

data::DatasetManifest with_kshot_split(const RunConfig& config, data::DatasetManifest manifest) {
  const std::string name = data::kshot_split_name(config.k);
  if (manifest.splits.contains(name)) return manifest;
  const auto novel = manifest.novel_classes();
  return data::make_kshot_split(manifest, config.k, novel, derive_seed(config.split_seed, kSplitStream));
}

void write_nan_dump(const fs::path& out_dir, const std::string& stage, int iteration,
                    std::uint64_t episode_seed, const Episode& episode, const LossMap& losses) {
  json j;
  j["stage"] = stage;
  j["iteration"] = iteration;
  j["episode_seed"] = episode_seed;
  std::vector<int> ids;
  for (const auto& q : episode.query_images) ids.push_back(q.image_id);
  j["query_image_ids"] = ids;
  j["class_roster"] = episode.class_roster;
  for (const auto& [k, v] : losses.values) j["losses"][k] = std::isfinite(v) ? json(v) : json(std::to_string(v));
  std::ofstream(out_dir / kNanDumpFile) << j.dump(2) << "\n";
}

struct LoopSpec {
  std::string stage;
  TrainSchedule schedule;
  std::uint64_t stream = 0;
  data::EpisodeRequest request;
};

TrainResult run_loop(const RunConfig& config, Detector& detector, SgdOptimizer& optimizer,
                     const data::DatasetManifest& manifest, const LoopSpec& spec, int start,
                     const fs::path& out_dir, const fs::path& checkpoint_path,
                     const TrainOptions& options) {
  fs::create_directories(out_dir);
  data::ImageCache cache(config.data_dir);
  TrainResult result;
  result.checkpoint = checkpoint_path;
  result.metrics = out_dir / kMetricsFile;
  std::ofstream metrics(result.metrics, std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics file in " + out_dir.string());

  const int end = options.stop_after >= 0 ? std::min(options.stop_after, spec.schedule.iterations)
                                          : spec.schedule.iterations;
  int it = start;
  for (; it < end; ++it) {
    const std::uint64_t episode_seed = derive_seed(derive_seed(config.seed, spec.stream), static_cast<std::uint64_t>(it));
    Rng rng(episode_seed);
    const Episode episode = data::sample_episode(manifest, cache, spec.request, rng);
    detector.params().zero_grad();
    LossMap losses = detector.forward_train(episode, rng);
    const double total = losses.total_value();
    if (!std::isfinite(total)) {
      write_nan_dump(out_dir, spec.stage, it, episode_seed, episode, losses);
      throw NumericalError("non-finite loss at " + spec.stage + " iteration " + std::to_string(it) +
                           " (episode seed " + std::to_string(episode_seed) + ")");
    }
    losses.total.backward();
    const double grad_norm = detector.params().grad_norm();
    if (!std::isfinite(grad_norm)) {
      write_nan_dump(out_dir, spec.stage, it, episode_seed, episode, losses);
      throw NumericalError("non-finite gradient at " + spec.stage + " iteration " + std::to_string(it));
    }
    const double lr = scheduled_lr(spec.schedule, it);
    optimizer.step(detector.params(), lr);
    detector.params().zero_grad();

    json row;
    row["iteration"] = it;
    row["lr"] = lr;
    row["grad_norm"] = grad_norm;
    for (const auto& [k, v] : losses.values) row[k] = v;
    row["empty_targets"] = losses.empty_targets;
    metrics << row.dump() << "\n";
    result.losses.push_back(total);

    const int done = it + 1;
    if (spec.schedule.checkpoint_every > 0 && done % spec.schedule.checkpoint_every == 0 && done < end)
      write_checkpoint(out_dir / (spec.stage + "-" + std::to_string(done) + ".ckpt"),
                       snapshot(detector, &optimizer, config, static_cast<std::uint64_t>(done)));
  }
  result.iterations = it - start;
  write_checkpoint(checkpoint_path, snapshot(detector, &optimizer, config, static_cast<std::uint64_t>(it)));
  return result;
}

}  // namespace

// ---------------------------------------------------------------- checkpoints

Checkpoint snapshot(const Detector& detector, const SgdOptimizer* optimizer, const RunConfig& config,
                    std::uint64_t iteration) {
  Checkpoint c;
  c.iteration = iteration;
  c.config = config_to_string(config);
  c.arrays = detector.params().values();
  if (optimizer)
    for (const auto& [name, v] : optimizer->velocity()) c.arrays.emplace("opt/" + name, v);
  return c;
}

Loaded load(const fs::path& checkpoint) {
  const Checkpoint c = read_checkpoint(checkpoint);
  Loaded out;
  out.config = config_from_string(c.config);
  out.detector = build(out.config);
  std::map<std::string, Matrix> params;
  for (const auto& [name, m] : c.arrays) {
    if (name.starts_with("opt/")) out.velocity.emplace(name.substr(4), m);
    else params.emplace(name, m);
  }
  for (const auto& name : out.detector->params().names())
    if (!params.contains(name)) throw ValidationError("checkpoint lacks parameter " + name);
  out.detector->params().assign_values(params);
  out.iteration = c.iteration;
  return out;
}

data::DatasetManifest load_manifest(const RunConfig& config) {
  const fs::path path = fs::path(config.data_dir) / "manifest.json";
  if (!fs::exists(path)) throw ValidationError("no dataset manifest at " + path.string());
  auto m = data::read_manifest(path);
  if (static_cast<int>(m.classes.size()) != config.generator.num_classes)
    throw ValidationError("dataset has " + std::to_string(m.classes.size()) + " classes, config expects " +
                          std::to_string(config.generator.num_classes));
  return m;
}

// ---------------------------------------------------------------- base training

TrainResult train_base(const RunConfig& config, const fs::path& out_dir, const TrainOptions& options) {
  config.validate();
  const auto manifest = load_manifest(config);
  std::unique_ptr<Detector> detector;
  SgdOptimizer optimizer(config.base.momentum, config.base.weight_decay, config.base.clip_norm);
  int start = 0;
  if (!options.resume.empty()) {
    Loaded l = load(options.resume);
    detector = std::move(l.detector);
    optimizer.velocity() = std::move(l.velocity);
    start = static_cast<int>(l.iteration);
  } else {
    detector = build(config);
  }
  if (config.freeze_first_stage) detector->params().set_trainable("backbone.stage1.", false);

  LoopSpec spec;
  spec.stage = "base";
  spec.schedule = config.base;
  spec.stream = kBaseStream;
  spec.request.split = data::kBaseTrainSplit;
  spec.request.roster = manifest.base_classes();
  spec.request.shots = 1;
  spec.request.queries = config.base.queries_per_episode;
  spec.request.support_size = config.model.backbone.support_size;
  spec.request.mode = data::EpisodeMode::kTrain;
  return run_loop(config, *detector, optimizer, manifest, spec, start, out_dir, out_dir / kBaseCheckpoint,
                  options);
}

// ---------------------------------------------------------------- fine-tuning

FinetuneSetup prepare_finetune(const RunConfig& config, const fs::path& base_checkpoint) {
  config.validate();
  if (base_checkpoint.empty() || !fs::exists(base_checkpoint))
    throw ValidationError("fine-tuning requires a base checkpoint");
  Loaded base = load(base_checkpoint);
  if (base.config.detector_config().variant != config.detector_config().variant)
    throw ValidationError("base checkpoint variant " + base.config.variant + " differs from " + config.variant);

  FinetuneSetup s;
  s.config = config;
  // the architecture is whatever the base checkpoint was trained with
  s.config.model = base.config.model;
  s.config.generator.num_classes = base.config.generator.num_classes;
  s.detector = std::move(base.detector);
  s.manifest = with_kshot_split(s.config, load_manifest(s.config));

  const auto base_classes = s.manifest.base_classes();
  const auto novel_classes = s.manifest.novel_classes();
  const std::string split = data::kshot_split_name(config.k);
  for (ClassId c : novel_classes) {
    bool present = false;
    for (const auto& e : s.manifest.split(split))
      for (int idx : e.annotation_indices)
        present = present || s.manifest.image(e.image_id).annotations[static_cast<std::size_t>(idx)].class_id == c;
    if (!present) throw ValidationError("novel class " + std::to_string(c) + " missing from split " + split);
  }

  Detector& det = *s.detector;
  if (det.config().variant.aggregation != AggregationMode::kNone) {
    data::ImageCache cache(s.config.data_dir);
    Rng rng(derive_seed(config.seed, kFinetuneStream + 1));
    const auto supports = data::collect_support_set(s.manifest, cache, split, novel_classes, config.k,
                                                    det.config().backbone.support_size, 0.1, rng);
    std::vector<FeatureQuerySet> base_queries;
    for (ClassId c : base_classes) base_queries.push_back(det.query_set(c));
    const ProjectionParams proj = det.projection_params();
    Matrix& embeddings = det.params().get("ffa.class_embeddings").mutable_value();
    for (ClassId c : novel_classes) {
      std::vector<FeatureMap> shots;
      for (const auto& crop : supports.at(c)) shots.push_back(det.extract_mid(crop.image));
      const auto report = transfer::compatibility(base_queries, shots, proj, det.config().topk(shots[0].cells()));
      s.selected_rows[c] = transfer::select_rows(report, det.config().ffa.n_queries);
      const FeatureQuerySet copy = transfer::select_and_duplicate(report, base_queries, det.config().ffa.n_queries, c);
      det.set_query_set(copy);
      s.transferred[c] = copy.queries;
      embeddings.row(c).setZero();
    }
  }

  det.params().set_trainable("", true);
  det.params().set_trainable(Detector::backbone_prefix(), false);
  if (config.k <= config.freeze_rpn_max_k) det.params().set_trainable("rpn.", false);
  return s;
}

TrainResult finetune_novel(const RunConfig& config, const fs::path& base_checkpoint, const fs::path& out_dir,
                           const TrainOptions& options) {
  FinetuneSetup s = prepare_finetune(config, base_checkpoint);
  SgdOptimizer optimizer(config.finetune.momentum, config.finetune.weight_decay, config.finetune.clip_norm);
  int start = 0;
  if (!options.resume.empty()) {
    Loaded l = load(options.resume);
    s.detector->params().assign_values(l.detector->params().values());
    optimizer.velocity() = std::move(l.velocity);
    start = static_cast<int>(l.iteration);
  }
  LoopSpec spec;
  spec.stage = "finetune";
  spec.schedule = config.finetune;
  spec.stream = kFinetuneStream;
  spec.request.split = data::kshot_split_name(config.k);
  spec.request.roster = s.manifest.all_classes();
  spec.request.shots = 1;
  spec.request.queries = config.finetune.queries_per_episode;
  spec.request.support_size = s.config.model.backbone.support_size;
  spec.request.mode = data::EpisodeMode::kTrain;
  return run_loop(s.config, *s.detector, optimizer, s.manifest, spec, start, out_dir,
                  out_dir / kFinetuneCheckpoint, options);
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir) {
  config.validate();
  Loaded l = load(checkpoint);
  RunConfig run = config;
  run.model = l.config.model;
  run.variant = l.config.variant;
  const Detector& det = *l.detector;
  const auto manifest = with_kshot_split(run, load_manifest(run));
  const auto& test = manifest.split(data::kTestSplit);
  if (test.empty()) throw ValidationError("evaluate: empty test split");

  data::ImageCache cache(run.data_dir);
  Rng rng(derive_seed(config.seed, kEvalStream));
  const auto all = manifest.all_classes();
  const auto crops = data::collect_support_set(manifest, cache, data::kshot_split_name(run.k), all, run.k,
                                               det.config().backbone.support_size, 0.1, rng);
  std::map<ClassId, std::vector<FeatureMap>> images;
  for (const auto& [c, list] : crops)
    for (const auto& crop : list) images[c].push_back(crop.image);
  const SupportEncoding enc = det.encode_supports(images);

  const std::size_t count = run.eval_max_images > 0
                                ? std::min(test.size(), static_cast<std::size_t>(run.eval_max_images))
                                : test.size();
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Annotation>> gts;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& rec = manifest.image(test[i].image_id);
    dets.push_back(det.detect(cache.get(rec), enc));
    std::vector<Annotation> g;
    for (int idx : test[i].annotation_indices) g.push_back(rec.annotations[static_cast<std::size_t>(idx)]);
    gts.push_back(std::move(g));
  }
  EvalResult result;
  result.ap = metrics::evaluate_ap50(dets, gts, manifest.base_classes(), manifest.novel_classes());
  result.images = static_cast<int>(count);

  fs::create_directories(out_dir);
  result.report = out_dir / kReportFile;
  json j;
  j["variant"] = run.variant;
  j["k"] = run.k;
  j["seed"] = run.seed;
  j["images"] = result.images;
  j["ap50_novel"] = result.ap.mean_novel;
  j["ap50_base"] = result.ap.mean_base;
  j["ap50_all"] = result.ap.mean_all;
  for (const auto& [c, ap] : result.ap.per_class) j["per_class"][data::class_name(c)] = ap;
  std::ofstream(result.report) << j.dump(2) << "\n";
  return result;
}

// ---------------------------------------------------------------- heatmaps

HeatmapResult export_heatmaps(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir,
                              int images) {
  Loaded l = load(checkpoint);
  RunConfig run = config;
  run.model = l.config.model;
  run.variant = l.config.variant;
  const Detector& det = *l.detector;
  const auto manifest = with_kshot_split(run, load_manifest(run));
  data::ImageCache cache(run.data_dir);
  Rng rng(derive_seed(config.seed, kEvalStream + 1));
  const auto all = manifest.all_classes();
  const auto crops = data::collect_support_set(manifest, cache, data::kshot_split_name(run.k), all, run.k,
                                               det.config().backbone.support_size, 0.1, rng);
  fs::create_directories(out_dir);
  HeatmapResult out;
  out.min_value = 1.0;
  out.max_value = 0.0;
  auto emit = [&](const fs::path& path, const Matrix& m) {
    write_pgm(path, m);
    out.files.push_back(path);
    out.min_value = std::min(out.min_value, m.minCoeff());
    out.max_value = std::max(out.max_value, m.maxCoeff());
  };

  const ProjectionParams proj = det.projection_params();
  const int size = det.config().backbone.support_size;
  for (const auto& [c, list] : crops) {
    const FeatureMap mid = det.extract_mid(list.front().image);
    out.support_grid = mid.height();
    const auto affinity = ffa::distillation_affinity(mid, det.query_set(c), proj);
    for (Index q = 0; q < affinity.values.rows(); ++q) {
      Matrix grid = Eigen::Map<const Matrix>(affinity.values.row(q).data(), mid.height(), mid.width());
      emit(out_dir / ("support_" + data::class_name(c) + "_q" + std::to_string(q) + ".pgm"),
           normalize_unit(upsample_nearest(grid, size, size)));
    }
  }

  std::map<ClassId, std::vector<FeatureMap>> support_images;
  for (const auto& [c, list] : crops)
    for (const auto& crop : list) support_images[c].push_back(crop.image);
  const SupportEncoding enc = det.encode_supports(support_images);
  const auto& test = manifest.split(data::kTestSplit);
  const int image_size = det.config().backbone.image_size;
  for (int i = 0; i < images && i < static_cast<int>(test.size()); ++i) {
    const auto& rec = manifest.image(test[static_cast<std::size_t>(i)].image_id);
    QueryTrace trace;
    det.detect(cache.get(rec), enc, &trace);
    const Matrix residual = trace.aggregated.values() - trace.mid.values();
    const Matrix summed = residual.rowwise().sum();
    out.query_grid = trace.mid.height();
    Matrix grid = Eigen::Map<const Matrix>(summed.data(), trace.mid.height(), trace.mid.width());
    emit(out_dir / ("query_" + std::to_string(rec.id) + ".pgm"),
         normalize_unit(upsample_nearest(grid, image_size, image_size)));
  }
  if (out.files.empty()) out.min_value = out.max_value = 0.0;
  return out;
}

// ---------------------------------------------------------------- profiling

std::vector<profile::CostReport> profile_cost(const RunConfig& config, const fs::path& out_dir) {
  config.validate();
  std::vector<profile::CostReport> reports{
      profile::desk_costs(config.detector_config(), config.generator.num_classes), profile::paper_costs()};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "cost.json") << profile::report_to_json(reports);
  }
  return reports;
}

// ---------------------------------------------------------------- ablation

AblationResult ablate(const RunConfig& config, const fs::path& out_dir) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  if (!fs::exists(fs::path(config.data_dir) / "manifest.json")) {
    data::GeneratorConfig g = config.generator;
    g.seed = config.seed;
    data::generate_synthetic(g, config.data_dir);
  }
  AblationResult result;
  json j;
  for (const auto& variant : config.ablation_variants) {
    for (std::uint64_t seed : config.ablation_seeds) {
      RunConfig run = config;
      run.variant = variant;
      run.seed = seed;
      const fs::path dir = out_dir / variant / ("seed-" + std::to_string(seed));
      const auto base = train_base(run, dir / "base");
      const auto fine = finetune_novel(run, base.checkpoint, dir / "finetune");
      const auto eval = evaluate(run, fine.checkpoint, dir / "eval");
      result.novel_ap[variant].push_back(eval.ap.mean_novel);
      j["runs"][variant].push_back({{"seed", seed},
                                    {"ap50_novel", eval.ap.mean_novel},
                                    {"ap50_base", eval.ap.mean_base},
                                    {"ap50_all", eval.ap.mean_all}});
    }
    std::vector<double> v = result.novel_ap[variant];
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    result.median_novel_ap[variant] = v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    j["median_ap50_novel"][variant] = result.median_novel_ap[variant];
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(out_dir / "ablation.json") << j.dump(2) << "\n";
  return result;
}

}  // namespace fpd::harness
