#include "fpd/data.hpp"

#include "fpd/boxes.hpp"
#include "fpd/error.hpp"
#include "fpd/image.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace fpd::data {

using nlohmann::json;

std::string kshot_split_name(int k) { return "finetune-" + std::to_string(k); }

namespace {

std::vector<ClassId> classes_with_role(const std::vector<ClassInfo>& classes, ClassRole role) {
  std::vector<ClassId> out;
  for (const auto& c : classes)
    if (c.role == role) out.push_back(c.id);
  return out;
}

}  // namespace

std::vector<ClassId> DatasetManifest::base_classes() const { return classes_with_role(classes, ClassRole::kBase); }
std::vector<ClassId> DatasetManifest::novel_classes() const { return classes_with_role(classes, ClassRole::kNovel); }

std::vector<ClassId> DatasetManifest::all_classes() const {
  std::vector<ClassId> out;
  for (const auto& c : classes) out.push_back(c.id);
  return out;
}

const ImageRecord& DatasetManifest::image(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= images.size() || images[static_cast<std::size_t>(id)].id != id)
    throw ValidationError("manifest has no image " + std::to_string(id));
  return images[static_cast<std::size_t>(id)];
}

const std::vector<SplitEntry>& DatasetManifest::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ValidationError("manifest has no split '" + name + "'");
  return it->second;
}

void DatasetManifest::validate() const {
  if (schema_version != kManifestSchemaVersion)
    throw ValidationError("unsupported manifest schema version " + std::to_string(schema_version));
  std::set<ClassId> ids;
  for (const auto& c : classes)
    if (!ids.insert(c.id).second) throw ValidationError("duplicate class id " + std::to_string(c.id));
  // Roles are exclusive per class entry, so base and novel are disjoint by construction;
  // the id check above rules out one id appearing under both roles.
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.id != static_cast<int>(i)) throw ValidationError("image ids must be dense and ordered");
    for (const auto& a : im.annotations) {
      if (!ids.contains(a.class_id)) throw ValidationError("annotation with unknown class");
      if (!a.box.valid() || a.box.x1 < 0 || a.box.y1 < 0 || a.box.x2 > im.width || a.box.y2 > im.height)
        throw ValidationError("annotation box outside image " + std::to_string(im.id));
    }
  }
  for (const auto& [name, entries] : splits)
    for (const auto& e : entries) {
      const auto& im = image(e.image_id);
      for (int idx : e.annotation_indices)
        if (idx < 0 || static_cast<std::size_t>(idx) >= im.annotations.size())
          throw ValidationError("split " + name + " references a missing annotation");
    }
}

std::string manifest_to_string(const DatasetManifest& m) {
  json j;
  j["schema_version"] = m.schema_version;
  json classes = json::array();
  for (const auto& c : m.classes)
    classes.push_back({{"id", c.id}, {"name", c.name}, {"role", c.role == ClassRole::kBase ? "base" : "novel"}});
  j["classes"] = std::move(classes);
  json images = json::array();
  for (const auto& im : m.images) {
    json anns = json::array();
    for (const auto& a : im.annotations)
      anns.push_back({{"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}}, {"class_id", a.class_id}});
    images.push_back({{"id", im.id}, {"file", im.file}, {"width", im.width}, {"height", im.height},
                      {"annotations", std::move(anns)}});
  }
  j["images"] = std::move(images);
  json splits = json::object();
  for (const auto& [name, entries] : m.splits) {
    json arr = json::array();
    for (const auto& e : entries) arr.push_back({{"image_id", e.image_id}, {"annotations", e.annotation_indices}});
    splits[name] = std::move(arr);
  }
  j["splits"] = std::move(splits);
  return j.dump(1) + "\n";
}

DatasetManifest manifest_from_string(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion)
      throw ValidationError("unsupported manifest schema version " + std::to_string(m.schema_version));
    for (const auto& c : j.at("classes")) {
      const auto role = c.at("role").get<std::string>();
      if (role != "base" && role != "novel") throw ValidationError("class role must be base or novel");
      m.classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                           role == "base" ? ClassRole::kBase : ClassRole::kNovel});
    }
    for (const auto& im : j.at("images")) {
      ImageRecord r;
      r.id = im.at("id").get<int>();
      r.file = im.at("file").get<std::string>();
      r.width = im.at("width").get<int>();
      r.height = im.at("height").get<int>();
      for (const auto& a : im.at("annotations")) {
        const auto b = a.at("box").get<std::array<double, 4>>();
        r.annotations.push_back({{b[0], b[1], b[2], b[3]}, a.at("class_id").get<int>()});
      }
      m.images.push_back(std::move(r));
    }
    for (const auto& [name, arr] : j.at("splits").items()) {
      auto& entries = m.splits[name];
      for (const auto& e : arr)
        entries.push_back({e.at("image_id").get<int>(), e.at("annotations").get<std::vector<int>>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_string(m);
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_string(ss.str());
}

void GeneratorConfig::validate() const {
  if (num_classes < 3) throw ValidationError("generator needs at least 3 classes");
  if (num_classes > 9) throw ValidationError("generator supports at most 9 shape/texture classes");
  if (min_shape < 4 || max_shape < min_shape) throw ValidationError("bad shape size range");
  if (image_size < 4 * max_shape) throw ValidationError("image size must be at least 4x the largest shape");
  if (max_objects < 1) throw ValidationError("max_objects must be positive");
  std::set<ClassId> novel(novel_classes.begin(), novel_classes.end());
  if (novel.size() != novel_classes.size()) throw ValidationError("duplicate novel class");
  for (ClassId c : novel_classes)
    if (c < 0 || c >= num_classes) throw ValidationError("novel class out of range");
  if (static_cast<int>(novel.size()) >= num_classes) throw ValidationError("need at least one base class");
}

std::string class_name(ClassId id) {
  static constexpr const char* kShapes[] = {"square", "circle", "triangle"};
  static constexpr const char* kTextures[] = {"solid", "stripes", "checker"};
  return std::string(kShapes[id / 3]) + "_" + kTextures[id % 3];
}

namespace {

bool inside_shape(int shape, double x, double y, const Box& b) {
  const double w = b.width(), h = b.height();
  const double cx = b.x1 + 0.5 * w, cy = b.y1 + 0.5 * h;
  switch (shape) {
    case 0:
      return x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
    case 1: {
      const double dx = (x - cx) / (0.5 * w), dy = (y - cy) / (0.5 * h);
      return dx * dx + dy * dy <= 1.0;
    }
    default: {
      if (y < b.y1 || y >= b.y2) return false;
      const double half = (y - b.y1) / h * 0.5 * w;
      return std::abs(x - cx) <= half + 0.5;
    }
  }
}

bool textured_bright(int texture, int lx, int ly) {
  switch (texture) {
    case 0: return true;
    case 1: return (ly / 2) % 2 == 0;
    default: return ((lx / 3) + (ly / 3)) % 2 == 0;
  }
}

}  // namespace

RenderedImage render_image(const GeneratorConfig& config, std::span<const ClassId> allowed,
                           std::uint64_t image_seed) {
  if (allowed.empty()) throw ValidationError("render_image: no classes allowed");
  Rng rng(image_seed);
  const int size = config.image_size;
  const double bg = rng.uniform(0.35, 0.65);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = bg + rng.uniform(-0.05, 0.05);
  Matrix px(static_cast<Index>(size) * size, 3);
  for (Index i = 0; i < px.rows(); ++i)
    for (int c = 0; c < 3; ++c) px(i, c) = std::clamp(tint[static_cast<std::size_t>(c)] + 0.04 * rng.normal(), 0.0, 1.0);

  RenderedImage out;
  const int n = rng.uniform_int(1, config.max_objects);
  std::vector<Box> placed;
  for (int o = 0; o < n; ++o) {
    const ClassId cls = allowed[static_cast<std::size_t>(rng.index(allowed.size()))];
    const int w = rng.uniform_int(config.min_shape, config.max_shape);
    const int h = rng.uniform_int(config.min_shape, config.max_shape);
    Box slot;
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      const int x = rng.uniform_int(0, size - w);
      const int y = rng.uniform_int(0, size - h);
      slot = {static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + w), static_cast<double>(y + h)};
      ok = std::none_of(placed.begin(), placed.end(), [&](const Box& p) {
        const Box grown{p.x1 - 1, p.y1 - 1, p.x2 + 1, p.y2 + 1};
        return iou(grown, slot) > 0.0;
      });
    }
    if (!ok) continue;
    placed.push_back(slot);

    std::array<double, 3> color{};
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (auto& c : color) c = rng.uniform();
      const double mean = (color[0] + color[1] + color[2]) / 3.0;
      if (std::abs(mean - bg) > 0.2) break;
    }
    const int shape = cls / 3, texture = cls % 3;
    int minx = size, miny = size, maxx = -1, maxy = -1;
    for (int y = static_cast<int>(slot.y1); y < static_cast<int>(slot.y2); ++y) {
      for (int x = static_cast<int>(slot.x1); x < static_cast<int>(slot.x2); ++x) {
        if (!inside_shape(shape, x + 0.5, y + 0.5, slot)) continue;
        const bool bright = textured_bright(texture, x - static_cast<int>(slot.x1), y - static_cast<int>(slot.y1));
        for (int c = 0; c < 3; ++c) {
          const double v = color[static_cast<std::size_t>(c)] * (bright ? 1.0 : 0.3);
          px(static_cast<Index>(y) * size + x, c) = v;
        }
        minx = std::min(minx, x);
        miny = std::min(miny, y);
        maxx = std::max(maxx, x);
        maxy = std::max(maxy, y);
      }
    }
    if (maxx < 0) continue;
    out.annotations.push_back({{static_cast<double>(minx), static_cast<double>(miny),
                                static_cast<double>(maxx + 1), static_cast<double>(maxy + 1)},
                               cls});
  }
  out.image = FeatureMap(size, size, std::move(px));
  return out;
}

DatasetManifest generate_synthetic(const GeneratorConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  DatasetManifest m;
  std::set<ClassId> novel(config.novel_classes.begin(), config.novel_classes.end());
  std::vector<ClassId> all, base;
  for (ClassId c = 0; c < config.num_classes; ++c) {
    const bool is_novel = novel.contains(c);
    m.classes.push_back({c, class_name(c), is_novel ? ClassRole::kNovel : ClassRole::kBase});
    all.push_back(c);
    if (!is_novel) base.push_back(c);
  }

  struct SplitPlan {
    const char* name;
    int count;
    const std::vector<ClassId>* allowed;
    std::uint64_t stream;
  };
  const SplitPlan plans[] = {{kBaseTrainSplit, config.base_train_images, &base, 1},
                             {kTrainPoolSplit, config.pool_images, &all, 2},
                             {kTestSplit, config.test_images, &all, 3}};
  for (const auto& plan : plans) {
    auto& entries = m.splits[plan.name];
    for (int i = 0; i < plan.count; ++i) {
      const auto seed = derive_seed(derive_seed(config.seed, plan.stream), static_cast<std::uint64_t>(i));
      auto rendered = render_image(config, *plan.allowed, seed);
      ImageRecord rec;
      rec.id = static_cast<int>(m.images.size());
      char name[32];
      std::snprintf(name, sizeof name, "images/%06d.ppm", rec.id);
      rec.file = name;
      rec.width = rec.height = config.image_size;
      rec.annotations = std::move(rendered.annotations);
      write_ppm(out_dir / rec.file, rendered.image);
      SplitEntry e{rec.id, {}};
      for (std::size_t a = 0; a < rec.annotations.size(); ++a) e.annotation_indices.push_back(static_cast<int>(a));
      entries.push_back(std::move(e));
      m.images.push_back(std::move(rec));
    }
  }
  m.validate();
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

DatasetManifest make_kshot_split(const DatasetManifest& manifest, int k,
                                 std::span<const ClassId> novel_classes, std::uint64_t seed) {
  if (k < 1) throw ValidationError("K must be at least 1");
  DatasetManifest out = manifest;
  std::vector<ClassId> wanted = manifest.base_classes();
  for (ClassId c : novel_classes) {
    auto it = std::find_if(manifest.classes.begin(), manifest.classes.end(),
                           [c](const ClassInfo& ci) { return ci.id == c; });
    if (it == manifest.classes.end()) throw ValidationError("unknown novel class " + std::to_string(c));
    if (it->role != ClassRole::kNovel)
      throw ValidationError("class " + std::to_string(c) + " is a base class, not novel");
    wanted.push_back(c);
  }
  std::sort(wanted.begin(), wanted.end());

  std::set<int> test_images;
  if (manifest.splits.contains(kTestSplit))
    for (const auto& e : manifest.split(kTestSplit)) test_images.insert(e.image_id);

  // Candidate instances per class, in a deterministic order before shuffling.
  std::map<ClassId, std::vector<std::pair<int, int>>> candidates;
  for (const auto& [name, entries] : manifest.splits) {
    if (name != kBaseTrainSplit && name != kTrainPoolSplit) continue;
    for (const auto& e : entries) {
      if (test_images.contains(e.image_id)) continue;
      for (int idx : e.annotation_indices) {
        const auto& a = manifest.image(e.image_id).annotations[static_cast<std::size_t>(idx)];
        candidates[a.class_id].emplace_back(e.image_id, idx);
      }
    }
  }
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
  std::map<int, std::vector<int>> chosen;
  for (ClassId c : wanted) {
    auto& pool = candidates[c];
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    if (static_cast<int>(pool.size()) < k)
      throw ValidationError("class " + std::to_string(c) + " (" + class_name(c) + ") has only " +
                            std::to_string(pool.size()) + " instances, K=" + std::to_string(k));
    rng.shuffle(pool);
    for (int i = 0; i < k; ++i) chosen[pool[static_cast<std::size_t>(i)].first].push_back(pool[static_cast<std::size_t>(i)].second);
  }
  auto& split = out.splits[kshot_split_name(k)];
  split.clear();
  for (auto& [image_id, idx] : chosen) {
    std::sort(idx.begin(), idx.end());
    split.push_back({image_id, idx});
  }
  return out;
}

const FeatureMap& ImageCache::get(const ImageRecord& record) {
  auto it = images_.find(record.id);
  if (it != images_.end()) return it->second;
  return images_.emplace(record.id, read_ppm(root_ / record.file)).first->second;
}

SupportCrop make_crop(const ImageRecord& record, const FeatureMap& image, const Box& box,
                      int support_size, double crop_margin) {
  const double mx = crop_margin * box.width(), my = crop_margin * box.height();
  const Box grown = clip_box({box.x1 - mx, box.y1 - my, box.x2 + mx, box.y2 + my}, image.width(), image.height());
  return {record.id, box, crop_resize(image, grown, support_size)};
}

namespace {

struct Instance {
  int image_id;
  int annotation;
};

std::map<ClassId, std::vector<Instance>> instances_by_class(const DatasetManifest& m, const std::string& split) {
  std::map<ClassId, std::vector<Instance>> out;
  for (const auto& e : m.split(split))
    for (int idx : e.annotation_indices)
      out[m.image(e.image_id).annotations[static_cast<std::size_t>(idx)].class_id].push_back({e.image_id, idx});
  return out;
}

std::vector<SupportCrop> draw_crops(const DatasetManifest& m, ImageCache& cache,
                                    std::vector<Instance> pool, int shots, int support_size,
                                    double margin, Rng& rng) {
  // Partial Fisher-Yates: the first `shots` entries become a uniform draw without replacement.
  std::vector<SupportCrop> crops;
  for (int s = 0; s < shots; ++s) {
    const auto j = static_cast<std::size_t>(s) + static_cast<std::size_t>(rng.index(pool.size() - static_cast<std::size_t>(s)));
    std::swap(pool[static_cast<std::size_t>(s)], pool[j]);
    const auto& inst = pool[static_cast<std::size_t>(s)];
    const auto& rec = m.image(inst.image_id);
    crops.push_back(make_crop(rec, cache.get(rec), rec.annotations[static_cast<std::size_t>(inst.annotation)].box,
                              support_size, margin));
  }
  return crops;
}

}  // namespace

Episode sample_episode(const DatasetManifest& manifest, ImageCache& cache,
                       const EpisodeRequest& request, Rng& rng) {
  if (request.roster.empty()) throw ValidationError("sample_episode: empty roster");
  if (request.shots < 1 || request.queries < 1) throw ValidationError("sample_episode: shots and queries must be positive");
  const std::string& support_split = request.support_split.empty() ? request.split : request.support_split;
  const auto support_pool = instances_by_class(manifest, support_split);
  for (ClassId c : request.roster)
    if (!support_pool.contains(c))
      throw ValidationError("roster class " + std::to_string(c) + " absent from split " + support_split);

  const std::set<ClassId> roster(request.roster.begin(), request.roster.end());
  std::vector<const SplitEntry*> eligible;
  for (const auto& e : manifest.split(request.split)) {
    const auto& rec = manifest.image(e.image_id);
    if (std::any_of(e.annotation_indices.begin(), e.annotation_indices.end(), [&](int idx) {
          return roster.contains(rec.annotations[static_cast<std::size_t>(idx)].class_id);
        }))
      eligible.push_back(&e);
  }
  if (static_cast<int>(eligible.size()) < request.queries)
    throw ValidationError("sample_episode: split " + request.split + " has too few images with roster objects");

  for (int attempt = 0; attempt < 32; ++attempt) {
    Episode ep;
    std::set<int> query_ids;
    std::vector<const SplitEntry*> picks = eligible;
    for (int q = 0; q < request.queries; ++q) {
      const auto j = static_cast<std::size_t>(q) + static_cast<std::size_t>(rng.index(picks.size() - static_cast<std::size_t>(q)));
      std::swap(picks[static_cast<std::size_t>(q)], picks[j]);
      query_ids.insert(picks[static_cast<std::size_t>(q)]->image_id);
    }

    for (ClassId c : request.roster) {
      std::vector<Instance> pool;
      for (const auto& inst : support_pool.at(c))
        if (request.mode == EpisodeMode::kTest || !query_ids.contains(inst.image_id)) pool.push_back(inst);
      if (pool.empty()) continue;  // no leak-free source for this class in this episode
      if (static_cast<int>(pool.size()) < request.shots)
        throw ValidationError("class " + std::to_string(c) + " has fewer than " +
                              std::to_string(request.shots) + " support instances");
      ep.support_crops[c] = draw_crops(manifest, cache, std::move(pool), request.shots,
                                       request.support_size, request.crop_margin, rng);
      ep.class_roster.push_back(c);
    }
    const std::set<ClassId> kept(ep.class_roster.begin(), ep.class_roster.end());
    bool has_objects = false;
    for (int q = 0; q < request.queries; ++q) {
      const SplitEntry& e = *picks[static_cast<std::size_t>(q)];
      const auto& rec = manifest.image(e.image_id);
      QueryImage qi{rec.id, cache.get(rec), {}};
      for (int idx : e.annotation_indices) {
        const auto& a = rec.annotations[static_cast<std::size_t>(idx)];
        if (kept.contains(a.class_id)) qi.annotations.push_back(a);
      }
      has_objects = has_objects || !qi.annotations.empty();
      ep.query_images.push_back(std::move(qi));
    }
    if (!has_objects || ep.class_roster.empty()) continue;
    ep.validate(request.shots);
    return ep;
  }
  throw ValidationError("sample_episode: could not draw a leak-free episode from split " + request.split);
}

std::map<ClassId, std::vector<SupportCrop>> collect_support_set(const DatasetManifest& manifest,
                                                                ImageCache& cache,
                                                                const std::string& split,
                                                                std::span<const ClassId> classes,
                                                                int shots, int support_size,
                                                                double crop_margin, Rng& rng) {
  const auto pool = instances_by_class(manifest, split);
  std::map<ClassId, std::vector<SupportCrop>> out;
  for (ClassId c : classes) {
    auto it = pool.find(c);
    if (it == pool.end()) throw ValidationError("class " + std::to_string(c) + " absent from split " + split);
    if (static_cast<int>(it->second.size()) < shots)
      throw ValidationError("class " + std::to_string(c) + " has fewer than " + std::to_string(shots) +
                            " instances in split " + split);
    out[c] = draw_crops(manifest, cache, it->second, shots, support_size, crop_margin, rng);
  }
  return out;
}

}  // namespace fpd::data
