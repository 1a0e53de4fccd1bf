#pragma once

#include "fpd/rng.hpp"
#include "fpd/types.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fpd::data {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kBaseTrainSplit = "base-train";
inline constexpr const char* kTrainPoolSplit = "train-pool";
inline constexpr const char* kTestSplit = "test";

std::string kshot_split_name(int k);

enum class ClassRole { kBase, kNovel };

struct ClassInfo {
  ClassId id = 0;
  std::string name;
  ClassRole role = ClassRole::kBase;
};

struct ImageRecord {
  int id = 0;
  std::string file;  // relative to the manifest directory
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;
};

/// One image of a split together with the annotations that split uses.
struct SplitEntry {
  int image_id = 0;
  std::vector<int> annotation_indices;
};

/// Versioned description of a dataset:
///   schema_version  integer, currently 1
///   classes         [{id, name, role: "base"|"novel"}]
///   images          [{id, file, width, height, annotations: [{box: [x1,y1,x2,y2], class_id}]}]
///   splits          {name: [{image_id, annotations: [index, ...]}]}
/// Splits are "base-train", "train-pool", "test" and "finetune-<K>".
struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::vector<ClassInfo> classes;
  std::vector<ImageRecord> images;
  std::map<std::string, std::vector<SplitEntry>> splits;

  std::vector<ClassId> base_classes() const;
  std::vector<ClassId> novel_classes() const;
  std::vector<ClassId> all_classes() const;
  const ImageRecord& image(int id) const;
  const std::vector<SplitEntry>& split(const std::string& name) const;
  /// Base/novel disjointness, annotation indices in range, boxes inside images.
  void validate() const;
};

std::string manifest_to_string(const DatasetManifest& m);
DatasetManifest manifest_from_string(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct GeneratorConfig {
  int num_classes = 9;
  std::vector<ClassId> novel_classes{2, 4, 6};
  int image_size = 64;
  int min_shape = 10;
  int max_shape = 16;
  int max_objects = 3;
  int base_train_images = 400;
  int pool_images = 200;
  int test_images = 300;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class id = shape * 3 + texture, shapes {square, circle, triangle},
/// textures {solid, stripes, checker}.
std::string class_name(ClassId id);

struct RenderedImage {
  FeatureMap image;
  std::vector<Annotation> annotations;
};

/// Renders one image whose objects are drawn uniformly from `allowed`. Deterministic in
/// image_seed.
RenderedImage render_image(const GeneratorConfig& config, std::span<const ClassId> allowed,
                           std::uint64_t image_seed);

/// Renders all splits under out_dir/images and writes out_dir/manifest.json.
DatasetManifest generate_synthetic(const GeneratorConfig& config, const std::filesystem::path& out_dir);

/// Adds split "finetune-<K>": exactly K annotations of every base class and every listed
/// novel class, drawn from non-test images.
DatasetManifest make_kshot_split(const DatasetManifest& manifest, int k,
                                 std::span<const ClassId> novel_classes, std::uint64_t seed);

/// Loads images lazily and keeps them for the lifetime of the cache.
class ImageCache {
 public:
  explicit ImageCache(std::filesystem::path root) : root_(std::move(root)) {}
  const FeatureMap& get(const ImageRecord& record);
  void put(int image_id, FeatureMap image) { images_[image_id] = std::move(image); }

 private:
  std::filesystem::path root_;
  std::unordered_map<int, FeatureMap> images_;
};

enum class EpisodeMode { kTrain, kTest };

struct EpisodeRequest {
  std::string split;
  std::string support_split;  // defaults to split when empty
  std::vector<ClassId> roster;
  int shots = 1;
  int queries = 1;
  int support_size = 32;
  double crop_margin = 0.1;
  EpisodeMode mode = EpisodeMode::kTrain;
};

/// Draws query images with at least one roster object and K support crops per class.
/// In training, crops never come from the query images; a roster class with no other
/// source is dropped from the episode together with its query annotations.
Episode sample_episode(const DatasetManifest& manifest, ImageCache& cache,
                       const EpisodeRequest& request, Rng& rng);

/// K support crops per class from `split` (used at evaluation time).
std::map<ClassId, std::vector<SupportCrop>> collect_support_set(const DatasetManifest& manifest,
                                                                ImageCache& cache,
                                                                const std::string& split,
                                                                std::span<const ClassId> classes,
                                                                int shots, int support_size,
                                                                double crop_margin, Rng& rng);

SupportCrop make_crop(const ImageRecord& record, const FeatureMap& image, const Box& box,
                      int support_size, double crop_margin);

}  // namespace fpd::data
