#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gfm/rng.hpp"
#include "gfm/tensor.hpp"

namespace gfm {

// Interleaved H x W x C image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit PNG I/O (1, 3 or 4 channels); values map k <-> k / 255.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
// Single-channel label map stored as 8-bit PNG.
std::vector<int> read_label_png(const std::filesystem::path& path, int* height = nullptr, int* width = nullptr);
void write_label_png(const std::filesystem::path& path, const std::vector<int>& labels, int height, int width);

// Quantises to the 8-bit grid (round to nearest).
Image quantize8(const Image& image);
// Box-filter downscale by an integer factor on 8-bit values, rounded to 8 bits.
Image downscale_box(const Image& image, int factor);
// Stacks images into a [B, H, W, C] tensor.
Tensor<float> stack_images(const std::vector<Image>& images);

struct ManifestRecord {
  std::string path;
  std::string source;
  double gsd_m = 1.0;
  std::optional<int> label;                // single class id
  std::optional<std::vector<int>> labels;  // multi-label set
  std::optional<std::string> location_key;
  std::optional<std::string> timestamp;
  std::optional<std::string> target;   // dense target: segmentation/change mask or high-res image
  std::optional<std::string> partner;  // second image of a change pair
  std::optional<std::string> split;    // "train" / "val"

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // relative paths resolve against this

  std::filesystem::path resolve(const std::string& p) const;
  std::size_t size() const { return records.size(); }
  // Records with split == name (records without a split count as "train").
  DatasetManifest split(const std::string& name) const;
  // location_key -> record indices, for keys with >= 2 distinct timestamps.
  std::vector<std::vector<std::size_t>> temporal_groups() const;
  void validate() const;
};

// JSON-lines, one record per line. Throws parse-error, duplicate-path,
// nonpositive-gsd.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& text, std::filesystem::path base_dir = {});
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Random resized crop (area scale [0.67, 1], aspect [3/4, 4/3]) followed by a
// horizontal flip with probability 0.5. No photometric change.
struct AugmentParams {
  double crop_y = 0, crop_x = 0, crop_h = 1, crop_w = 1;  // source rectangle in pixels
  bool flip = false;
};
AugmentParams draw_augment(int height, int width, Rng& rng);
Image apply_augment(const Image& image, const AugmentParams& params, int out_size);
Image augment(const Image& image, Rng& rng, int out_size);
// Bilinear resize; sample positions use the half-pixel convention.
Image resize_bilinear(const Image& image, int out_h, int out_w);

// Shannon entropy (bits) of the 256-bin histogram of the 8-bit luma
// (0.299 R + 0.587 G + 0.114 B). Throws empty-image.
double image_entropy(const Image& image);

struct EntropyReport {
  std::size_t sample_size = 0;
  double mean_entropy = 0.0;
  std::vector<double> entropies;
  std::vector<std::string> paths;
};

// Mean entropy over a uniform random sample without replacement.
EntropyReport dataset_entropy_report(const DatasetManifest& manifest, std::size_t sample_n, Rng& rng);

// Procedural proxy corpus.
struct SynthSpec {
  std::string style = "geo";  // "geo" (aerial-like scenes) or "natural" (object-centric)
  int tile_size = 32;
  double complexity = 0.5;  // 0 = flat colour fields, 1 = heavy texture
  int unlabeled = 256;      // pretraining tiles
  int temporal_pairs = 0;   // co-located pairs for temporal-pair pretraining
  int classification = 0;
  int multilabel = 0;
  int segmentation = 0;
  int change_pairs = 0;
  int superres = 0;
  int scale_factor = 4;
  double val_fraction = 0.25;
  double zero_edit_fraction = 0.1;  // change pairs rendered with no edits

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

inline constexpr int kSceneClasses = 4;     // residential, water, farmland, forest
inline constexpr int kObjectKinds = 4;      // building, water, road, tree
inline constexpr int kSegmentClasses = 5;   // background + object kinds

struct SynthCorpus {
  std::filesystem::path root;
  DatasetManifest pretrain;
  std::filesystem::path pretrain_manifest;
  std::optional<std::filesystem::path> classification, multilabel, segmentation, change, superres;
};

// Writes PNGs plus one manifest per product under `dest`. Deterministic in
// (spec, seed). Throws unwritable-destination.
SynthCorpus synth_proxy_generate(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& dest);

}  // namespace gfm
