#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diffaug/box.hpp"
#include "diffaug/image.hpp"
#include "json.hpp"

namespace diffaug {

enum class SourceTag { kSimulated, kGenerated, kReal };

const char* to_string(SourceTag tag);
SourceTag parse_source_tag(const std::string& s);

struct AnnotatedImage {
  ImageTensor image;  // [0, 1] at rest
  std::vector<BoundingBox> annotations;
  SourceTag source = SourceTag::kSimulated;
  std::int64_t id = 0;

  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

struct DetectionDataset {
  std::vector<AnnotatedImage> items;
  std::map<int, std::string> categories{{kPedestrianCategory, "pedestrian"}};
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return items.size(); }
  /// Throws SchemaError on duplicate ids, unknown categories, invalid or
  /// out-of-bounds boxes, or pixels outside [0, 1].
  void validate() const;
  std::size_t count_tag(SourceTag tag) const;
  std::size_t annotation_count() const;

  friend bool operator==(const DetectionDataset&, const DetectionDataset&) = default;
};

enum class ToyDomain { kSim, kReal };

const char* to_string(ToyDomain d);
ToyDomain parse_toy_domain(const std::string& s);

using Color = std::array<Real, 3>;

/// Parameters of the procedural pedestrian-scene renderer. The two default
/// domains differ in palette, texture noise and box aspect ratio.
struct ToyDomainSpec {
  ToyDomain domain = ToyDomain::kSim;
  int side = 32;
  int min_count = 1;
  int max_count = 3;

  Color background{0.55, 0.55, 0.58};
  /// Peak-to-peak brightness change from top to bottom row; a random
  /// left-right tilt of up to 0.375x this is added per image.
  Real background_gradient = 0.08;
  Real background_noise = 0.02;

  std::vector<Color> torso_palette;
  Color legs{0.2, 0.2, 0.25};
  Color head{0.95, 0.8, 0.65};
  Real pedestrian_noise = 0.02;
  int min_height = 10;
  int max_height = 20;
  /// Width / height range.
  Real min_aspect = 0.30;
  Real max_aspect = 0.42;

  std::uint64_t seed = 0;

  static ToyDomainSpec defaults(ToyDomain domain, std::uint64_t seed = 0);
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Procedurally renders n scenes with exact boxes for every pedestrian.
DetectionDataset render_toy_dataset(const ToyDomainSpec& spec, int n);

/// Writes <root>/images/<id>.png, <root>/annotations.json and
/// <root>/provenance.json. The directory is assembled under a temporary
/// sibling and renamed into place.
void save_dataset(const DetectionDataset& d, const std::filesystem::path& root);
DetectionDataset load_dataset(const std::filesystem::path& root);

/// COCO-style annotation document for a dataset (no pixel data).
nlohmann::json annotations_to_json(const DetectionDataset& d);
/// Parses an annotation document; images are left empty but sized.
/// Throws SchemaError with a JSON pointer on invalid input.
DetectionDataset annotations_from_json(const nlohmann::json& doc);
/// Parses text, reporting syntax errors as SchemaError("line:col").
nlohmann::json parse_json_text(const std::string& text, const std::string& origin);

/// Concatenates base then augment, renumbering ids from 1.
/// Throws CategoryConflictError unless category names agree.
DetectionDataset mix_datasets(const DetectionDataset& base, const DetectionDataset& augment);

/// Resamples every image to side x side (bilinear) and scales boxes.
/// Boxes narrower or shorter than half a pixel afterwards are dropped; the
/// drop count is recorded in provenance["dropped_boxes"].
DetectionDataset resize_dataset(const DetectionDataset& d, int side);

/// Bilinear resample of one image.
ImageTensor resize_image(const ImageTensor& img, int height, int width);

/// Per-channel mean pixel value over the dataset.
std::vector<Real> channel_means(const DetectionDataset& d);

/// Copies the first n items (all items when n >= size).
DetectionDataset take_first(const DetectionDataset& d, std::size_t n);

// PNG codec (8-bit, 1/3/4 channels) for [0, 1] images.
void write_png(const ImageTensor& unit, const std::filesystem::path& path);
ImageTensor read_png(const std::filesystem::path& path);

/// Write-then-rename of a text file.
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace diffaug
