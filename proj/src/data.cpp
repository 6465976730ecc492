#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "diffaug/data.hpp"
#include "diffaug/errors.hpp"

namespace diffaug {

const char* to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::kSimulated: return "simulated";
    case SourceTag::kGenerated: return "generated";
    case SourceTag::kReal: return "real";
  }
  return "?";
}

SourceTag parse_source_tag(const std::string& s) {
  if (s == "simulated") return SourceTag::kSimulated;
  if (s == "generated") return SourceTag::kGenerated;
  if (s == "real") return SourceTag::kReal;
  throw std::invalid_argument("unknown source_tag '" + s + "'");
}

void DetectionDataset::validate() const {
  std::set<std::int64_t> ids;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const std::string where = "/items/" + std::to_string(i);
    if (!ids.insert(item.id).second) {
      throw SchemaError(where + "/id", "duplicate image id " + std::to_string(item.id));
    }
    if (item.image.range != ValueRange::kUnit || !item.image.valid()) {
      throw SchemaError(where + "/image", "pixels must be finite and within [0, 1]");
    }
    for (std::size_t k = 0; k < item.annotations.size(); ++k) {
      const auto& b = item.annotations[k];
      const std::string bw = where + "/annotations/" + std::to_string(k);
      if (!categories.contains(b.category)) {
        throw SchemaError(bw + "/category", "unknown category " + std::to_string(b.category));
      }
      if (!b.within(item.image.width(), item.image.height())) {
        throw SchemaError(bw, "box is degenerate or outside the image");
      }
    }
  }
}

std::size_t DetectionDataset::count_tag(SourceTag tag) const {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [tag](const auto& it) { return it.source == tag; }));
}

std::size_t DetectionDataset::annotation_count() const {
  std::size_t n = 0;
  for (const auto& it : items) n += it.annotations.size();
  return n;
}

DetectionDataset mix_datasets(const DetectionDataset& base, const DetectionDataset& augment) {
  DetectionDataset out;
  out.categories = base.categories;
  std::map<std::string, int> base_by_name;
  for (const auto& [id, name] : base.categories) base_by_name[name] = id;
  std::map<int, int> remap;
  const bool augment_unlabeled = augment.annotation_count() == 0;
  for (const auto& [id, name] : augment.categories) {
    auto it = base_by_name.find(name);
    if (it == base_by_name.end()) {
      if (augment_unlabeled) continue;
      throw CategoryConflictError("mix: category '" + name + "' missing from base dataset");
    }
    remap[id] = it->second;
  }
  if (!augment_unlabeled && !augment.categories.empty()) {
    for (const auto& [id, name] : base.categories) {
      const bool present = std::any_of(augment.categories.begin(), augment.categories.end(),
                                       [&](const auto& kv) { return kv.second == name; });
      if (!present) {
        throw CategoryConflictError("mix: category '" + name + "' missing from augment dataset");
      }
    }
  }

  std::int64_t next_id = 1;
  out.items.reserve(base.size() + augment.size());
  for (const auto& item : base.items) {
    out.items.push_back(item);
    out.items.back().id = next_id++;
  }
  for (const auto& item : augment.items) {
    AnnotatedImage copy = item;
    copy.id = next_id++;
    for (auto& b : copy.annotations) {
      auto it = remap.find(b.category);
      if (it == remap.end()) {
        throw CategoryConflictError("mix: augment annotation uses undeclared category " +
                                    std::to_string(b.category));
      }
      b.category = it->second;
    }
    out.items.push_back(std::move(copy));
  }
  out.provenance = {{"operation", "mix"},
                    {"base_count", base.size()},
                    {"augment_count", augment.size()},
                    {"base", base.provenance},
                    {"augment", augment.provenance}};
  return out;
}

ImageTensor resize_image(const ImageTensor& img, int height, int width) {
  const int c = img.channels(), h = img.height(), w = img.width();
  ImageTensor out = ImageTensor::filled(c, height, width, 0.0, img.range);
  const Real sy = static_cast<Real>(h) / height;
  const Real sx = static_cast<Real>(w) / width;
  for (int oy = 0; oy < height; ++oy) {
    const Real fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<Real>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const Real wy = fy - y0;
    for (int ox = 0; ox < width; ++ox) {
      const Real fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<Real>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const Real wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const Real top = img.at(ch, y0, x0) * (1.0 - wx) + img.at(ch, y0, x1) * wx;
        const Real bot = img.at(ch, y1, x0) * (1.0 - wx) + img.at(ch, y1, x1) * wx;
        out.at(ch, oy, ox) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

DetectionDataset resize_dataset(const DetectionDataset& d, int side) {
  if (side < 16) throw ConfigError("resize: side = " + std::to_string(side) + " must be >= 16");
  DetectionDataset out;
  out.categories = d.categories;
  std::size_t dropped = 0;
  for (const auto& item : d.items) {
    AnnotatedImage r;
    r.id = item.id;
    r.source = item.source;
    const int h = item.image.height(), w = item.image.width();
    if (h == side && w == side) {
      r.image = item.image;
    } else {
      r.image = quantize_8bit(resize_image(item.image, side, side));
    }
    const Real fx = static_cast<Real>(side) / w;
    const Real fy = static_cast<Real>(side) / h;
    for (const auto& b : item.annotations) {
      BoundingBox s = b;
      if (fx != 1.0 || fy != 1.0) {
        s.x = b.x * fx;
        s.y = b.y * fy;
        s.w = b.w * fx;
        s.h = b.h * fy;
        s = clip_box(s, side, side);
      }
      if (s.w < 0.5 || s.h < 0.5) {
        ++dropped;
        continue;
      }
      r.annotations.push_back(s);
    }
    out.items.push_back(std::move(r));
  }
  out.provenance = {{"operation", "resize"},
                    {"side", side},
                    {"dropped_boxes", dropped},
                    {"source", d.provenance}};
  return out;
}

std::vector<Real> channel_means(const DetectionDataset& d) {
  if (d.items.empty()) return {};
  const int c = d.items.front().image.channels();
  std::vector<Real> sums(static_cast<std::size_t>(c), 0.0);
  std::size_t count = 0;
  for (const auto& item : d.items) {
    const auto& img = item.image;
    if (img.channels() != c) throw ShapeError("channel_means: mixed channel counts");
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) sums[ch] += img.at(ch, y, x);
    count += static_cast<std::size_t>(img.height()) * img.width();
  }
  for (auto& s : sums) s /= static_cast<Real>(count);
  return sums;
}

DetectionDataset take_first(const DetectionDataset& d, std::size_t n) {
  DetectionDataset out;
  out.categories = d.categories;
  out.items.assign(d.items.begin(),
                   d.items.begin() + static_cast<std::ptrdiff_t>(std::min(n, d.size())));
  out.provenance = {{"operation", "take_first"}, {"count", out.size()}, {"source", d.provenance}};
  return out;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f << text;
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace diffaug
