#include <fstream>
#include <set>
#include <sstream>

#include "diffaug/data.hpp"
#include "diffaug/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace diffaug {

namespace {

constexpr int kFormatVersion = 1;

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(where + "/" + key, "missing required field");
  return *it;
}

std::int64_t int_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number_integer()) throw SchemaError(where + "/" + key, "expected an integer");
  return v.get<std::int64_t>();
}

Real number_field(const json& v, const std::string& where) {
  if (!v.is_number()) throw SchemaError(where, "expected a number");
  return v.get<Real>();
}

const json& array_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_array()) throw SchemaError(where + "/" + key, "expected an array");
  return v;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw SchemaError(origin + ":" + std::to_string(line) + ":" + std::to_string(col),
                      "invalid JSON");
  }
}

json annotations_to_json(const DetectionDataset& d) {
  json images = json::array();
  json annotations = json::array();
  std::int64_t ann_id = 1;
  for (const auto& item : d.items) {
    images.push_back({{"id", item.id},
                      {"file_name", "images/" + std::to_string(item.id) + ".png"},
                      {"width", item.image.width()},
                      {"height", item.image.height()},
                      {"channels", item.image.channels()},
                      {"source_tag", to_string(item.source)}});
    for (const auto& b : item.annotations) {
      json a = {{"id", ann_id++},
                {"image_id", item.id},
                {"category_id", b.category},
                {"bbox", {b.x, b.y, b.w, b.h}},
                {"area", b.area()},
                {"iscrowd", 0}};
      if (b.confidence) a["score"] = *b.confidence;
      annotations.push_back(std::move(a));
    }
  }
  json categories = json::array();
  for (const auto& [id, name] : d.categories) {
    categories.push_back({{"id", id}, {"name", name}, {"supercategory", "person"}});
  }
  return {{"info", {{"description", "diffaug detection dataset"},
                    {"format_version", kFormatVersion}}},
          {"images", std::move(images)},
          {"annotations", std::move(annotations)},
          {"categories", std::move(categories)}};
}

DetectionDataset annotations_from_json(const json& doc) {
  DetectionDataset d;
  d.categories.clear();
  if (!doc.is_object()) throw SchemaError("", "annotation document must be an object");

  const json& cats = array_field(doc, "categories", "");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "/categories/" + std::to_string(i);
    const int id = static_cast<int>(int_field(cats[i], "id", where));
    const json& name = field(cats[i], "name", where);
    if (!name.is_string()) throw SchemaError(where + "/name", "expected a string");
    if (!d.categories.emplace(id, name.get<std::string>()).second) {
      throw SchemaError(where + "/id", "duplicate category id " + std::to_string(id));
    }
  }

  std::map<std::int64_t, std::size_t> index_of;
  const json& images = array_field(doc, "images", "");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "/images/" + std::to_string(i);
    AnnotatedImage item;
    item.id = int_field(images[i], "id", where);
    const int w = static_cast<int>(int_field(images[i], "width", where));
    const int h = static_cast<int>(int_field(images[i], "height", where));
    int c = 3;
    if (images[i].contains("channels")) c = static_cast<int>(int_field(images[i], "channels", where));
    if (w < 1 || h < 1 || c < 1) throw SchemaError(where, "image dimensions must be positive");
    item.image = ImageTensor::filled(c, h, w, 0.0, ValueRange::kUnit);
    if (images[i].contains("source_tag")) {
      const json& tag = images[i]["source_tag"];
      try {
        item.source = parse_source_tag(tag.is_string() ? tag.get<std::string>() : "");
      } catch (const std::invalid_argument&) {
        throw SchemaError(where + "/source_tag", "expected simulated, generated or real");
      }
    }
    if (!index_of.emplace(item.id, d.items.size()).second) {
      throw SchemaError(where + "/id", "duplicate image id " + std::to_string(item.id));
    }
    d.items.push_back(std::move(item));
  }

  const json& anns = array_field(doc, "annotations", "");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "/annotations/" + std::to_string(i);
    const std::int64_t image_id = int_field(anns[i], "image_id", where);
    auto it = index_of.find(image_id);
    if (it == index_of.end()) {
      throw SchemaError(where + "/image_id",
                        "annotation references missing image id " + std::to_string(image_id));
    }
    BoundingBox b;
    b.category = static_cast<int>(int_field(anns[i], "category_id", where));
    if (!d.categories.contains(b.category)) {
      throw SchemaError(where + "/category_id",
                        "unknown category id " + std::to_string(b.category));
    }
    const json& bbox = array_field(anns[i], "bbox", where);
    if (bbox.size() != 4) throw SchemaError(where + "/bbox", "expected [x, y, w, h]");
    b.x = number_field(bbox[0], where + "/bbox/0");
    b.y = number_field(bbox[1], where + "/bbox/1");
    b.w = number_field(bbox[2], where + "/bbox/2");
    b.h = number_field(bbox[3], where + "/bbox/3");
    if (anns[i].contains("score")) b.confidence = number_field(anns[i]["score"], where + "/score");
    if (!b.valid()) throw SchemaError(where + "/bbox", "box must have w > 0 and h > 0");
    AnnotatedImage& item = d.items[it->second];
    if (!b.within(item.image.width(), item.image.height())) {
      throw SchemaError(where + "/bbox", "box lies outside image " + std::to_string(image_id));
    }
    item.annotations.push_back(b);
  }
  return d;
}

void save_dataset(const DetectionDataset& d, const fs::path& root) {
  d.validate();
  fs::path staging = root;
  staging += ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  fs::create_directories(staging / "images");
  for (const auto& item : d.items) {
    write_png(item.image, staging / "images" / (std::to_string(item.id) + ".png"));
  }
  atomic_write_text(staging / "annotations.json", annotations_to_json(d).dump(1));
  atomic_write_text(staging / "provenance.json", d.provenance.dump(1));
  if (fs::exists(root)) fs::remove_all(root);
  if (root.has_parent_path()) fs::create_directories(root.parent_path());
  fs::rename(staging, root);
}

DetectionDataset load_dataset(const fs::path& root) {
  const fs::path ann_path = root / "annotations.json";
  if (!fs::exists(ann_path)) throw IoError("missing " + ann_path.string());
  DetectionDataset d =
      annotations_from_json(parse_json_text(read_text(ann_path), ann_path.string()));
  const fs::path prov_path = root / "provenance.json";
  if (fs::exists(prov_path)) {
    d.provenance = parse_json_text(read_text(prov_path), prov_path.string());
  }
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    auto& item = d.items[i];
    ImageTensor img = read_png(root / "images" / (std::to_string(item.id) + ".png"));
    if (!(img.shape() == item.image.shape())) {
      throw SchemaError("/images/" + std::to_string(i),
                        "png shape " + img.shape().str() + " disagrees with index " +
                            item.image.shape().str());
    }
    item.image = std::move(img);
  }
  return d;
}

}  // namespace diffaug
