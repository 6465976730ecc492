#include <png.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "diffaug/data.hpp"
#include "diffaug/errors.hpp"

namespace diffaug {

namespace {
png_uint_32 format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: break;
  }
  throw ShapeError("png: unsupported channel count " + std::to_string(channels));
}
}  // namespace

void write_png(const ImageTensor& unit, const std::filesystem::path& path) {
  const int c = unit.channels(), h = unit.height(), w = unit.width();
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format_for(c);
  std::vector<png_byte> buf(static_cast<std::size_t>(c) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const Real v = std::clamp(unit.at(ch, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("png write failed for " + path.string() + ": " + msg);
  }
}

ImageTensor read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("png read failed for " + path.string() + ": " + img.message);
  }
  int c = 3;
  if ((img.format & PNG_FORMAT_FLAG_COLOR) == 0) c = 1;
  if (img.format & PNG_FORMAT_FLAG_ALPHA) c = c == 1 ? 3 : 4;
  img.format = format_for(c == 1 ? 1 : c);
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("png decode failed for " + path.string() + ": " + msg);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  ImageTensor out = ImageTensor::filled(c, h, w, 0.0, ValueRange::kUnit);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.at(ch, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * c + ch] / 255.0;
  return out;
}

}  // namespace diffaug
