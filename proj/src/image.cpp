#include "diffaug/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "diffaug/errors.hpp"

namespace diffaug {

namespace {
std::pair<Real, Real> bounds(ValueRange r) {
  switch (r) {
    case ValueRange::kUnit: return {0.0, 1.0};
    case ValueRange::kSymmetric: return {-1.0, 1.0};
    case ValueRange::kUnbounded: break;
  }
  return {-INFINITY, INFINITY};
}
}  // namespace

const char* to_string(ValueRange r) {
  switch (r) {
    case ValueRange::kUnit: return "unit";
    case ValueRange::kSymmetric: return "symmetric";
    case ValueRange::kUnbounded: return "unbounded";
  }
  return "?";
}

ImageTensor::ImageTensor(Tensor p, ValueRange r) : pixels(std::move(p)), range(r) {
  if (pixels.shape().n != 1) {
    throw ShapeError("ImageTensor expects batch size 1, got " + pixels.shape().str());
  }
}

ImageTensor ImageTensor::filled(int channels, int height, int width, Real value,
                                ValueRange r) {
  return ImageTensor(Tensor({1, channels, height, width}, value), r);
}

bool ImageTensor::valid() const {
  const auto [lo, hi] = bounds(range);
  return std::all_of(pixels.span().begin(), pixels.span().end(), [&](Real v) {
    return std::isfinite(v) && v >= lo && v <= hi;
  });
}

void ImageTensor::validate() const {
  if (!valid()) {
    throw std::domain_error(std::string("image has entries outside the ") +
                            to_string(range) + " range or non-finite values");
  }
}

ImageTensor ImageTensor::clamped(ValueRange r) const {
  const auto [lo, hi] = bounds(r);
  ImageTensor out(pixels, r);
  for (auto& v : out.pixels.span()) v = std::clamp(v, lo, hi);
  return out;
}

ImageTensor to_symmetric(const ImageTensor& unit) {
  ImageTensor out(unit.pixels, ValueRange::kSymmetric);
  for (auto& v : out.pixels.span()) v = v * 2.0 - 1.0;
  return out;
}

ImageTensor to_unit(const ImageTensor& symmetric) {
  ImageTensor out(symmetric.pixels, ValueRange::kUnit);
  for (auto& v : out.pixels.span()) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
  return out;
}

ImageTensor quantize_8bit(const ImageTensor& unit) {
  ImageTensor out(unit.pixels, ValueRange::kUnit);
  for (auto& v : out.pixels.span()) {
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
  return out;
}

}  // namespace diffaug
