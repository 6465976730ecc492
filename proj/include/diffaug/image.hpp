#pragma once

#include "diffaug/tensor.hpp"

namespace diffaug {

/// Declared value interval of an image's pixels.
enum class ValueRange {
  kUnit,       // [0, 1]: dataset storage
  kSymmetric,  // [-1, 1]: diffusion space
  kUnbounded,  // noised intermediate states
};

const char* to_string(ValueRange r);

/// Single image with pixels held as a (1, channels, height, width) tensor.
struct ImageTensor {
  Tensor pixels;
  ValueRange range = ValueRange::kSymmetric;

  ImageTensor() = default;
  ImageTensor(Tensor p, ValueRange r);
  static ImageTensor filled(int channels, int height, int width, Real value,
                            ValueRange r);

  int channels() const { return pixels.shape().c; }
  int height() const { return pixels.shape().h; }
  int width() const { return pixels.shape().w; }
  const Shape& shape() const { return pixels.shape(); }

  Real at(int c, int y, int x) const { return pixels.at(0, c, y, x); }
  Real& at(int c, int y, int x) { return pixels.at(0, c, y, x); }

  /// True when every entry is finite and inside the declared range.
  bool valid() const;
  /// Throws std::domain_error when !valid().
  void validate() const;

  /// Clamps into the interval of `r` and retags. Unbounded is a no-op.
  ImageTensor clamped(ValueRange r) const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// [0,1] -> [-1,1] via x * 2 - 1.
ImageTensor to_symmetric(const ImageTensor& unit);
/// [-1,1] -> [0,1] via (x + 1) / 2, clamped.
ImageTensor to_unit(const ImageTensor& symmetric);

/// Rounds [0,1] pixels to the nearest multiple of 1/255.
ImageTensor quantize_8bit(const ImageTensor& unit);

}  // namespace diffaug
