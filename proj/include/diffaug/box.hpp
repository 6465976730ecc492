#pragma once

#include <optional>

#include "diffaug/tensor.hpp"

namespace diffaug {

inline constexpr int kPedestrianCategory = 1;

/// Axis-aligned box in pixel units: (x, y) is the top-left corner.
/// Ground truth carries no confidence; predictions carry one in [0, 1].
struct BoundingBox {
  Real x = 0.0;
  Real y = 0.0;
  Real w = 0.0;
  Real h = 0.0;
  int category = kPedestrianCategory;
  std::optional<Real> confidence;

  Real right() const { return x + w; }
  Real bottom() const { return y + h; }
  Real area() const { return w * h; }
  Real center_x() const { return x + 0.5 * w; }
  Real center_y() const { return y + 0.5 * h; }

  /// Finite coordinates with w > 0, h > 0 and confidence (if any) in [0, 1].
  bool valid() const;
  /// valid() and fully inside a width x height image.
  bool within(int width, int height) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Intersects `b` with the image rectangle. The result may be degenerate.
BoundingBox clip_box(const BoundingBox& b, int width, int height);

/// Throws InvalidBoxError naming `context` if the box is degenerate.
void require_valid_box(const BoundingBox& b, const char* context);

}  // namespace diffaug
