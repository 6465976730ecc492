#include <algorithm>
#include <cmath>
#include <random>

#include "diffaug/data.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/random.hpp"

namespace diffaug {

const char* to_string(ToyDomain d) { return d == ToyDomain::kSim ? "sim" : "real"; }

ToyDomain parse_toy_domain(const std::string& s) {
  if (s == "sim") return ToyDomain::kSim;
  if (s == "real") return ToyDomain::kReal;
  throw ConfigError("unknown toy domain '" + s + "' (use sim or real)");
}

ToyDomainSpec ToyDomainSpec::defaults(ToyDomain domain, std::uint64_t seed) {
  ToyDomainSpec s;
  s.domain = domain;
  s.seed = seed;
  if (domain == ToyDomain::kSim) {
    // Clean render: flat grey street, saturated clothing, slim figures.
    s.background = {0.55, 0.55, 0.58};
    s.background_gradient = 0.08;
    s.background_noise = 0.02;
    s.torso_palette = {{0.90, 0.20, 0.15}, {0.95, 0.60, 0.10},
                       {0.90, 0.85, 0.20}, {0.85, 0.25, 0.70}};
    s.legs = {0.20, 0.20, 0.25};
    s.head = {0.95, 0.80, 0.65};
    s.pedestrian_noise = 0.02;
    s.min_aspect = 0.30;
    s.max_aspect = 0.42;
  } else {
    // Camera-like: darker green-brown scene, sensor noise, muted clothing,
    // broader figures.
    s.background = {0.32, 0.40, 0.28};
    s.background_gradient = 0.12;
    s.background_noise = 0.07;
    s.torso_palette = {{0.15, 0.20, 0.45}, {0.55, 0.55, 0.60},
                       {0.45, 0.28, 0.18}, {0.70, 0.65, 0.50}};
    s.legs = {0.10, 0.10, 0.14};
    s.head = {0.75, 0.60, 0.50};
    s.pedestrian_noise = 0.05;
    s.min_aspect = 0.40;
    s.max_aspect = 0.58;
  }
  return s;
}

void ToyDomainSpec::validate() const {
  if (side < 16) throw ConfigError("toy.side = " + std::to_string(side) + " must be >= 16");
  if (min_count < 0) throw ConfigError("toy.min_count must be >= 0");
  if (max_count < min_count) throw ConfigError("toy.max_count must be >= toy.min_count");
  if (min_height < 3 || max_height < min_height || max_height > side) {
    throw ConfigError("toy.min_height/max_height must satisfy 3 <= min <= max <= side");
  }
  if (!(min_aspect > 0.0 && max_aspect >= min_aspect)) {
    throw ConfigError("toy.min_aspect/max_aspect must satisfy 0 < min <= max");
  }
  if (torso_palette.empty()) throw ConfigError("toy.torso_palette must not be empty");
  if (background_noise < 0.0 || pedestrian_noise < 0.0) {
    throw ConfigError("toy noise levels must be >= 0");
  }
}

namespace {

bool overlaps(const BoundingBox& a, const BoundingBox& b) {
  // One pixel of clearance keeps every figure's extent unoccluded.
  return a.x < b.right() + 1 && b.x < a.right() + 1 && a.y < b.bottom() + 1 &&
         b.y < a.bottom() + 1;
}

AnnotatedImage render_scene(const ToyDomainSpec& spec, std::int64_t id, Rng& rng) {
  const int side = spec.side;
  std::normal_distribution<Real> noise(0.0, 1.0);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  ImageTensor img = ImageTensor::filled(3, side, side, 0.0, ValueRange::kUnit);

  const Real tilt = (unit(rng) - 0.5) * 0.75 * spec.background_gradient;
  for (int y = 0; y < side; ++y) {
    const Real shade = spec.background_gradient * (0.5 - static_cast<Real>(y) / (side - 1));
    for (int x = 0; x < side; ++x) {
      const Real lateral = tilt * (static_cast<Real>(x) / (side - 1) - 0.5);
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = spec.background[c] + shade + lateral +
                          spec.background_noise * noise(rng);
      }
    }
  }

  std::uniform_int_distribution<int> count_dist(spec.min_count, spec.max_count);
  std::uniform_int_distribution<int> height_dist(spec.min_height, spec.max_height);
  std::uniform_real_distribution<Real> aspect_dist(spec.min_aspect, spec.max_aspect);
  std::uniform_int_distribution<std::size_t> palette_dist(0, spec.torso_palette.size() - 1);

  AnnotatedImage item;
  item.id = id;
  item.source = spec.domain == ToyDomain::kSim ? SourceTag::kSimulated : SourceTag::kReal;
  const int wanted = count_dist(rng);
  for (int k = 0; k < wanted; ++k) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int h = height_dist(rng);
      const int w = std::clamp(static_cast<int>(std::lround(h * aspect_dist(rng))), 3, side);
      std::uniform_int_distribution<int> xd(0, side - w), yd(0, side - h);
      const BoundingBox box{static_cast<Real>(xd(rng)), static_cast<Real>(yd(rng)),
                            static_cast<Real>(w), static_cast<Real>(h), kPedestrianCategory, std::nullopt};
      if (std::any_of(item.annotations.begin(), item.annotations.end(),
                      [&](const BoundingBox& o) { return overlaps(box, o); })) {
        continue;
      }
      const Color torso = spec.torso_palette[palette_dist(rng)];
      const int x0 = static_cast<int>(box.x), y0 = static_cast<int>(box.y);
      const int head_h = std::max(2, h / 5);
      const int torso_h = std::max(2, (h - head_h) * 11 / 20);
      const int head_w = std::max(1, (w * 3 + 2) / 5);
      const int head_x0 = x0 + (w - head_w) / 2;
      for (int y = y0; y < y0 + h; ++y) {
        const int row = y - y0;
        for (int x = x0; x < x0 + w; ++x) {
          const Color* color = nullptr;
          if (row < head_h) {
            // Head occupies the top rows; torso and legs span the full width,
            // so the painted extent is exactly the box.
            if (x >= head_x0 && x < head_x0 + head_w) color = &spec.head;
          } else if (row < head_h + torso_h) {
            color = &torso;
          } else {
            color = &spec.legs;
          }
          if (!color) continue;
          for (int c = 0; c < 3; ++c) {
            img.at(c, y, x) = (*color)[c] + spec.pedestrian_noise * noise(rng);
          }
        }
      }
      item.annotations.push_back(box);
      break;
    }
  }
  item.image = quantize_8bit(img.clamped(ValueRange::kUnit));
  return item;
}

}  // namespace

DetectionDataset render_toy_dataset(const ToyDomainSpec& spec, int n) {
  if (n < 1) throw ConfigError("render_toy_dataset: n = " + std::to_string(n) + " must be >= 1");
  spec.validate();
  DetectionDataset d;
  d.items.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    d.items.push_back(render_scene(spec, i + 1, rng));
  }
  d.provenance = {{"operation", "render_toy"},
                  {"domain", to_string(spec.domain)},
                  {"seed", spec.seed},
                  {"count", n},
                  {"side", spec.side}};
  return d;
}

}  // namespace diffaug
