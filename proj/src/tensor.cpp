#include "diffaug/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffaug/errors.hpp"

namespace diffaug {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, Real fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::sample(int i) const {
  Shape s{1, shape_.c, shape_.h, shape_.w};
  const std::size_t per = s.numel();
  std::vector<Real> out(data_.begin() + static_cast<std::ptrdiff_t>(per * i),
                        data_.begin() + static_cast<std::ptrdiff_t>(per * (i + 1)));
  return Tensor(s, std::move(out));
}

void Tensor::set_sample(int i, const Tensor& src) {
  const Shape& s = src.shape();
  if (s.n != 1 || s.c != shape_.c || s.h != shape_.h || s.w != shape_.w) {
    throw ShapeError("set_sample: " + s.str() + " into " + shape_.str());
  }
  std::copy(src.data_.begin(), src.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(s.numel() * i));
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(shape_, o.shape_, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(Real s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Real Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Real Tensor::mean() const {
  return data_.empty() ? 0.0 : sum() / static_cast<Real>(data_.size());
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " +
                     b.str());
  }
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) return {};
  const Shape s0 = items.front().shape();
  Tensor out({static_cast<int>(items.size()), s0.c, s0.h, s0.w});
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.set_sample(static_cast<int>(i), items[i]);
  }
  return out;
}

}  // namespace diffaug
