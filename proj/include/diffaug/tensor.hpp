#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace diffaug {

using Real = double;

/// 64-byte aligned storage so vectorized kernels see the same alignment on
/// every allocation and results are bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using RealBuffer = std::vector<Real, AlignedAllocator<Real>>;

/// Dense NCHW shape. Vectors are (n, c, 1, 1); scalars are (1, 1, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

/// Contiguous row-major NCHW buffer of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> span() { return data_; }
  std::span<const Real> span() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  Real at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  /// Copy of sample `i` as a (1, c, h, w) tensor.
  Tensor sample(int i) const;
  /// Overwrite sample `i` from a (1, c, h, w) tensor.
  void set_sample(int i, const Tensor& src);

  void fill(Real v);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(Real s);

  Real sum() const;
  Real mean() const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  RealBuffer data_;
};

/// Throws ShapeError with `what` as context when shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Stack equally-shaped (1, c, h, w) tensors along the batch axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace diffaug
