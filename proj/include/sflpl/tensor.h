#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sflpl {

using Shape = std::vector<std::size_t>;

/// Allocator with a fixed 64-byte alignment. Vectorised GEMM kernels pick
/// their code path from the buffer alignment, so a fixed alignment keeps
/// results independent of where the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. The first dimension is the batch
/// dimension wherever a tensor carries samples.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Buffer data);
  Tensor(Shape shape, const std::vector<double>& data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Elements per sample, i.e. the volume of every dimension after the first.
  std::size_t sample_size() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const Buffer& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Same buffer, new shape of equal volume.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along the batch dimension.
  Tensor slice_batch(std::size_t begin, std::size_t end) const;

  /// Gathers the listed samples along the batch dimension.
  Tensor gather(std::span<const std::size_t> rows) const;

  void fill(double value);
  bool all_finite() const;

  /// True when shapes match and every element has the same bit pattern.
  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  Buffer data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace sflpl
