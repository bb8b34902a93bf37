#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <vector>

namespace dragtraffic::nn {

/// Cache-line aligned storage. Vectorised reductions peel a different number of
/// leading elements depending on the buffer address, so fixed alignment is what
/// keeps repeated runs bit-identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

/// Dense row-major tensor of 64-bit floats. Ranks 1 and 2 are the only ones the
/// network code uses; a rank-1 tensor behaves as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor row(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool same_shape(const Tensor& other) const { return rows() == other.rows() && cols() == other.cols(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row_view(std::size_t r) const { return values().subspan(r * cols(), cols()); }
  std::span<double> row_view(std::size_t r) { return values().subspan(r * cols(), cols()); }

  /// Same data, new shape; the element count must match.
  Tensor reshaped(std::vector<std::size_t> shape) const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

}  // namespace dragtraffic::nn
