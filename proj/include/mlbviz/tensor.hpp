#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mlbviz {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Eigen picks its GEMM/GEMV code path from the
// buffer alignment, so fixing it keeps results bit-identical across runs.
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
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& dims);
std::string shape_to_string(const Shape& dims);

// Dense row-major array of doubles. Every extent is positive and every value
// is finite; constructors reject anything else.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims);
  Tensor(Shape dims, std::vector<double> values);

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
  static Tensor full(Shape dims, double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D access; the tensor must be a matrix.
  double at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }

  // 3-D access (channel, row, col).
  double at(std::size_t ch, std::size_t r, std::size_t c) const {
    return data_[(ch * dims_[1] + r) * dims_[2] + c];
  }
  double& at(std::size_t ch, std::size_t r, std::size_t c) {
    return data_[(ch * dims_[1] + r) * dims_[2] + c];
  }

  bool all_finite() const;

  // Same values, new extents of equal product.
  Tensor reshaped(Shape dims) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

  // Bitwise comparison of dims and values.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape dims_;
  Buffer data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(Tensor a, double scale);

double sum(const Tensor& t);
double max_abs(const Tensor& t);
// Largest elementwise |a-b|; dims must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

void require_finite(const Tensor& t, const char* what);

}  // namespace mlbviz
