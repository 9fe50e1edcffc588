#include "mlbviz/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace mlbviz {

std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_to_string(const Shape& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_dims(const Shape& dims) {
  if (dims.empty()) throw std::invalid_argument("tensor: rank must be at least 1");
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument("tensor: extents must be positive, got " + shape_to_string(dims));
  }
}

}  // namespace

Tensor::Tensor(Shape dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(shape_size(dims_), 0.0);
}

Tensor::Tensor(Shape dims, std::vector<double> values) : dims_(std::move(dims)), data_(values.begin(), values.end()) {
  check_dims(dims_);
  if (shape_size(dims_) != data_.size()) {
    throw std::invalid_argument("tensor: " + std::to_string(data_.size()) + " values do not fill " +
                                shape_to_string(dims_));
  }
  require_finite(*this, "tensor");
}

Tensor Tensor::full(Shape dims, double value) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), value);
  require_finite(t, "tensor");
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape dims) const {
  if (shape_size(dims) != size()) {
    throw std::invalid_argument("reshape: " + shape_to_string(dims_) + " -> " + shape_to_string(dims));
  }
  Tensor out;
  out.dims_ = std::move(dims);
  check_dims(out.dims_);
  out.data_ = data_;
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (dims_ != other.dims_) {
    throw std::invalid_argument("tensor +=: " + shape_to_string(dims_) + " vs " + shape_to_string(other.dims_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.dims_ == b.dims_ &&
         (a.data_.empty() || std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
}

Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("tensor -: " + shape_to_string(a.dims()) + " vs " + shape_to_string(b.dims()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(Tensor a, double scale) {
  a *= scale;
  return a;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw std::domain_error(std::string(what) + ": non-finite value");
}

}  // namespace mlbviz
