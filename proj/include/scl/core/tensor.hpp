#ifndef SCL_CORE_TENSOR_HPP
#define SCL_CORE_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "scl/core/errors.hpp"

namespace scl {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocation. Eigen picks its reduction order from the runtime
/// alignment of a buffer, so every buffer it sees must start on the same boundary for
/// results to be bitwise reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major tensor with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T> vec() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Row-major 2-D access; caller guarantees rank 2.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Views a contiguous block of `rows * cols` values as a row-major matrix.
template <class T>
MatrixMap<T> as_matrix(T* p, std::size_t rows, std::size_t cols) {
  return MatrixMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
ConstMatrixMap<T> as_matrix(const T* p, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// Treats a tensor as [dim0, product of remaining dims].
template <class T>
MatrixMap<T> as_matrix(Tensor<T>& t) {
  const std::size_t rows = t.rank() ? t.dim(0) : 1;
  return as_matrix(t.data(), rows, rows ? t.size() / rows : 0);
}
template <class T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t) {
  const std::size_t rows = t.rank() ? t.dim(0) : 1;
  return as_matrix(t.data(), rows, rows ? t.size() / rows : 0);
}

}  // namespace scl

#endif  // SCL_CORE_TENSOR_HPP
