#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace pnet {

using Index = Eigen::Index;

/// Extents of a rank-4 NCHW array.
struct Shape4 {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  constexpr Index size() const { return n * c * h * w; }
  constexpr Index plane() const { return h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const;
};

/// Raised when operand extents do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value leaves its documented domain (e.g. sigma <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense NCHW array, row-major, owning contiguous storage.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstPlaneMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(Shape4 shape, Scalar fill = Scalar(0)) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
      throw ShapeError("negative tensor extent " + shape.str());
    data_.setConstant(shape.size(), fill);
  }
  Tensor(Shape4 shape, Storage data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.size())
      throw ShapeError("tensor storage of " + std::to_string(data_.size()) +
                       " values does not match shape " + shape.str());
  }

  static Tensor zeros(Shape4 shape) { return Tensor(shape); }
  static Tensor scalar(Scalar v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape4& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Index offset(Index n, Index c, Index y, Index x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  Scalar& operator()(Index n, Index c, Index y, Index x) { return data_[offset(n, c, y, x)]; }
  Scalar operator()(Index n, Index c, Index y, Index x) const { return data_[offset(n, c, y, x)]; }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  /// h x w view of channel c of sample n.
  PlaneMap plane(Index n, Index c) { return PlaneMap(data() + offset(n, c, 0, 0), shape_.h, shape_.w); }
  ConstPlaneMap plane(Index n, Index c) const {
    return ConstPlaneMap(data() + offset(n, c, 0, 0), shape_.h, shape_.w);
  }

  /// Sample n as a (c, h*w) matrix.
  PlaneMap sample(Index n) { return PlaneMap(data() + offset(n, 0, 0, 0), shape_.c, shape_.plane()); }
  ConstPlaneMap sample(Index n) const {
    return ConstPlaneMap(data() + offset(n, 0, 0, 0), shape_.c, shape_.plane());
  }

  bool all_finite() const { return data_.isFinite().all(); }
  void set_zero() { data_.setZero(); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Shape4 shape_{};
  Storage data_;
};

inline std::string Shape4::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

/// Throws ShapeError unless a and b have identical extents.
inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace pnet
