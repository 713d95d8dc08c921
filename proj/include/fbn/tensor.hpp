#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace fbn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b);

// Dense row-major N-d array. Scalar is float or double.
template <typename Scalar>
class Tensor {
  static_assert(std::is_floating_point_v<Scalar>);

 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.setZero(static_cast<Eigen::Index>(shape_numel(shape_)));
  }

  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (static_cast<std::size_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Array>(values.begin(),
                                                         static_cast<Eigen::Index>(values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) { return constant({1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), size()}; }
  std::span<const Scalar> values() const { return {data_.data(), size()}; }

  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // (row, col, channel) access for h x w x c maps.
  Scalar& at(std::size_t y, std::size_t x, std::size_t c) { return (*this)[offset3(y, x, c)]; }
  Scalar at(std::size_t y, std::size_t x, std::size_t c) const { return (*this)[offset3(y, x, c)]; }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  std::size_t offset3(std::size_t y, std::size_t x, std::size_t c) const {
    return (y * shape_[1] + x) * shape_[2] + c;
  }

  void check_extents() const {
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  Array data_;
};

// Checkpoint encoding: dtype tag (u8: 0=f32, 1=f64), rank (u32), extents (u64 each), payload.
// All little-endian.
template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t);

// Reads a tensor of either dtype, converting to Scalar.
template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is);

std::uint8_t peek_dtype_tag(std::istream& is);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace fbn
