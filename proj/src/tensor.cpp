#include "fbn/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace fbn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw std::runtime_error("tensor stream truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <typename Stored, typename Scalar>
Tensor<Scalar> read_payload(std::istream& is, Shape shape) {
  typename Tensor<Scalar>::Array data(static_cast<Eigen::Index>(shape_numel(shape)));
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = static_cast<Scalar>(get_le<Stored>(is));
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

}  // namespace

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t) {
  put_le<std::uint8_t>(os, std::is_same_v<Scalar, float> ? 0 : 1);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  for (auto v : t.values()) put_le<Scalar>(os, v);
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is) {
  auto tag = get_le<std::uint8_t>(is);
  if (tag > 1) throw std::runtime_error("unknown tensor dtype tag " + std::to_string(tag));
  auto rank = get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw std::runtime_error("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
  return tag == 0 ? read_payload<float, Scalar>(is, std::move(shape))
                  : read_payload<double, Scalar>(is, std::move(shape));
}

std::uint8_t peek_dtype_tag(std::istream& is) {
  int c = is.peek();
  if (c == std::char_traits<char>::eof()) throw std::runtime_error("tensor stream truncated");
  return static_cast<std::uint8_t>(c);
}

template class Tensor<float>;
template class Tensor<double>;
template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);

}  // namespace fbn
