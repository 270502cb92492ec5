#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>

#include "varda/tensor.hpp"

// VTEN tensor records:
//   4 bytes  magic "VTEN"
//   u8       dtype code (1 = float32, 2 = float64)
//   u8       rank
//   u32 LE   extent, repeated `rank` times
//   values   row-major, little-endian IEEE-754 of the dtype width

namespace varda {

static_assert(std::endian::native == std::endian::little, "VTEN I/O assumes a little-endian host");

enum class DType : std::uint8_t { float32 = 1, float64 = 2 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? DType::float32 : DType::float64;
}

inline std::size_t dtype_width(DType t) { return t == DType::float32 ? 4 : 8; }

namespace io {

// Byte source that tracks the offset for error reporting.
class Reader {
 public:
  explicit Reader(std::istream& in, std::uint64_t start = 0) : in_(in), offset_(start) {}

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) throw FormatError(std::string("truncated input while reading ") + what, offset_ + got);
    offset_ += n;
  }
  template <typename T>
  T pod(const char* what) {
    T v;
    read(&v, sizeof(T), what);
    return v;
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_;
};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace io

template <typename Scalar>
void write_tensor(std::ostream& out, const Tensor<Scalar>& t) {
  VARDA_REQUIRE(t.rank() <= 255, "VTEN: rank too large");
  out.write("VTEN", 4);
  io::write_pod(out, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  io::write_pod(out, static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) io::write_pod(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * Index(sizeof(Scalar))));
}

/// Reads one record; values stored in the other float width are converted.
template <typename Scalar>
Tensor<Scalar> read_tensor(io::Reader& in) {
  const std::uint64_t start = in.offset();
  std::array<char, 4> magic{};
  in.read(magic.data(), 4, "VTEN magic");
  if (std::memcmp(magic.data(), "VTEN", 4) != 0) throw FormatError("bad VTEN magic", start);
  const auto code = in.pod<std::uint8_t>("dtype");
  if (code != 1 && code != 2) throw FormatError("unknown VTEN dtype code " + std::to_string(code), start + 4);
  const auto rank = in.pod<std::uint8_t>("rank");
  Shape shape;
  for (unsigned i = 0; i < rank; ++i) {
    const std::uint64_t at = in.offset();
    const auto d = in.pod<std::uint32_t>("extent");
    if (d == 0) throw FormatError("zero extent in VTEN header", at);
    shape.push_back(Index(d));
  }
  const Index n = shape_numel(shape);
  ArrayX<Scalar> data(n);
  if (DType(code) == dtype_of<Scalar>()) {
    in.read(data.data(), std::size_t(n) * sizeof(Scalar), "VTEN values");
  } else if (DType(code) == DType::float32) {
    Eigen::Array<float, Eigen::Dynamic, 1> tmp(n);
    in.read(tmp.data(), std::size_t(n) * 4, "VTEN values");
    data = tmp.template cast<Scalar>();
  } else {
    Eigen::Array<double, Eigen::Dynamic, 1> tmp(n);
    in.read(tmp.data(), std::size_t(n) * 8, "VTEN values");
    data = tmp.template cast<Scalar>();
  }
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& in) {
  io::Reader r(in);
  return read_tensor<Scalar>(r);
}

}  // namespace varda
