// FOT1 tensor container.
//
// On-disk layout (all integers little-endian):
//   "FOT1"            4 bytes magic
//   u8   dtype code   0 = f32, 1 = u16, 2 = u8, 3 = i32
//   u32  rank         >= 1
//   u32  dims[rank]   each >= 1
//   payload           product(dims) elements, row-major, little-endian
//
// Nothing may follow the payload.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace fo3d {

enum class DType : std::uint8_t { kF32 = 0, kU16 = 1, kU8 = 2, kI32 = 3 };

std::string to_string(DType dtype);
std::size_t dtype_size(DType dtype);

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, std::uint16_t>) return DType::kU16;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::kU8;
  else if constexpr (std::is_same_v<T, std::int32_t>) return DType::kI32;
  else static_assert(sizeof(T) == 0, "unsupported tensor element type");
}

using Shape = std::vector<std::size_t>;

/// Dense row-major tensor of one of the four FOT1 element types.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor. Throws std::invalid_argument on an empty shape or a zero dim.
  Tensor(DType dtype, Shape shape);

  template <class T>
  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t(dtype_of<T>(), std::move(shape));
    if (values.size() != t.numel()) {
      throw std::invalid_argument("Tensor::from: value count does not match shape");
    }
    t.storage_ = std::move(values);
    return t;
  }

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const;

  template <class T>
  std::span<T> values() {
    return std::span<T>(checked<T>());
  }
  template <class T>
  std::span<const T> values() const {
    return std::span<const T>(const_cast<Tensor*>(this)->checked<T>());
  }

  /// Raw payload bytes in host order.
  std::span<const std::byte> bytes() const;
  std::span<std::byte> mutable_bytes();

  /// Bitwise equality of dtype, shape and payload (NaN payloads compare by bits).
  bool bit_equal(const Tensor& other) const;

 private:
  template <class T>
  std::vector<T>& checked() {
    if (dtype_ != dtype_of<T>()) {
      throw std::invalid_argument("Tensor: dtype mismatch, tensor holds " + to_string(dtype_) +
                                  ", requested " + to_string(dtype_of<T>()));
    }
    return std::get<std::vector<T>>(storage_);
  }

  DType dtype_ = DType::kF32;
  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::uint16_t>, std::vector<std::uint8_t>,
               std::vector<std::int32_t>>
      storage_;
};

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// In-memory encode/decode of the same format; used by the file functions.
std::vector<std::byte> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::byte> buffer);

/// Reads a tensor and checks its dtype and rank, throwing FormatError otherwise.
Tensor read_tensor_as(const std::filesystem::path& path, DType dtype, std::size_t rank);

}  // namespace fo3d
