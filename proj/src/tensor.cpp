#include "fo3d/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "fo3d/errors.hpp"

namespace fo3d {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'O', 'T', '1'};
constexpr std::size_t kMaxRank = 16;

void append_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t load_u32(std::span<const std::byte> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

// Reverses each element's bytes in place when the host is big-endian.
void to_little_endian(std::span<std::byte> payload, std::size_t elem) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)payload;
    (void)elem;
  } else {
    for (std::size_t i = 0; i + elem <= payload.size(); i += elem) {
      std::reverse(payload.begin() + i, payload.begin() + i + elem);
    }
  }
}

}  // namespace

std::string to_string(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kU16: return "u16";
    case DType::kU8: return "u8";
    case DType::kI32: return "i32";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kU16: return 2;
    case DType::kU8: return 1;
    case DType::kI32: return 4;
  }
  return 0;
}

Tensor::Tensor(DType dtype, Shape shape) : dtype_(dtype), shape_(std::move(shape)) {
  if (shape_.empty()) throw std::invalid_argument("Tensor: shape must be non-empty");
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("Tensor: every dim must be >= 1");
  }
  const std::size_t n = numel();
  switch (dtype_) {
    case DType::kF32: storage_ = std::vector<float>(n, 0.0f); break;
    case DType::kU16: storage_ = std::vector<std::uint16_t>(n, 0); break;
    case DType::kU8: storage_ = std::vector<std::uint8_t>(n, 0); break;
    case DType::kI32: storage_ = std::vector<std::int32_t>(n, 0); break;
  }
}

std::size_t Tensor::numel() const {
  if (shape_.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  return n;
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); }, storage_);
}

std::span<std::byte> Tensor::mutable_bytes() {
  return std::visit(
      [](auto& v) { return std::as_writable_bytes(std::span(v.data(), v.size())); }, storage_);
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (dtype_ != other.dtype_ || shape_ != other.shape_) return false;
  const auto a = bytes();
  const auto b = other.bytes();
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size()) == 0;
}

std::vector<std::byte> encode_tensor(const Tensor& t) {
  if (t.rank() == 0) throw std::invalid_argument("encode_tensor: empty tensor");
  std::vector<std::byte> out;
  const auto payload = t.bytes();
  out.reserve(4 + 1 + 4 + 4 * t.rank() + payload.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(t.dtype()));
  append_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("encode_tensor: dim exceeds u32");
    }
    append_u32(out, static_cast<std::uint32_t>(d));
  }
  const std::size_t header = out.size();
  out.insert(out.end(), payload.begin(), payload.end());
  to_little_endian(std::span(out).subspan(header), dtype_size(t.dtype()));
  return out;
}

Tensor decode_tensor(std::span<const std::byte> in) {
  if (in.size() < 9) throw FormatError("FOT1: file shorter than header");
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (static_cast<char>(in[i]) != kMagic[i]) throw FormatError("FOT1: bad magic");
  }
  const auto code = std::to_integer<std::uint8_t>(in[4]);
  if (code > 3) throw FormatError("FOT1: unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::uint32_t rank = load_u32(in, 5);
  if (rank == 0 || rank > kMaxRank) throw FormatError("FOT1: invalid rank " + std::to_string(rank));
  const std::size_t header = 9 + 4 * static_cast<std::size_t>(rank);
  if (in.size() < header) throw FormatError("FOT1: truncated header");

  Shape shape(rank);
  const std::size_t elem = dtype_size(dtype);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = load_u32(in, 9 + 4 * static_cast<std::size_t>(i));
    if (d == 0) throw FormatError("FOT1: zero dimension");
    if (numel > std::numeric_limits<std::size_t>::max() / elem / d) {
      throw FormatError("FOT1: dimension product overflows");
    }
    numel *= d;
    shape[i] = d;
  }
  const std::size_t payload = numel * elem;
  if (in.size() - header < payload) throw FormatError("FOT1: truncated payload");
  if (in.size() - header > payload) throw FormatError("FOT1: trailing bytes after payload");

  Tensor t(dtype, std::move(shape));
  auto dst = t.mutable_bytes();
  std::memcpy(dst.data(), in.data() + header, payload);
  to_little_endian(dst, elem);
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto buf = encode_tensor(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open tensor file: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(std::as_bytes(std::span(raw.data(), raw.size())));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor read_tensor_as(const std::filesystem::path& path, DType dtype, std::size_t rank) {
  Tensor t = read_tensor(path);
  if (t.dtype() != dtype) {
    throw FormatError(path.string() + ": expected dtype " + to_string(dtype) + ", found " +
                      to_string(t.dtype()));
  }
  if (t.rank() != rank) {
    throw FormatError(path.string() + ": expected rank " + std::to_string(rank) + ", found " +
                      std::to_string(t.rank()));
  }
  return t;
}

}  // namespace fo3d
