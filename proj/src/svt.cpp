#include "subvae/svt.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace subvae {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_svt(const Shape& shape, std::span<const float> values) {
  if (numel(shape) != static_cast<Index>(values.size())) {
    throw Error(ErrorKind::shape, "SVT1: shape " + to_string(shape) + " does not match " +
                                      std::to_string(values.size()) + " values");
  }
  std::string out(kMagic, 4);
  out.reserve(8 + 4 * shape.size() + 4 * values.size());
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (Index extent : shape) put_u32(out, static_cast<std::uint32_t>(extent));
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

SvtArray decode_svt(std::string_view bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::io, "SVT1: bad magic");
  }
  const std::uint32_t rank = get_u32(bytes, 4);
  if (bytes.size() < 8 + 4 * static_cast<std::size_t>(rank)) {
    throw Error(ErrorKind::io, "SVT1: truncated header");
  }
  SvtArray array;
  for (std::uint32_t i = 0; i < rank; ++i) array.shape.push_back(get_u32(bytes, 8 + 4 * i));
  const std::size_t count = static_cast<std::size_t>(numel(array.shape));
  const std::size_t offset = 8 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() != offset + 4 * count) {
    throw Error(ErrorKind::io, "SVT1: payload is " + std::to_string(bytes.size() - offset) +
                                   " bytes, expected " + std::to_string(4 * count));
  }
  array.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    array.values[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
  }
  return array;
}

void write_svt(const std::filesystem::path& path, const Shape& shape,
               std::span<const float> values) {
  const std::string bytes = encode_svt(shape, values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

SvtArray read_svt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return decode_svt(buffer.str());
  } catch (const Error& e) {
    throw Error(ErrorKind::io, path.string() + ": " + e.what());
  }
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  SvtArray array = read_svt(path);
  return Tensor<float>::from_vector(std::move(array.shape), std::move(array.values));
}

}  // namespace subvae
