#pragma once

// "SVT1" tensor container: magic "SVT1", u32 LE rank, rank × u32 LE extents,
// then the elements as IEEE-754 binary32 little-endian.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "subvae/tensor.hpp"

namespace subvae {

struct SvtArray {
  Shape shape;
  std::vector<float> values;
};

std::string encode_svt(const Shape& shape, std::span<const float> values);
SvtArray decode_svt(std::string_view bytes);

void write_svt(const std::filesystem::path& path, const Shape& shape,
               std::span<const float> values);
SvtArray read_svt(const std::filesystem::path& path);

/// Writes any tensor as float32; double tensors are narrowed.
template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
  if constexpr (std::is_same_v<T, float>) {
    write_svt(path, tensor.shape(), tensor.data());
  } else {
    std::vector<float> narrowed(tensor.data().begin(), tensor.data().end());
    write_svt(path, tensor.shape(), narrowed);
  }
}

Tensor<float> load_tensor(const std::filesystem::path& path);

}  // namespace subvae
