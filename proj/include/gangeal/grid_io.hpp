#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>

namespace gangeal {

// "GGFL" container: magic, u32 H, W, C (= 2), then H*W*C little-endian float32,
// row-major and channel-last. Holds either a grid or a flow for one image.

std::string encode_ggfl(const torch::Tensor& field_hw2);
torch::Tensor decode_ggfl(const std::string& bytes);

void write_ggfl(const std::filesystem::path& path, const torch::Tensor& field_hw2);
torch::Tensor read_ggfl(const std::filesystem::path& path);

} // namespace gangeal
