#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gangeal {

/// Interleaved 8-bit pixels, row-major.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1, 3 or 4
    std::vector<uint8_t> data;
};

/// Decodes PNG or JPEG bytes (detected from the signature).
Image8 decode_image(const std::string& bytes);
std::string encode_png(const Image8& image);

Image8 read_image8(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// [1, C, H, W] float32 in [-1, 1]. Gray input is expanded to three channels.
torch::Tensor image_to_tensor(const Image8& image);
/// Accepts [C, H, W] or [1, C, H, W] with values in [-1, 1] (clamped).
Image8 tensor_to_image(const torch::Tensor& t);

torch::Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const torch::Tensor& t);

} // namespace gangeal
