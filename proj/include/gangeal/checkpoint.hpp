#pragma once

#include "gangeal/model.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace gangeal {

constexpr int kCheckpointVersion = 1;

/// Named float32 tensors in the "GGTS" archive layout: magic, u32 version,
/// u32 count, then per entry u32 name length, name, u32 rank, u64 dims and
/// little-endian float32 data. Entries are written in name order.
std::string encode_tensor_archive(const std::map<std::string, torch::Tensor>& tensors);
std::map<std::string, torch::Tensor> decode_tensor_archive(const std::string& bytes);

/// Writes manifest.json and tensors.bin into `dir` (created if missing).
/// `extra` is merged into the manifest (for example the training step).
void save_checkpoint(const Model& model, const std::filesystem::path& dir, const nlohmann::json& extra = {});
Model load_checkpoint(const std::filesystem::path& dir);
nlohmann::json read_manifest(const std::filesystem::path& dir);

} // namespace gangeal
