#pragma once

#include "gangeal/model.hpp"
#include "gangeal/warp_core.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gangeal {

/// Largest centered square, resized (antialiased bilinear) to size x size.
torch::Tensor center_crop_resize(const torch::Tensor& image, int64_t size);

struct ImageRecord {
    std::string id;
    torch::Tensor image;  // [1, 3, R, R] in [-1, 1]
};

/// PNG and JPEG files of a directory in filename order, harmonized to `size`.
std::vector<ImageRecord> load_image_dir(const std::filesystem::path& dir, int64_t size);

/// Originals followed by mirrored copies (id suffix "#mirror"); originals untouched.
std::vector<ImageRecord> mirror_augment(const std::vector<ImageRecord>& images);

struct SmoothnessReport {
    std::string id;
    double score = 0.0;  // tv_loss of the predicted flow
    bool flip_used = false;
};

/// Flow smoothness of one image after the cluster/flip decision.
SmoothnessReport smoothness_score(Model& model, const torch::Tensor& image, const std::string& id = {});

/// Number of images kept out of n: ceil(keep_fraction * n).
int64_t kept_count(int64_t n, double keep_fraction);

struct FilterResult {
    std::vector<SmoothnessReport> reports;  // input order
    std::vector<bool> kept;                 // parallel to reports
    std::vector<std::string> kept_ids;      // ascending score, ties by id
};

/// Keeps the keep_fraction of reports with the lowest scores.
FilterResult filter_reports(const std::vector<SmoothnessReport>& reports, double keep_fraction);
FilterResult filter_dataset(Model& model, const std::vector<ImageRecord>& images, double keep_fraction);

struct AlignLimits {
    double extrapolation = 0.25;  // largest tolerated fraction of samples outside the source
    double zoom = 2.0;            // largest tolerated max(s, 1/s) of the accumulated similarity
};

struct AlignRecord {
    std::string id;
    bool kept = false;
    std::string reason;  // "", "zoom" or "extrapolation"
    double zoom = 1.0;
    double extrapolation = 0.0;
    bool flip_used = false;
    torch::Tensor matrix;   // [3, 3] accumulated similarity
    torch::Tensor aligned;  // [1, 3, R, R]; undefined when rejected
};

/// Fraction of grid entries outside [-1, 1] in either coordinate.
double extrapolation_fraction(const SamplingGrid& grid);
/// max(s, 1/s) for the scale s = sqrt(|det|) of the 2x2 block.
double zoom_factor(const torch::Tensor& matrix);

/// Applies a similarity matrix to one image and checks the limits.
AlignRecord align_with_matrix(const torch::Tensor& image, const torch::Tensor& matrix, const AlignLimits& limits,
                              Padding padding, const std::string& id = {});
/// Similarity-only recursive alignment of every image.
std::vector<AlignRecord> align_dataset(Model& model, const std::vector<ImageRecord>& images, const AlignLimits& limits,
                                       std::optional<int64_t> recursion = std::nullopt);

/// CSV with header id,score,flip,kept,reason.
std::string filter_report_csv(const FilterResult& result);
std::string align_report_csv(const std::vector<AlignRecord>& records);

/// Writes kept images as <id>.png plus manifest.csv (id,file) into `dir`.
void write_aligned(const std::filesystem::path& dir, const std::vector<AlignRecord>& records);

} // namespace gangeal
