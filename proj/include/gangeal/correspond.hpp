#pragma once

#include "gangeal/keypoints.hpp"
#include "gangeal/model.hpp"
#include "gangeal/warp_core.hpp"

#include <torch/torch.h>

#include <optional>
#include <utility>
#include <vector>

namespace gangeal {

/// Per-call overrides; unset fields fall back to the model (recursion) or to
/// an automatic decision (cluster and flip).
struct AlignOptions {
    std::optional<int64_t> recursion;
    std::optional<int64_t> cluster;
    std::optional<bool> flip;
};

/// A single image mapped into congealed space.
struct Alignment {
    SamplingGrid grid;        // [1, H, W, 2] reverse grid over the original (unflipped) image
    torch::Tensor congealed;  // [1, 3, H, W]
    FlowField flow;
    int64_t cluster = 0;
    bool flipped = false;
    double smoothness = 0.0;  // tv_loss of the flow
};

/// True iff the mirrored input yields a strictly smoother flow.
bool decide_flip(WarpNetworkImpl& net, const torch::Tensor& image, int64_t cluster = 0, int64_t recursion = 1);

/// (cluster, flip) for one image: classifier when trained, otherwise the
/// smoothest branch.
std::pair<int64_t, bool> predict_assignment(Model& model, const torch::Tensor& image,
                                            std::optional<int64_t> recursion = std::nullopt);

Alignment align_image(Model& model, const torch::Tensor& image, const AlignOptions& options = {});

/// Original-image pixels to congealed pixels through the nearest grid entry.
/// Points whose nearest entry lies more than `max_residual_px` pixel pitches
/// away are marked not visible.
KeypointSet congeal_points(const SamplingGrid& grid, const KeypointSet& pts, double max_residual_px = 2.0);
/// Congealed pixels to original-image pixels by bilinear lookup of the grid.
KeypointSet uncongeal_points(const SamplingGrid& grid, const KeypointSet& pts);

/// Points of image A mapped to image B through congealed space; labels are
/// permuted when exactly one of the two alignments is mirrored.
KeypointSet transfer_points(const Alignment& a, const Alignment& b, const KeypointSet& pts_a);
KeypointSet transfer_points(Model& model, const torch::Tensor& image_a, const torch::Tensor& image_b,
                            const KeypointSet& pts_a, const AlignOptions& options = {});

/// Congealed-space coordinate seen at every original pixel and its NN residual
/// in pixel pitches: ([1, H, W, 2], [H, W]).
std::pair<SamplingGrid, torch::Tensor> inverse_with_residual(const SamplingGrid& grid);

/// Composites an RGBA overlay drawn in congealed coordinates onto the image.
/// overlay is [1, 4, H, W] with every channel in [-1, 1] (alpha -1 transparent).
torch::Tensor propagate_overlay(const Alignment& alignment, const torch::Tensor& overlay, const torch::Tensor& image);
torch::Tensor propagate_overlay(Model& model, const torch::Tensor& overlay, const torch::Tensor& image,
                                const AlignOptions& options = {});

struct VideoResult {
    std::vector<SamplingGrid> grids;
    std::vector<torch::Tensor> frames;
};

/// Per-frame propagation; the cluster and flip decision of the first frame is
/// held for the whole clip.
VideoResult track_video(Model& model, const std::vector<torch::Tensor>& frames, const torch::Tensor& overlay,
                        const AlignOptions& options = {});

} // namespace gangeal
