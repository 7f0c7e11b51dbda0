#pragma once

// Differentiable warp geometry.
//
// Conventions shared by every module:
//   * images are NCHW tensors (float32 in production, float64 in gradient checks);
//   * sampling grids and flow fields are N x H x W x 2 tensors holding (x, y);
//   * coordinates are normalized and corner-aligned: -1 and +1 are the centers
//     of the first and last pixel, x grows rightward and y grows downward;
//   * a grid is a *reverse* map: entry (i, j) names the source location that is
//     sampled into output pixel (i, j).

#include <torch/torch.h>

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gangeal {

enum class Padding { Reflection, Border, Zeros };

Padding padding_from_string(const std::string& name);
std::string to_string(Padding padding);

/// Reverse sampling grid, coords is [N, H, W, 2].
struct SamplingGrid {
    torch::Tensor coords;

    int64_t batch() const { return coords.size(0); }
    int64_t height() const { return coords.size(1); }
    int64_t width() const { return coords.size(2); }
};

/// Offsets from the identity grid, displacement is [N, H, W, 2].
struct FlowField {
    torch::Tensor displacement;

    int64_t batch() const { return displacement.size(0); }
    int64_t height() const { return displacement.size(1); }
    int64_t width() const { return displacement.size(2); }

    SamplingGrid to_grid() const;
    static FlowField from_grid(const SamplingGrid& grid);
    static FlowField zeros(int64_t batch, int64_t height, int64_t width,
                           torch::TensorOptions options = torch::kFloat32);
};

/// Rotation (radians), uniform scale and shift of a similarity warp.
struct SimilarityParams {
    double rotation = 0.0;
    double scale = 1.0;
    double tx = 0.0;
    double ty = 0.0;

    /// [[s cos r, -s sin r, tx], [s sin r, s cos r, ty], [0, 0, 1]]
    Eigen::Matrix3d matrix() const;
};

// --- grids -----------------------------------------------------------------

/// Corner-aligned identity grid of shape [1, H, W, 2]. A one-pixel dimension
/// maps to -1 (the center of its only pixel).
SamplingGrid identity_grid(int64_t height, int64_t width,
                           torch::TensorOptions options = torch::kFloat32);

/// Identity coordinate of a pixel index along an axis of `size` pixels.
double pixel_to_normalized(double pixel, int64_t size);
double normalized_to_pixel(double coord, int64_t size);

/// r = pi tanh(o1), s = exp(o2), tx = o3, ty = o4.
SimilarityParams similarity_from_raw(const std::array<double, 4>& raw);

/// Batched, differentiable version: raw [N, 4] -> matrices [N, 3, 3].
torch::Tensor similarity_matrices(const torch::Tensor& raw);
/// Same from decoded parameters, each [N].
torch::Tensor similarity_matrices(const torch::Tensor& rotation, const torch::Tensor& scale,
                                  const torch::Tensor& tx, const torch::Tensor& ty);

/// Decomposes the 2x2 block of a similarity matrix back into its parameters.
SimilarityParams similarity_from_matrix(const Eigen::Matrix3d& m);

/// coords[n, i, j] = M[n] * (identity[i, j], 1) with the homogeneous row dropped.
/// `matrices` is [N, 3, 3] (or [3, 3]); differentiable in the matrix entries.
SamplingGrid grid_from_matrix(const torch::Tensor& matrices, int64_t height, int64_t width);
SamplingGrid grid_from_matrix(const Eigen::Matrix3d& m, int64_t height, int64_t width,
                              torch::TensorOptions options = torch::kFloat32);

/// Applies M to every coordinate of an existing grid (exact composition with an affine warp).
SamplingGrid apply_matrix(const torch::Tensor& matrices, const SamplingGrid& grid);

// --- sampling ----------------------------------------------------------------

/// Bilinear sampling of image [N, C, H', W'] at grid [N, H, W, 2] -> [N, C, H, W].
/// Differentiable with respect to both the image and the grid.
torch::Tensor sample(const torch::Tensor& image, const SamplingGrid& grid,
                     Padding padding = Padding::Reflection);

/// Number of sample() calls made by the current thread (instrumentation for tests).
int64_t sample_call_count();

/// result(i, j) = inner evaluated bilinearly at outer(i, j). Out-of-range
/// lookups extrapolate the boundary cell linearly, so affine inner grids compose
/// exactly. Sampling with the result matches sampling with inner, then outer.
SamplingGrid compose(const SamplingGrid& outer, const SamplingGrid& inner);

/// Nearest-neighbor inverse: for each pixel of an H x W lattice returns the
/// identity coordinate of the grid entry closest (Euclidean, normalized units)
/// to that pixel's identity coordinate. Ties resolve to the lowest row-major index.
SamplingGrid invert_grid_nn(const SamplingGrid& grid);

/// Spatial index over the entries of a single [H, W, 2] grid for repeated
/// nearest-entry queries.
class GridIndex {
public:
    explicit GridIndex(const torch::Tensor& coords_hw2);

    struct Hit {
        int64_t row = 0;
        int64_t col = 0;
        double distance = 0.0;
    };

    /// Nearest grid entry to (x, y); ties resolve to the lowest row-major index.
    Hit nearest(double x, double y) const;

    int64_t height() const { return height_; }
    int64_t width() const { return width_; }

private:
    int64_t height_ = 0;
    int64_t width_ = 0;
    std::vector<double> xs_;
    std::vector<double> ys_;
    double min_x_ = 0.0, min_y_ = 0.0;
    double cell_ = 1.0;
    int64_t cells_x_ = 1, cells_y_ = 1;
    std::vector<int64_t> cell_start_;
    std::vector<int64_t> entries_;
};

// --- flow ----------------------------------------------------------------------

/// RAFT-style learned convex upsampling.
/// coarse [N, h, w, 2]; weight_logits [N, 9 * factor * factor, h, w] with channel
/// index k * factor^2 + a * factor + b, k enumerating the 3x3 neighborhood
/// row-major. The logits pass through a softmax over k. Returns [N, h*f, w*f, 2].
FlowField convex_upsample(const FlowField& coarse, const torch::Tensor& weight_logits,
                          int64_t factor = 8);

/// Bilinear resize of a flow field to a new lattice (corner-aligned).
FlowField resize_flow(const FlowField& flow, int64_t height, int64_t width);

constexpr double kHuberDelta = 1.0;

/// Mean over elements of the Huber penalty.
torch::Tensor huber(const torch::Tensor& x, double delta = kHuberDelta);

/// Huber(forward x differences) + Huber(forward y differences), averaged over the batch.
torch::Tensor tv_loss(const FlowField& flow);
/// Same quantity for every batch element separately, [N].
torch::Tensor tv_loss_per_sample(const FlowField& flow);

/// Mean squared displacement.
torch::Tensor identity_reg(const FlowField& flow);
torch::Tensor identity_reg_per_sample(const FlowField& flow);

/// Horizontal mirror of an NCHW image batch.
torch::Tensor flip_horizontal(const torch::Tensor& image);

/// Mirror of a grid expressed in the coordinates of a mirrored input.
SamplingGrid unflip_grid(const SamplingGrid& grid);

} // namespace gangeal
