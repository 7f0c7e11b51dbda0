#pragma once

#include "gangeal/keypoints.hpp"
#include "gangeal/warp_core.hpp"

#include <torch/torch.h>

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gangeal {

/// Layer-routed latent: layers below `cutoff` read `pose`, the rest read `appearance`.
/// Both sources are [N, D] (or [1, D], broadcast over the batch).
struct MixedLatent {
    torch::Tensor pose;
    torch::Tensor appearance;
    int64_t cutoff = 0;
};

/// Differentiable image generator. A latent is a [N, D] tensor made of
/// num_layers() contiguous blocks of layer_dim() entries; images are
/// [N, 3, R, R] in [-1, 1].
class Generator {
public:
    virtual ~Generator() = default;

    virtual int64_t num_layers() const = 0;
    virtual int64_t layer_dim() const = 0;
    int64_t latent_dim() const { return num_layers() * layer_dim(); }
    virtual int64_t resolution() const = 0;

    /// Deterministic draws from the latent prior, [n, D] float32.
    virtual torch::Tensor sample_latents(int64_t n, uint64_t seed) const = 0;
    torch::Tensor sample_latent(uint64_t seed) const { return sample_latents(1, seed)[0]; }

    virtual torch::Tensor synthesize(const torch::Tensor& latents) const = 0;
    torch::Tensor synthesize(const MixedLatent& latent) const;

    MixedLatent mix(const torch::Tensor& pose, const torch::Tensor& appearance, int64_t cutoff) const;
    /// Flattens a MixedLatent to the [N, D] latent it denotes.
    torch::Tensor route(const MixedLatent& latent) const;

    virtual nlohmann::json describe() const = 0;
};

/// Mixture component of the toy prior: with probability `weight` a draw is
/// shifted so that the named pose parameters move by the given amounts
/// (pre-squashing units).
struct PoseComponent {
    double weight = 0.0;
    std::map<std::string, double> offsets;
};

struct ToyGeneratorConfig {
    int64_t resolution = 64;
    int64_t layers = 8;
    int64_t layer_dim = 8;
    int64_t pose_layers = 4;
    uint64_t seed = 1234;
    double max_rotation = 0.7853981633974483;   // pi / 4
    double max_log_scale = 0.47000362924573558;  // ln 1.6
    double max_shift = 0.5;
    double articulation = 0.1;
    /// Optional horizontal mirror parameter m = tanh(gain * u + bias); m = 1 when disabled.
    bool mirror = false;
    double mirror_gain = 1.0;
    double mirror_bias = 0.0;
    std::vector<PoseComponent> mixture;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys throw.
    static ToyGeneratorConfig from_json(const nlohmann::json& j);
};

/// Parses "0.3 mirror=-3.5 tx=0.2; 0.7 mirror=1.5".
std::vector<PoseComponent> parse_mixture(const std::string& text);

/// Decoded toy pose for one latent.
struct ToyPose {
    double rotation = 0.0;
    double scale = 1.0;
    double tx = 0.0;
    double ty = 0.0;
    double mirror = 1.0;
    std::array<double, 4> articulation{};

    /// diag(mirror, 1, 1) * similarity matrix.
    Eigen::Matrix3d matrix() const;
};

/// Procedural generator: a fish-like sprite scene warped by a decoded pose.
/// Every image equals sample(scene(w), ground_truth_grid(w), border), so
/// correspondences between samples are known exactly.
class ToyGenerator : public Generator {
public:
    static constexpr int64_t kPoseParams = 9;
    static const std::array<const char*, kPoseParams> kPoseNames;

    explicit ToyGenerator(ToyGeneratorConfig config = {});

    int64_t num_layers() const override { return config_.layers; }
    int64_t layer_dim() const override { return config_.layer_dim; }
    int64_t resolution() const override { return config_.resolution; }
    int64_t pose_dim() const { return config_.pose_layers * config_.layer_dim; }
    const ToyGeneratorConfig& config() const { return config_; }

    torch::Tensor sample_latents(int64_t n, uint64_t seed) const override;
    using Generator::synthesize;
    torch::Tensor synthesize(const torch::Tensor& latents) const override;
    nlohmann::json describe() const override;

    /// Pre-squashing pose coordinates u = Q * pose_block, [N, kPoseParams].
    torch::Tensor pose_coordinates(const torch::Tensor& latents) const;
    /// Unit latent direction that moves pose parameter `name` by one unit of u.
    torch::Tensor pose_direction(const std::string& name) const;
    static int pose_index(const std::string& name);

    ToyPose decode_pose(const torch::Tensor& latent) const;
    /// Canonical scene colored by each latent's appearance, [N, 3, R, R].
    torch::Tensor scene(const torch::Tensor& latents) const;
    SamplingGrid ground_truth_grid(const torch::Tensor& latents) const;
    /// Sprite coverage in each image, [N, 1, R, R].
    torch::Tensor sprite_alpha(const torch::Tensor& latents) const;

    const std::vector<std::string>& keypoint_names() const { return keypoint_names_; }
    /// Keypoints in scene coordinates (normalized).
    const std::vector<Eigen::Vector2d>& canonical_keypoints() const { return canonical_keypoints_; }
    /// Pixel locations of the canonical keypoints in the image of one latent.
    KeypointSet keypoints(const torch::Tensor& latent) const;

    /// Scene coordinate seen at a pixel of the image of `latent`.
    Eigen::Vector2d scene_point(const ToyPose& pose, const Eigen::Vector2d& pixel) const;
    /// Pixel at which a scene coordinate appears (may lie outside the frame);
    /// empty when the pose collapses the scene.
    std::optional<Eigen::Vector2d> locate(const ToyPose& pose, const Eigen::Vector2d& scene_pt) const;

private:
    torch::Tensor decode_grid_(const torch::Tensor& latents) const;
    const torch::Tensor& buf_(const torch::Tensor& f64, const torch::Tensor& f32, torch::ScalarType t) const;

    ToyGeneratorConfig config_;
    std::vector<double> mixture_cdf_;
    torch::Tensor q_, q32_;          // [P, pose_dim]
    torch::Tensor app_, app32_;      // [16, D - pose_dim]
    torch::Tensor masks_, masks32_;  // [L, R, R]
    torch::Tensor basis_, basis32_;  // [4, R, R, 2]
    torch::Tensor ys_, ys32_;        // [R, R] scene y coordinate
    torch::Tensor alpha_;            // [1, 1, R, R]
    std::vector<std::string> keypoint_names_;
    std::vector<Eigen::Vector2d> canonical_keypoints_;
};

/// Articulation basis fields evaluated at a normalized point.
std::array<Eigen::Vector2d, 4> articulation_basis(double x, double y);

} // namespace gangeal
