#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace gangeal {

/// Frozen image distance used by the alignment losses.
///
/// Features are extracted at several scales; each scale contributes
/// weight * mean over elements of the squared feature difference. The
/// random-feature extractor unit-normalizes activations along channels first.
class FeatureDistance {
public:
    enum class Kind { Pixel, RandomFeatures };

    static FeatureDistance pixel();
    /// Three-scale random convolutional stack drawn from `seed`.
    static FeatureDistance random_features(uint64_t seed = 0, int64_t width = 16);

    Kind kind() const { return kind_; }
    uint64_t seed() const { return seed_; }
    const std::vector<double>& weights() const { return weights_; }
    void set_weights(std::vector<double> weights);

    /// Feature maps of an NCHW batch (float32 or float64).
    std::vector<torch::Tensor> features(const torch::Tensor& x) const;

    /// Per-sample distance, [N].
    torch::Tensor distance_per_sample(const torch::Tensor& x, const torch::Tensor& y) const;
    /// Batch mean of distance_per_sample.
    torch::Tensor distance(const torch::Tensor& x, const torch::Tensor& y) const;
    /// Distance with precomputed features of y (features of x are taken here).
    torch::Tensor distance_to_features(const torch::Tensor& x, const std::vector<torch::Tensor>& fy) const;

    nlohmann::json describe() const;

private:
    Kind kind_ = Kind::Pixel;
    uint64_t seed_ = 0;
    std::vector<torch::Tensor> conv_weights_;  // float64 masters
    std::vector<double> weights_;
};

/// kind is "pixel" or "random_features".
FeatureDistance make_extractor(const std::string& kind, uint64_t seed = 0);

} // namespace gangeal
