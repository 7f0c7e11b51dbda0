#include "gangeal/perceptual.hpp"

#include <cmath>
#include <stdexcept>

namespace gangeal {

namespace F = torch::nn::functional;

FeatureDistance FeatureDistance::pixel() {
    FeatureDistance d;
    d.kind_ = Kind::Pixel;
    d.weights_ = {1.0};
    return d;
}

FeatureDistance FeatureDistance::random_features(uint64_t seed, int64_t width) {
    if (width < 1) throw std::invalid_argument("random_features: width must be positive");
    FeatureDistance d;
    d.kind_ = Kind::RandomFeatures;
    d.seed_ = seed;
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    const std::vector<int64_t> channels = {3, width, 2 * width, 4 * width};
    for (size_t s = 0; s + 1 < channels.size(); ++s) {
        const int64_t in = channels[s], out = channels[s + 1];
        const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
        d.conv_weights_.push_back(torch::randn({out, in, 3, 3}, gen, torch::kFloat64) * std);
        // summing over channels makes every scale a squared distance between unit vectors
        d.weights_.push_back(static_cast<double>(out));
    }
    return d;
}

void FeatureDistance::set_weights(std::vector<double> weights) {
    if (weights.size() != weights_.size()) throw std::invalid_argument("set_weights: wrong number of scales");
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("set_weights: weights must be nonnegative");
    }
    weights_ = std::move(weights);
}

std::vector<torch::Tensor> FeatureDistance::features(const torch::Tensor& x) const {
    if (x.dim() != 4) throw std::invalid_argument("features: expected an NCHW batch");
    if (kind_ == Kind::Pixel) return {x};
    if (x.size(1) != 3) throw std::invalid_argument("features: random_features expects three channels");
    std::vector<torch::Tensor> out;
    auto h = x;
    for (size_t s = 0; s < conv_weights_.size(); ++s) {
        if (s > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
        h = F::pad(h, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
        h = F::leaky_relu(F::conv2d(h, conv_weights_[s].to(x.scalar_type())), F::LeakyReLUFuncOptions().negative_slope(0.2));
        auto norm = h.pow(2).sum(1, true).add(1e-10).sqrt();
        out.push_back(h / norm);
    }
    return out;
}

torch::Tensor FeatureDistance::distance_to_features(const torch::Tensor& x, const std::vector<torch::Tensor>& fy) const {
    auto fx = features(x);
    if (fx.size() != fy.size()) throw std::invalid_argument("distance: feature scale mismatch");
    torch::Tensor total;
    for (size_t s = 0; s < fx.size(); ++s) {
        if (fx[s].sizes() != fy[s].sizes()) throw std::invalid_argument("distance: shape mismatch");
        auto term = (fx[s] - fy[s]).pow(2).flatten(1).mean(1) * weights_[s];
        total = total.defined() ? total + term : term;
    }
    return total;
}

torch::Tensor FeatureDistance::distance_per_sample(const torch::Tensor& x, const torch::Tensor& y) const {
    if (x.sizes() != y.sizes()) throw std::invalid_argument("distance: shape mismatch");
    return distance_to_features(x, features(y));
}

torch::Tensor FeatureDistance::distance(const torch::Tensor& x, const torch::Tensor& y) const {
    return distance_per_sample(x, y).mean();
}

nlohmann::json FeatureDistance::describe() const {
    return {{"kind", kind_ == Kind::Pixel ? "pixel" : "random_features"}, {"seed", seed_}, {"weights", weights_}};
}

FeatureDistance make_extractor(const std::string& kind, uint64_t seed) {
    if (kind == "pixel") return FeatureDistance::pixel();
    if (kind == "random_features") return FeatureDistance::random_features(seed);
    throw std::invalid_argument("unknown perceptual extractor '" + kind + "'");
}

} // namespace gangeal
