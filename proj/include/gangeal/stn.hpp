#pragma once

#include "gangeal/warp_core.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace gangeal {

struct NetworkConfig {
    int64_t resolution = 64;
    int64_t width = 16;        // channels of the first stage; doubled per stage up to 4x
    int64_t hidden = 128;      // similarity head input features
    int64_t clusters = 1;
    int64_t flow_factor = 8;   // coarse flow lives at resolution / flow_factor
    bool use_flow = true;
    Padding padding = Padding::Reflection;

    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);
};

/// Residual block without normalization; stride 2 halves the resolution.
struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int64_t in, int64_t out, int64_t stride);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Convolutional encoder producing a feature vector for the similarity head.
struct SimBackboneImpl : torch::nn::Module {
    SimBackboneImpl(int64_t resolution, int64_t width, int64_t hidden);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d stem{nullptr};
    torch::nn::Sequential blocks{nullptr};
    torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(SimBackbone);

/// Encoder producing features at resolution / flow_factor for the flow heads.
struct FlowBackboneImpl : torch::nn::Module {
    FlowBackboneImpl(int64_t width, int64_t flow_factor);
    torch::Tensor forward(const torch::Tensor& x);
    int64_t out_channels = 0;

    torch::nn::Conv2d stem{nullptr};
    torch::nn::Sequential blocks{nullptr};
};
TORCH_MODULE(FlowBackbone);

struct SimResult {
    torch::Tensor warped;
    torch::Tensor raw;       // [N, 4] = (o1, o2, o3, o4)
    torch::Tensor matrices;  // [N, 3, 3]
    SamplingGrid grid;
};

struct FlowResult {
    torch::Tensor warped;
    FlowField flow;
};

struct WarpResult {
    torch::Tensor warped;
    SamplingGrid grid;       // composed reverse grid over the raw input
    torch::Tensor raw;       // [N, 4] similarity outputs of the last recursion
    torch::Tensor matrices;  // [N, 3, 3] accumulated similarity
    FlowField flow;          // displacement predicted over the similarity output
    int64_t cluster = 0;

    std::vector<SimilarityParams> similarity() const;
};

struct RecursiveResult {
    torch::Tensor warped;
    torch::Tensor matrices;  // [N, 3, 3] accumulated
};

/// Composed spatial transformer T = T_flow o T_sim with one output head per cluster.
/// Every head starts at zero, so a fresh network is the identity warp.
class WarpNetworkImpl : public torch::nn::Module {
public:
    explicit WarpNetworkImpl(NetworkConfig config = {});

    const NetworkConfig& config() const { return config_; }
    int64_t clusters() const { return config_.clusters; }

    /// Raw similarity outputs o1..o4 for cluster k, [N, 4].
    torch::Tensor sim_raw(const torch::Tensor& image, int64_t cluster);
    SimResult forward_sim(const torch::Tensor& image, int64_t cluster);

    /// Flow predicted directly on `image` and applied to it.
    FlowField predict_flow(const torch::Tensor& image, int64_t cluster);
    FlowResult forward_flow(const torch::Tensor& image, int64_t cluster);

    /// Similarity (applied recursively `recursion` times), then flow; the raw
    /// input is sampled once with the composed grid to form the output.
    WarpResult forward(const torch::Tensor& image, int64_t cluster, int64_t recursion = 1);

    /// forward_sim applied to its own output, matrices accumulated by multiplication.
    RecursiveResult recursive_align(const torch::Tensor& image, int64_t iterations, int64_t cluster = 0);

    SimBackbone sim_backbone{nullptr};
    FlowBackbone flow_backbone{nullptr};
    torch::nn::ModuleList sim_heads{nullptr};
    torch::nn::ModuleList flow_heads{nullptr};
    torch::nn::ModuleList mask_heads{nullptr};

    torch::nn::Linear sim_head(int64_t k);
    torch::nn::Conv2d flow_head(int64_t k);
    torch::nn::Conv2d mask_head(int64_t k);

    /// Parameters of every head of cluster k.
    std::vector<torch::Tensor> cluster_parameters(int64_t k);

private:
    void check_input_(const torch::Tensor& image, int64_t cluster) const;

    NetworkConfig config_;
};
TORCH_MODULE(WarpNetwork);

/// Horizontal mirror of an input batch.
torch::Tensor flip_input(const torch::Tensor& image);

/// Predicts one of 2K (cluster, flip) classes. The backbone is copied from a
/// warp network; the head is freshly initialized.
class ClusterClassifierImpl : public torch::nn::Module {
public:
    ClusterClassifierImpl(const NetworkConfig& config, uint64_t seed = 0);
    /// Copies the similarity backbone weights of `net`.
    void init_from(const WarpNetworkImpl& net);

    /// Logits [N, 2K]; class index = 2 * cluster + flip.
    torch::Tensor forward(const torch::Tensor& image);
    int64_t classes() const { return 2 * clusters_; }

    SimBackbone backbone{nullptr};
    torch::nn::Linear head{nullptr};

private:
    int64_t clusters_ = 1;
};
TORCH_MODULE(ClusterClassifier);

/// Copies parameter values between modules with identical structure.
void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to);

} // namespace gangeal
