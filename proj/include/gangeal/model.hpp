#pragma once

#include "gangeal/generator.hpp"
#include "gangeal/latent.hpp"
#include "gangeal/perceptual.hpp"
#include "gangeal/stn.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace gangeal {

struct PerceptualConfig {
    std::string kind = "random_features";
    uint64_t seed = 0;
    int64_t width = 8;

    nlohmann::json to_json() const;
    static PerceptualConfig from_json(const nlohmann::json& j);
    FeatureDistance make() const;
};

struct TrainConfig {
    double lambda_tv = 1000.0;
    double lambda_i = 1.0;
    double lr_T = 1e-3;
    double lr_c = 1e-2;
    int64_t batch = 8;
    int64_t total_steps = 6000;
    bool anneal = true;
    int64_t anneal_steps = 2000;
    /// Length of every cosine cycle after the first (which ends at anneal_steps); 0 reuses anneal_steps.
    int64_t restart_period = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    int64_t cutoff = 4;
    int64_t N = 1;
    int64_t K = 1;
    bool flip = false;
    uint64_t seed = 0;
    int64_t pca_pool = 50000;
    int64_t kmeans_pool = 2000;
    /// Similarity recursion used by the downstream correspondence tools.
    int64_t recursion = 1;
    int64_t log_every = 50;
    int64_t checkpoint_every = 0;
    int64_t classifier_steps = 1500;
    int64_t classifier_batch = 16;
    double lr_classifier = 1e-3;
    /// Largest global gradient norm of the warp network per step; 0 disables clipping.
    double grad_clip = 10.0;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

/// Everything needed to build a model from scratch.
struct ModelConfig {
    ToyGeneratorConfig generator;
    NetworkConfig network;
    PerceptualConfig perceptual;
    TrainConfig train;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Parses key = value lines (# starts a comment). Keys are prefixed with
/// generator., network., perceptual. or train.; values become numbers,
/// booleans or strings.
nlohmann::json parse_config_text(const std::string& text);
ModelConfig load_config(const std::filesystem::path& path);

/// A congealing model: generator, distance, warp network and target latents.
struct Model {
    ModelConfig config;
    std::shared_ptr<const ToyGenerator> generator;
    FeatureDistance distance;
    WarpNetwork network{nullptr};
    std::shared_ptr<const LatentBasis> basis;
    std::vector<TargetLatent> targets;
    ClusterClassifier classifier{nullptr};

    int64_t clusters() const { return static_cast<int64_t>(targets.size()); }
    int64_t resolution() const { return config.network.resolution; }
    bool flip_enabled() const { return config.train.flip; }
    int64_t recursion() const { return config.train.recursion; }
    /// True when images need a cluster/flip decision before warping.
    bool needs_assignment() const { return clusters() > 1 || flip_enabled(); }
};

/// Builds generator, distance and a fresh network; fits the latent basis and
/// sets every target to the basis mean. Network clusters and resolution follow
/// train.K and the generator resolution.
Model create_model(ModelConfig config);

} // namespace gangeal
