#pragma once

#include "gangeal/model.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace gangeal {

/// Cosine ramp 1/2 (1 - cos(pi min(step / anneal_steps, 1))).
double anneal_weight(int64_t step, int64_t anneal_steps);

/// Target latent whose pose layers move from w (weight 0) to c (weight 1);
/// the appearance layers always come from w. c is [1, D] or [N, D].
MixedLatent anneal_target(const Generator& g, const torch::Tensor& w, const torch::Tensor& c, int64_t step,
                          int64_t anneal_steps, int64_t cutoff);

/// Annealing weight the trainer uses at `step` (1 when annealing is off).
double target_weight(const TrainConfig& config, int64_t step);

/// Learning rate of a cosine schedule with warm restarts. The first cycle
/// ends at `first_cycle`, later cycles last `period` steps.
double cosine_restart_lr(double base, int64_t step, int64_t first_cycle, int64_t period);

/// Per-sample alignment loss of T(x) against the annealed target of cluster k,
/// where x = G(w), mirrored when `flipped`.
torch::Tensor align_loss_per_sample(Model& model, const torch::Tensor& w, int64_t step, int64_t cluster = 0,
                                    bool flipped = false);
torch::Tensor align_loss(Model& model, const torch::Tensor& w, int64_t step, int64_t cluster = 0, bool flipped = false);

struct LossTerms {
    torch::Tensor total;
    torch::Tensor align;
    torch::Tensor tv;
    torch::Tensor ident;
};

/// Batch mean of align + lambda_tv tv + lambda_i identity for cluster 0, unflipped.
LossTerms total_loss(Model& model, const torch::Tensor& w, int64_t step);

struct Assignment {
    LossTerms terms;                 // batch means over the selected branches
    torch::Tensor branch_align;      // [2K, N] align losses; flipped rows stay at +inf when flips are off
    std::vector<int64_t> cluster;    // per sample
    std::vector<bool> flipped;       // per sample
};

/// Hard assignment: evaluates every (cluster, flip) branch, keeps the lowest
/// align loss per sample (ties go to the lowest branch index 2k + flip) and
/// returns the regularized loss of the kept branches.
Assignment cluster_align_loss(Model& model, const torch::Tensor& w, int64_t step);

/// Same selection for an arbitrary image batch rendered from w (no gradients).
std::vector<int64_t> assignment_oracle(Model& model, const torch::Tensor& images, const torch::Tensor& w);

struct KmeansResult {
    std::vector<int64_t> indices;             // chosen pool rows
    std::vector<torch::Tensor> coefficients;  // projections onto the first N directions
};

/// K-means++ seeding under d(w1, w2) = l(G(mix(w1, mean)), G(mix(w2, mean))).
KmeansResult kmeanspp_init(const Generator& g, const FeatureDistance& distance, const LatentBasis& basis,
                           const torch::Tensor& pool, int64_t k, int64_t cutoff, int64_t n, uint64_t seed);

struct Metrics {
    int64_t step = 0;
    double loss = 0.0;
    double align = 0.0;
    double tv = 0.0;
    double ident = 0.0;
    double lr_T = 0.0;
    double lr_c = 0.0;
};

struct TrainOptions {
    std::optional<std::filesystem::path> metrics_csv;
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(const Metrics&)> on_metrics;
};

struct TrainReport {
    std::vector<Metrics> history;  // one entry per logged step
    double classifier_accuracy = -1.0;
};

/// Latent batch drawn for a training step.
torch::Tensor training_latents(const Model& model, int64_t step);

/// Initializes cluster targets (K-means++ for K > 1), then jointly optimizes
/// the warp network and the target coefficients. Trains the cluster classifier
/// afterwards when assignments are needed.
TrainReport train(Model& model, const TrainOptions& options = {});

struct ClassifierReport {
    double train_accuracy = 0.0;  // over the last 10% of steps
};

/// Cross-entropy training of the (cluster, flip) classifier on oracle labels.
ClassifierReport train_classifier(Model& model, int64_t steps, int64_t batch, uint64_t seed);

} // namespace gangeal
