#pragma once

#include "gangeal/correspond.hpp"
#include "gangeal/keypoints.hpp"
#include "gangeal/model.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace gangeal {

struct BBox {
    double x = 0.0;
    double y = 0.0;
    double height = 0.0;
    double width = 0.0;
};

struct PckCount {
    int64_t correct = 0;
    int64_t total = 0;

    /// Absent when no point was scored.
    std::optional<double> fraction() const;
    PckCount& operator+=(const PckCount& o);
};

/// Scores points visible in both pred and gt: correct when the error is at most
/// alpha * max(bbox height, bbox width).
PckCount pck_count(const KeypointSet& pred, const KeypointSet& gt, const BBox& bbox, double alpha);
std::optional<double> pck_transfer(const KeypointSet& pred, const KeypointSet& gt, const BBox& bbox, double alpha);

/// One evaluation pair. `prediction` may be filled in by the caller or by
/// transferring source_points from the source image to the target image.
struct PckQuery {
    std::string source;
    std::string target;
    KeypointSet source_points;
    KeypointSet target_points;
    BBox bbox;
    std::optional<KeypointSet> prediction;
};

/// Manifest: JSON list of {source, target, source_points, target_points,
/// bbox: [x, y, h, w], prediction (optional), flip_permutation (optional)}.
std::vector<PckQuery> queries_from_json(const nlohmann::json& j);

struct CurvePoint {
    double alpha = 0.0;
    std::optional<double> pck;
    int64_t points = 0;
};

/// Per-alpha PCK pooled over all scored points of all queries (each query must
/// carry a prediction).
std::vector<CurvePoint> pck_curve(const std::vector<PckQuery>& queries, const std::vector<double>& alphas);

/// Report rows "alpha,pck,n_points".
std::string curve_to_csv(const std::vector<CurvePoint>& curve);
/// Two-column alpha / pck table for plotting.
std::string curve_to_tsv(const std::vector<CurvePoint>& curve);

struct ToyPair {
    torch::Tensor latent_a;
    torch::Tensor latent_b;
};

struct ToyBenchmarkReport {
    std::optional<double> pck;           // transferred keypoints
    std::optional<double> baseline_pck;  // identity mapping of the source keypoints
    int64_t points = 0;
    int64_t pairs = 0;
    double alpha = 0.0;
};

/// Pairs of prior samples drawn from `seed`.
std::vector<ToyPair> toy_pairs(const ToyGenerator& g, int64_t n_pairs, uint64_t seed);

/// Transfers the toy keypoints of A to B and scores them against B's exact
/// keypoints with the full image as bounding box. Every keypoint visible in
/// both ground-truth images is scored, whatever visibility the transfer reports.
ToyBenchmarkReport run_toy_benchmark(Model& model, int64_t n_pairs, double alpha, uint64_t seed = 9001,
                                     const AlignOptions& options = {});
ToyBenchmarkReport run_toy_benchmark(Model& model, const std::vector<ToyPair>& pairs, double alpha,
                                     const AlignOptions& options = {});

} // namespace gangeal
