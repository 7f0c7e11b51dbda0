#include "gangeal/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gangeal {

std::optional<double> PckCount::fraction() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
}

PckCount& PckCount::operator+=(const PckCount& o) {
    correct += o.correct;
    total += o.total;
    return *this;
}

PckCount pck_count(const KeypointSet& pred, const KeypointSet& gt, const BBox& bbox, double alpha) {
    if (pred.size() != gt.size()) throw std::invalid_argument("pck: prediction and ground truth differ in length");
    if (!(alpha > 0.0)) throw std::invalid_argument("pck: alpha must be positive");
    const double radius = alpha * std::max(bbox.height, bbox.width);
    PckCount c;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (!pred.points[i].visible || !gt.points[i].visible) continue;
        ++c.total;
        if (std::hypot(pred.points[i].x - gt.points[i].x, pred.points[i].y - gt.points[i].y) <= radius) ++c.correct;
    }
    return c;
}

std::optional<double> pck_transfer(const KeypointSet& pred, const KeypointSet& gt, const BBox& bbox, double alpha) {
    return pck_count(pred, gt, bbox, alpha).fraction();
}

std::vector<PckQuery> queries_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("query manifest must be a JSON array");
    std::vector<PckQuery> out;
    for (const auto& item : j) {
        PckQuery q;
        q.source = item.value("source", "");
        q.target = item.value("target", "");
        q.source_points = keypoints_from_json(item.at("source_points"));
        q.target_points = keypoints_from_json(item.at("target_points"));
        const auto& b = item.at("bbox");
        if (!b.is_array() || b.size() != 4) throw std::invalid_argument("bbox must be [x, y, h, w]");
        q.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        if (item.contains("prediction")) q.prediction = keypoints_from_json(item.at("prediction"));
        if (item.contains("flip_permutation")) {
            auto perm = item.at("flip_permutation").get<std::vector<int>>();
            check_flip_permutation(perm, q.source_points.size());
            q.source_points.flip_permutation = perm;
        }
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<CurvePoint> pck_curve(const std::vector<PckQuery>& queries, const std::vector<double>& alphas) {
    if (queries.empty()) throw std::invalid_argument("pck_curve: no queries");
    std::vector<CurvePoint> out;
    for (double alpha : alphas) {
        PckCount total;
        for (const auto& q : queries) {
            if (!q.prediction) throw std::invalid_argument("pck_curve: query without prediction");
            total += pck_count(*q.prediction, q.target_points, q.bbox, alpha);
        }
        out.push_back({alpha, total.fraction(), total.total});
    }
    return out;
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
    std::ostringstream ss;
    ss.precision(10);
    ss << "alpha,pck,n_points\n";
    for (const auto& p : curve) {
        ss << p.alpha << ',';
        if (p.pck) ss << *p.pck;
        ss << ',' << p.points << '\n';
    }
    return ss.str();
}

std::string curve_to_tsv(const std::vector<CurvePoint>& curve) {
    std::ostringstream ss;
    ss.precision(10);
    ss << "alpha\tpck\n";
    for (const auto& p : curve) {
        if (p.pck) ss << p.alpha << '\t' << *p.pck << '\n';
    }
    return ss.str();
}

std::vector<ToyPair> toy_pairs(const ToyGenerator& g, int64_t n_pairs, uint64_t seed) {
    auto a = g.sample_latents(n_pairs, seed);
    auto b = g.sample_latents(n_pairs, seed + 0x51ED);
    std::vector<ToyPair> out;
    for (int64_t i = 0; i < n_pairs; ++i) out.push_back({a[i], b[i]});
    return out;
}

ToyBenchmarkReport run_toy_benchmark(Model& model, const std::vector<ToyPair>& pairs, double alpha,
                                     const AlignOptions& options) {
    const auto& g = *model.generator;
    const double r = static_cast<double>(g.resolution());
    const BBox frame{0.0, 0.0, r, r};
    PckCount ours, baseline;
    for (const auto& pair : pairs) {
        auto img_a = g.synthesize(pair.latent_a.unsqueeze(0));
        auto img_b = g.synthesize(pair.latent_b.unsqueeze(0));
        const auto kp_a = g.keypoints(pair.latent_a);
        const auto kp_b = g.keypoints(pair.latent_b);
        auto pred = transfer_points(model, img_a, img_b, kp_a, options);
        // score by ground-truth visibility only
        for (size_t i = 0; i < pred.size(); ++i) pred.points[i].visible = kp_a.points[i].visible;
        ours += pck_count(pred, kp_b, frame, alpha);
        baseline += pck_count(kp_a, kp_b, frame, alpha);
    }
    return {ours.fraction(), baseline.fraction(), ours.total, static_cast<int64_t>(pairs.size()), alpha};
}

ToyBenchmarkReport run_toy_benchmark(Model& model, int64_t n_pairs, double alpha, uint64_t seed,
                                     const AlignOptions& options) {
    return run_toy_benchmark(model, toy_pairs(*model.generator, n_pairs, seed), alpha, options);
}

} // namespace gangeal
