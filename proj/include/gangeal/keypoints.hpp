#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace gangeal {

struct Keypoint {
    double x = 0.0;  // pixels, origin at the top-left pixel center
    double y = 0.0;
    bool visible = true;
};

/// Points of one image plus an optional left/right pairing used when one image
/// of a transfer pair is mirrored.
struct KeypointSet {
    std::vector<Keypoint> points;
    std::optional<std::vector<int>> flip_permutation;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Throws std::invalid_argument unless `perm` is an involution on [0, n).
void check_flip_permutation(const std::vector<int>& perm, size_t n);

/// Relabels points through the flip permutation (identity when none is set).
KeypointSet permute_for_flip(const KeypointSet& pts);

nlohmann::json keypoints_to_json(const KeypointSet& pts);
/// Accepts a JSON array of {x, y, visible} objects.
KeypointSet keypoints_from_json(const nlohmann::json& j);

} // namespace gangeal
