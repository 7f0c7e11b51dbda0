#include "gangeal/keypoints.hpp"

#include <stdexcept>

namespace gangeal {

void check_flip_permutation(const std::vector<int>& perm, size_t n) {
    if (perm.size() != n) {
        throw std::invalid_argument("flip permutation size does not match the point count");
    }
    for (size_t i = 0; i < n; ++i) {
        const int j = perm[i];
        if (j < 0 || static_cast<size_t>(j) >= n || perm[static_cast<size_t>(j)] != static_cast<int>(i)) {
            throw std::invalid_argument("flip permutation must be an involution");
        }
    }
}

KeypointSet permute_for_flip(const KeypointSet& pts) {
    if (!pts.flip_permutation) return pts;
    const auto& perm = *pts.flip_permutation;
    check_flip_permutation(perm, pts.size());
    KeypointSet out = pts;
    for (size_t i = 0; i < pts.size(); ++i) out.points[i] = pts.points[static_cast<size_t>(perm[i])];
    return out;
}

nlohmann::json keypoints_to_json(const KeypointSet& pts) {
    auto arr = nlohmann::json::array();
    for (const auto& p : pts.points) arr.push_back({{"x", p.x}, {"y", p.y}, {"visible", p.visible}});
    return arr;
}

KeypointSet keypoints_from_json(const nlohmann::json& j) {
    if (!j.is_array()) {
        throw std::invalid_argument("keypoints must be a JSON array");
    }
    KeypointSet out;
    for (const auto& item : j) {
        if (!item.is_object() || !item.contains("x") || !item.contains("y")) {
            throw std::invalid_argument("keypoint entries need numeric x and y");
        }
        Keypoint k;
        k.x = item.at("x").get<double>();
        k.y = item.at("y").get<double>();
        k.visible = item.value("visible", true);
        out.points.push_back(k);
    }
    return out;
}

} // namespace gangeal
