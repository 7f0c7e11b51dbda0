#include "gangeal/generator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace gangeal {

// --- Generator -----------------------------------------------------------------------

MixedLatent Generator::mix(const torch::Tensor& pose, const torch::Tensor& appearance, int64_t cutoff) const {
    if (cutoff < 0 || cutoff > num_layers()) {
        throw std::invalid_argument("mix: cutoff must lie in [0, " + std::to_string(num_layers()) + "]");
    }
    auto as_batch = [&](const torch::Tensor& t) {
        auto b = t.dim() == 1 ? t.unsqueeze(0) : t;
        if (b.dim() != 2 || b.size(1) != latent_dim()) {
            throw std::invalid_argument("mix: latents must be [N, " + std::to_string(latent_dim()) + "]");
        }
        return b;
    };
    return {as_batch(pose), as_batch(appearance), cutoff};
}

torch::Tensor Generator::route(const MixedLatent& latent) const {
    const auto m = mix(latent.pose, latent.appearance, latent.cutoff);
    const int64_t n = std::max(m.pose.size(0), m.appearance.size(0));
    const int64_t split = m.cutoff * layer_dim();
    auto pose = m.pose.slice(1, 0, split).expand({n, split});
    auto app = m.appearance.slice(1, split).expand({n, latent_dim() - split});
    return torch::cat({pose, app}, 1);
}

torch::Tensor Generator::synthesize(const MixedLatent& latent) const { return synthesize(route(latent)); }

// --- configuration ----------------------------------------------------------------------

std::vector<PoseComponent> parse_mixture(const std::string& text) {
    std::vector<PoseComponent> out;
    std::stringstream all(text);
    std::string part;
    while (std::getline(all, part, ';')) {
        std::stringstream ss(part);
        std::string token;
        if (!(ss >> token)) continue;
        PoseComponent c;
        try {
            c.weight = std::stod(token);
        } catch (const std::exception&) {
            throw std::invalid_argument("mixture: expected a weight, got '" + token + "'");
        }
        while (ss >> token) {
            const auto eq = token.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument("mixture: expected name=value, got '" + token + "'");
            }
            const auto name = token.substr(0, eq);
            ToyGenerator::pose_index(name);
            c.offsets[name] = std::stod(token.substr(eq + 1));
        }
        out.push_back(c);
    }
    return out;
}

nlohmann::json ToyGeneratorConfig::to_json() const {
    nlohmann::json mix = nlohmann::json::array();
    for (const auto& c : mixture) {
        mix.push_back({{"weight", c.weight}, {"offsets", c.offsets}});
    }
    return {{"resolution", resolution},     {"layers", layers},
            {"layer_dim", layer_dim},       {"pose_layers", pose_layers},
            {"seed", seed},                 {"max_rotation", max_rotation},
            {"max_log_scale", max_log_scale}, {"max_shift", max_shift},
            {"articulation", articulation}, {"mirror", mirror},
            {"mirror_gain", mirror_gain},   {"mirror_bias", mirror_bias},
            {"mixture", mix}};
}

ToyGeneratorConfig ToyGeneratorConfig::from_json(const nlohmann::json& j) {
    ToyGeneratorConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "resolution") c.resolution = value.get<int64_t>();
        else if (key == "layers") c.layers = value.get<int64_t>();
        else if (key == "layer_dim") c.layer_dim = value.get<int64_t>();
        else if (key == "pose_layers") c.pose_layers = value.get<int64_t>();
        else if (key == "seed") c.seed = value.get<uint64_t>();
        else if (key == "max_rotation") c.max_rotation = value.get<double>();
        else if (key == "max_log_scale") c.max_log_scale = value.get<double>();
        else if (key == "max_shift") c.max_shift = value.get<double>();
        else if (key == "articulation") c.articulation = value.get<double>();
        else if (key == "mirror") c.mirror = value.get<bool>();
        else if (key == "mirror_gain") c.mirror_gain = value.get<double>();
        else if (key == "mirror_bias") c.mirror_bias = value.get<double>();
        else if (key == "kind") {
            if (value.get<std::string>() != "toy") throw std::invalid_argument("unsupported generator kind");
        } else if (key == "mixture") {
            if (value.is_string()) {
                c.mixture = parse_mixture(value.get<std::string>());
            } else {
                c.mixture.clear();
                for (const auto& item : value) {
                    PoseComponent pc;
                    pc.weight = item.at("weight").get<double>();
                    pc.offsets = item.at("offsets").get<std::map<std::string, double>>();
                    c.mixture.push_back(pc);
                }
            }
        } else {
            throw std::invalid_argument("unknown generator option: " + key);
        }
    }
    return c;
}

// --- toy pose ------------------------------------------------------------------------------

Eigen::Matrix3d ToyPose::matrix() const {
    Eigen::Matrix3d m = SimilarityParams{rotation, scale, tx, ty}.matrix();
    m.row(0) *= mirror;
    return m;
}

std::array<Eigen::Vector2d, 4> articulation_basis(double x, double y) {
    return {Eigen::Vector2d(0.0, x * x),                       // bend
            Eigen::Vector2d(0.0, std::sin(std::numbers::pi * x)), // wave
            Eigen::Vector2d(x * (1.0 - y * y), 0.0),           // bulge
            Eigen::Vector2d(x * y, 0.0)};                      // shear
}

const std::array<const char*, ToyGenerator::kPoseParams> ToyGenerator::kPoseNames = {
    "rotation", "scale", "tx", "ty", "mirror", "a1", "a2", "a3", "a4"};

int ToyGenerator::pose_index(const std::string& name) {
    for (int i = 0; i < kPoseParams; ++i) {
        if (name == kPoseNames[i]) return i;
    }
    throw std::invalid_argument("unknown pose parameter: " + name);
}

namespace {

double sdf_ellipse(double x, double y, double cx, double cy, double rx, double ry, double angle = 0.0) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
    return (std::hypot(lx / rx, ly / ry) - 1.0) * std::min(rx, ry);
}

double sdf_polygon(double x, double y, const std::vector<Eigen::Vector2d>& poly) {
    double area = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        area += a.x() * b.y() - b.x() * a.y();
    }
    const double orient = area > 0 ? 1.0 : -1.0;
    double d = -1e9;
    for (size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        Eigen::Vector2d e = b - a;
        Eigen::Vector2d outward(e.y(), -e.x());
        outward *= orient / e.norm();
        d = std::max(d, outward.dot(Eigen::Vector2d(x, y) - a));
    }
    return d;
}

enum Layer { kTail, kDorsal, kBody, kStripeA, kStripeB, kPectoral, kEyeWhite, kPupil, kLayerCount };

double layer_sdf(int layer, double x, double y) {
    const double body = sdf_ellipse(x, y, 0.0, 0.0, 0.46, 0.23);
    switch (layer) {
    case kTail:
        return std::min(sdf_polygon(x, y, {{-0.36, 0.0}, {-0.74, -0.26}, {-0.62, 0.0}}),
                        sdf_polygon(x, y, {{-0.36, 0.0}, {-0.62, 0.0}, {-0.74, 0.26}}));
    case kDorsal: return sdf_polygon(x, y, {{0.12, -0.19}, {-0.16, -0.40}, {-0.22, -0.17}});
    case kBody: return body;
    case kStripeA: return std::max(body, std::abs(x + 0.14) - 0.045);
    case kStripeB: return std::max(body, std::abs(x - 0.06) - 0.045);
    case kPectoral: return sdf_ellipse(x, y, 0.10, 0.13, 0.09, 0.04, 0.35);
    case kEyeWhite: return std::hypot(x - 0.27, y + 0.06) - 0.06;
    case kPupil: return std::hypot(x - 0.285, y + 0.06) - 0.03;
    default: return 1e9;
    }
}

torch::Tensor orthonormal_rows(int64_t rows, int64_t cols, uint64_t seed) {
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    auto a = torch::randn({cols, cols}, gen, torch::kFloat64);
    auto q = std::get<0>(torch::linalg_qr(a));
    return q.t().slice(0, 0, rows).contiguous();
}

} // namespace

ToyGenerator::ToyGenerator(ToyGeneratorConfig config) : config_(std::move(config)) {
    const auto& c = config_;
    if (c.resolution < 2 || c.layers < 1 || c.layer_dim < 1 || c.pose_layers < 1 || c.pose_layers >= c.layers) {
        throw std::invalid_argument("toy generator: invalid dimensions");
    }
    if (pose_dim() < kPoseParams) {
        throw std::invalid_argument("toy generator: pose block smaller than the pose parameter count");
    }
    if (c.max_rotation < 0 || c.max_log_scale < 0 || c.max_shift < 0 || c.articulation < 0) {
        throw std::invalid_argument("toy generator: ranges must be nonnegative");
    }
    double total = 0.0;
    for (const auto& comp : c.mixture) {
        if (comp.weight < 0) throw std::invalid_argument("toy generator: negative mixture weight");
        for (const auto& kv : comp.offsets) pose_index(kv.first);
        total += comp.weight;
        mixture_cdf_.push_back(total);
    }
    if (total > 1.0 + 1e-12) {
        throw std::invalid_argument("toy generator: mixture weights exceed 1");
    }

    q_ = orthonormal_rows(kPoseParams, pose_dim(), c.seed);
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(c.seed + 1);
    const int64_t app_dim = latent_dim() - pose_dim();
    app_ = torch::randn({16, app_dim}, gen, torch::kFloat64) * (1.5 / std::sqrt(static_cast<double>(app_dim)));

    const int64_t r = c.resolution;
    const double pixel = 2.0 / static_cast<double>(r - 1);
    masks_ = torch::empty({kLayerCount, r, r}, torch::kFloat64);
    basis_ = torch::empty({4, r, r, 2}, torch::kFloat64);
    ys_ = torch::empty({r, r}, torch::kFloat64);
    auto ma = masks_.accessor<double, 3>();
    auto ba = basis_.accessor<double, 4>();
    auto ya = ys_.accessor<double, 2>();
    for (int64_t i = 0; i < r; ++i) {
        const double y = pixel_to_normalized(static_cast<double>(i), r);
        for (int64_t j = 0; j < r; ++j) {
            const double x = pixel_to_normalized(static_cast<double>(j), r);
            ya[i][j] = y;
            for (int l = 0; l < kLayerCount; ++l) {
                ma[l][i][j] = 1.0 / (1.0 + std::exp(layer_sdf(l, x, y) / (0.6 * pixel)));
            }
            const auto b = articulation_basis(x, y);
            for (int k = 0; k < 4; ++k) {
                ba[k][i][j][0] = b[k].x();
                ba[k][i][j][1] = b[k].y();
            }
        }
    }
    alpha_ = (1.0 - (1.0 - masks_).prod(0)).view({1, 1, r, r});
    q32_ = q_.to(torch::kFloat32);
    app32_ = app_.to(torch::kFloat32);
    masks32_ = masks_.to(torch::kFloat32);
    basis32_ = basis_.to(torch::kFloat32);
    ys32_ = ys_.to(torch::kFloat32);

    keypoint_names_ = {"nose", "eye", "dorsal_tip", "dorsal_front", "tail_top",
                       "tail_bottom", "tail_base", "pectoral", "belly", "back"};
    canonical_keypoints_ = {{0.46, 0.0},   {0.27, -0.06}, {-0.16, -0.40}, {0.12, -0.19}, {-0.74, -0.26},
                            {-0.74, 0.26}, {-0.40, 0.0},  {0.14, 0.15},   {-0.05, 0.23}, {-0.25, -0.19}};
}

const torch::Tensor& ToyGenerator::buf_(const torch::Tensor& f64, const torch::Tensor& f32,
                                        torch::ScalarType t) const {
    return t == torch::kFloat64 ? f64 : f32;
}

torch::Tensor ToyGenerator::sample_latents(int64_t n, uint64_t seed) const {
    if (n < 0) throw std::invalid_argument("sample_latents: negative count");
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    auto z = torch::randn({n, latent_dim()}, gen, torch::kFloat64);
    if (!config_.mixture.empty() && n > 0) {
        auto pick = torch::rand({n}, gen, torch::kFloat64);
        auto pa = pick.accessor<double, 1>();
        for (int64_t i = 0; i < n; ++i) {
            for (size_t k = 0; k < mixture_cdf_.size(); ++k) {
                if (pa[i] < mixture_cdf_[k]) {
                    for (const auto& [name, delta] : config_.mixture[k].offsets) {
                        z[i].slice(0, 0, pose_dim()).add_(q_[pose_index(name)] * delta);
                    }
                    break;
                }
            }
        }
    }
    return z.to(torch::kFloat32);
}

torch::Tensor ToyGenerator::pose_coordinates(const torch::Tensor& latents) const {
    auto w = latents.dim() == 1 ? latents.unsqueeze(0) : latents;
    if (w.dim() != 2 || w.size(1) != latent_dim()) {
        throw std::invalid_argument("toy generator: latents must be [N, " + std::to_string(latent_dim()) + "]");
    }
    const auto& q = buf_(q_, q32_, w.scalar_type());
    return torch::matmul(w.slice(1, 0, pose_dim()), q.t());
}

torch::Tensor ToyGenerator::pose_direction(const std::string& name) const {
    auto d = torch::zeros({latent_dim()}, torch::kFloat32);
    d.slice(0, 0, pose_dim()).copy_(q32_[pose_index(name)]);
    return d;
}

ToyPose ToyGenerator::decode_pose(const torch::Tensor& latent) const {
    auto u = pose_coordinates(latent.detach().to(torch::kFloat64).reshape({1, -1}))[0];
    auto ua = u.accessor<double, 1>();
    ToyPose p;
    p.rotation = config_.max_rotation * std::tanh(ua[0]);
    p.scale = std::exp(config_.max_log_scale * std::tanh(ua[1]));
    p.tx = config_.max_shift * std::tanh(ua[2]);
    p.ty = config_.max_shift * std::tanh(ua[3]);
    p.mirror = config_.mirror ? std::tanh(config_.mirror_gain * ua[4] + config_.mirror_bias) : 1.0;
    for (int k = 0; k < 4; ++k) p.articulation[k] = config_.articulation * std::tanh(ua[5 + k]);
    return p;
}

torch::Tensor ToyGenerator::decode_grid_(const torch::Tensor& latents) const {
    auto u = pose_coordinates(latents);
    const auto& c = config_;
    const int64_t n = u.size(0), r = c.resolution;
    auto m = similarity_matrices(c.max_rotation * torch::tanh(u.select(1, 0)),
                                 torch::exp(c.max_log_scale * torch::tanh(u.select(1, 1))),
                                 c.max_shift * torch::tanh(u.select(1, 2)),
                                 c.max_shift * torch::tanh(u.select(1, 3)));
    if (c.mirror) {
        auto mirror = torch::tanh(c.mirror_gain * u.select(1, 4) + c.mirror_bias);
        auto scale = torch::stack({mirror, torch::ones_like(mirror), torch::ones_like(mirror)}, 1);
        m = m * scale.unsqueeze(2);
    }
    auto a = c.articulation * torch::tanh(u.slice(1, 5, 9));
    const auto& basis = buf_(basis_, basis32_, u.scalar_type());
    auto d = torch::matmul(a, basis.view({4, -1})).view({n, r, r, 2});
    auto id = identity_grid(r, r, u.options()).coords;
    return apply_matrix(m, SamplingGrid{id + d}).coords;
}

SamplingGrid ToyGenerator::ground_truth_grid(const torch::Tensor& latents) const {
    return {decode_grid_(latents)};
}

torch::Tensor ToyGenerator::sprite_alpha(const torch::Tensor& latents) const {
    auto grid = ground_truth_grid(latents.detach().to(torch::kFloat64));
    return sample(alpha_.expand({grid.batch(), 1, -1, -1}), grid, Padding::Border);
}

torch::Tensor ToyGenerator::scene(const torch::Tensor& latents) const {
    auto w = latents.dim() == 1 ? latents.unsqueeze(0) : latents;
    if (w.dim() != 2 || w.size(1) != latent_dim()) {
        throw std::invalid_argument("toy generator: latents must be [N, " + std::to_string(latent_dim()) + "]");
    }
    const auto t = w.scalar_type();
    auto v = torch::tanh(torch::matmul(w.slice(1, pose_dim()), buf_(app_, app32_, t).t()));  // [N, 16]
    auto rgb = [&](int64_t k) { return v.slice(1, k, k + 3).unsqueeze(2).unsqueeze(3); };
    auto bg = -0.55 + 0.3 * rgb(0);
    auto tint = 0.15 * rgb(3);
    auto body = 0.35 + 0.45 * rgb(6);
    auto stripe = -0.1 + 0.5 * rgb(9);
    auto accent = 0.25 + 0.5 * rgb(12);
    auto constant = [&](double value) { return torch::full({w.size(0), 3, 1, 1}, value, v.options()); };

    const auto& masks = buf_(masks_, masks32_, t);
    auto out = bg + tint * buf_(ys_, ys32_, t);
    const torch::Tensor colors[kLayerCount] = {accent, accent, body, stripe, stripe,
                                               accent - 0.2, constant(0.9), constant(-0.9)};
    for (int l = 0; l < kLayerCount; ++l) {
        auto m = masks[l];
        out = out + m * (colors[l] - out);
    }
    return out;
}

torch::Tensor ToyGenerator::synthesize(const torch::Tensor& latents) const {
    auto w = latents.dim() == 1 ? latents.unsqueeze(0) : latents;
    if (!torch::isfinite(w).all().item<bool>()) {
        throw std::invalid_argument("synthesize: non-finite latent");
    }
    return sample(scene(w), ground_truth_grid(w), Padding::Border);
}

nlohmann::json ToyGenerator::describe() const {
    auto j = config_.to_json();
    j["kind"] = "toy";
    return j;
}

Eigen::Vector2d ToyGenerator::scene_point(const ToyPose& pose, const Eigen::Vector2d& pixel) const {
    const int64_t r = config_.resolution;
    const double x = pixel_to_normalized(pixel.x(), r), y = pixel_to_normalized(pixel.y(), r);
    const auto b = articulation_basis(x, y);
    Eigen::Vector2d u(x, y);
    for (int k = 0; k < 4; ++k) u += pose.articulation[k] * b[k];
    return (pose.matrix() * u.homogeneous()).head<2>();
}

std::optional<Eigen::Vector2d> ToyGenerator::locate(const ToyPose& pose, const Eigen::Vector2d& scene_pt) const {
    if (std::abs(pose.mirror) < 1e-6) return std::nullopt;
    const Eigen::Vector2d target = (pose.matrix().inverse() * scene_pt.homogeneous()).head<2>();
    Eigen::Vector2d u = target;
    for (int it = 0; it < 200; ++it) {
        const auto b = articulation_basis(u.x(), u.y());
        Eigen::Vector2d d = Eigen::Vector2d::Zero();
        for (int k = 0; k < 4; ++k) d += pose.articulation[k] * b[k];
        const Eigen::Vector2d next = target - d;
        const double step = (next - u).norm();
        u = next;
        if (step < 1e-13) break;
    }
    const int64_t r = config_.resolution;
    return Eigen::Vector2d(normalized_to_pixel(u.x(), r), normalized_to_pixel(u.y(), r));
}

KeypointSet ToyGenerator::keypoints(const torch::Tensor& latent) const {
    const auto pose = decode_pose(latent);
    const double hi = static_cast<double>(config_.resolution - 1);
    KeypointSet out;
    for (const auto& p : canonical_keypoints_) {
        Keypoint k;
        if (auto px = locate(pose, p)) {
            k.x = px->x();
            k.y = px->y();
            k.visible = k.x >= 0.0 && k.x <= hi && k.y >= 0.0 && k.y <= hi;
        } else {
            k.x = k.y = -1.0;
            k.visible = false;
        }
        out.points.push_back(k);
    }
    std::vector<int> identity(canonical_keypoints_.size());
    for (size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<int>(i);
    out.flip_permutation = identity;
    return out;
}

} // namespace gangeal
