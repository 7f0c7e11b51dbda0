#include "gangeal/correspond.hpp"

#include <cmath>
#include <stdexcept>

namespace gangeal {

namespace {

torch::Tensor as_batch1(const torch::Tensor& image) {
    auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
    if (x.dim() != 4 || x.size(0) != 1) throw std::invalid_argument("expected a single [1, C, H, W] image");
    return x;
}

torch::Tensor grid_hw2(const SamplingGrid& grid) {
    if (grid.coords.dim() != 4 || grid.batch() != 1) throw std::invalid_argument("expected a single-image grid");
    return grid.coords[0].detach().to(torch::kFloat64).contiguous();
}

} // namespace

bool decide_flip(WarpNetworkImpl& net, const torch::Tensor& image, int64_t cluster, int64_t recursion) {
    torch::NoGradGuard guard;
    auto x = as_batch1(image);
    const double plain = tv_loss(net.forward(x, cluster, recursion).flow).item<double>();
    const double mirrored = tv_loss(net.forward(flip_input(x), cluster, recursion).flow).item<double>();
    return mirrored < plain;
}

std::pair<int64_t, bool> predict_assignment(Model& model, const torch::Tensor& image, std::optional<int64_t> recursion) {
    torch::NoGradGuard guard;
    auto x = as_batch1(image);
    if (!model.needs_assignment()) return {0, false};
    if (model.classifier) {
        const auto cls = model.classifier->forward(x).argmax(1).item<int64_t>();
        return {cls / 2, cls % 2 == 1};
    }
    const int64_t rec = recursion.value_or(model.recursion());
    if (model.clusters() == 1) return {0, decide_flip(*model.network, x, 0, rec)};
    std::pair<int64_t, bool> best{0, false};
    double best_tv = std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < model.clusters(); ++k) {
        for (int f = 0; f < (model.flip_enabled() ? 2 : 1); ++f) {
            const double tv = tv_loss(model.network->forward(f ? flip_input(x) : x, k, rec).flow).item<double>();
            if (tv < best_tv) {
                best_tv = tv;
                best = {k, f == 1};
            }
        }
    }
    return best;
}

Alignment align_image(Model& model, const torch::Tensor& image, const AlignOptions& options) {
    torch::NoGradGuard guard;
    auto x = as_batch1(image);
    const int64_t rec = options.recursion.value_or(model.recursion());
    Alignment a;
    if (options.cluster && options.flip) {
        a.cluster = *options.cluster;
        a.flipped = *options.flip;
    } else {
        auto [k, f] = predict_assignment(model, x, rec);
        a.cluster = options.cluster.value_or(k);
        a.flipped = options.flip.value_or(f);
    }
    auto r = model.network->forward(a.flipped ? flip_input(x) : x, a.cluster, rec);
    a.grid = a.flipped ? unflip_grid(r.grid) : r.grid;
    a.congealed = r.warped;
    a.flow = r.flow;
    a.smoothness = tv_loss(r.flow).item<double>();
    return a;
}

KeypointSet congeal_points(const SamplingGrid& grid, const KeypointSet& pts, double max_residual_px) {
    KeypointSet out;
    out.flip_permutation = pts.flip_permutation;
    if (pts.empty()) return out;
    const auto coords = grid_hw2(grid);
    GridIndex index(coords);
    const int64_t h = grid.height(), w = grid.width();
    const double pitch = 2.0 / static_cast<double>(std::max<int64_t>(std::max(h, w) - 1, 1));
    for (const auto& p : pts.points) {
        const double x = pixel_to_normalized(p.x, w), y = pixel_to_normalized(p.y, h);
        const auto hit = index.nearest(x, y);
        out.points.push_back({static_cast<double>(hit.col), static_cast<double>(hit.row),
                              p.visible && hit.distance <= max_residual_px * pitch});
    }
    return out;
}

KeypointSet uncongeal_points(const SamplingGrid& grid, const KeypointSet& pts) {
    KeypointSet out;
    out.flip_permutation = pts.flip_permutation;
    const auto coords = grid_hw2(grid);
    const auto acc = coords.accessor<double, 3>();
    const int64_t h = grid.height(), w = grid.width();
    for (const auto& p : pts.points) {
        const double px = std::clamp(p.x, 0.0, static_cast<double>(w - 1));
        const double py = std::clamp(p.y, 0.0, static_cast<double>(h - 1));
        const int64_t j0 = std::min<int64_t>(static_cast<int64_t>(std::floor(px)), std::max<int64_t>(w - 2, 0));
        const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(py)), std::max<int64_t>(h - 2, 0));
        const int64_t j1 = std::min(j0 + 1, w - 1), i1 = std::min(i0 + 1, h - 1);
        const double fx = px - static_cast<double>(j0), fy = py - static_cast<double>(i0);
        double v[2];
        for (int c = 0; c < 2; ++c) {
            v[c] = (1 - fy) * ((1 - fx) * acc[i0][j0][c] + fx * acc[i0][j1][c]) +
                   fy * ((1 - fx) * acc[i1][j0][c] + fx * acc[i1][j1][c]);
        }
        const double ox = normalized_to_pixel(v[0], w), oy = normalized_to_pixel(v[1], h);
        const bool inside = ox >= 0 && ox <= static_cast<double>(w - 1) && oy >= 0 && oy <= static_cast<double>(h - 1);
        out.points.push_back({ox, oy, p.visible && inside});
    }
    return out;
}

KeypointSet transfer_points(const Alignment& a, const Alignment& b, const KeypointSet& pts_a) {
    auto out = uncongeal_points(b.grid, congeal_points(a.grid, pts_a));
    if (a.flipped != b.flipped) out = permute_for_flip(out);
    return out;
}

KeypointSet transfer_points(Model& model, const torch::Tensor& image_a, const torch::Tensor& image_b,
                            const KeypointSet& pts_a, const AlignOptions& options) {
    return transfer_points(align_image(model, image_a, options), align_image(model, image_b, options), pts_a);
}

std::pair<SamplingGrid, torch::Tensor> inverse_with_residual(const SamplingGrid& grid) {
    const auto coords = grid_hw2(grid);
    GridIndex index(coords);
    const int64_t h = grid.height(), w = grid.width();
    const double pitch = 2.0 / static_cast<double>(std::max<int64_t>(std::max(h, w) - 1, 1));
    auto inv = torch::empty({1, h, w, 2}, torch::kFloat64);
    auto residual = torch::empty({h, w}, torch::kFloat64);
    auto ia = inv.accessor<double, 4>();
    auto ra = residual.accessor<double, 2>();
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            const auto hit = index.nearest(pixel_to_normalized(static_cast<double>(j), w),
                                           pixel_to_normalized(static_cast<double>(i), h));
            ia[0][i][j][0] = pixel_to_normalized(static_cast<double>(hit.col), w);
            ia[0][i][j][1] = pixel_to_normalized(static_cast<double>(hit.row), h);
            ra[i][j] = hit.distance / pitch;
        }
    }
    return {SamplingGrid{inv.to(grid.coords.scalar_type())}, residual};
}

torch::Tensor propagate_overlay(const Alignment& alignment, const torch::Tensor& overlay, const torch::Tensor& image) {
    torch::NoGradGuard guard;
    auto x = as_batch1(image);
    auto o = as_batch1(overlay);
    if (o.size(1) != 4) throw std::invalid_argument("propagate_overlay: overlay must have four channels");
    if (o.size(2) != alignment.grid.height() || o.size(3) != alignment.grid.width()) {
        throw std::invalid_argument("propagate_overlay: overlay must match the congealed frame");
    }
    if (x.size(2) != alignment.grid.height() || x.size(3) != alignment.grid.width()) {
        throw std::invalid_argument("propagate_overlay: image must match the alignment");
    }
    auto [inv, residual] = inverse_with_residual(alignment.grid);
    auto warped = sample(o.to(x.scalar_type()), SamplingGrid{inv.coords.to(x.scalar_type())}, Padding::Border);
    auto alpha = (warped.slice(1, 3, 4) + 1) * 0.5;
    alpha = alpha * (residual <= 2.0).to(alpha.scalar_type()).unsqueeze(0).unsqueeze(0);
    auto rgb = warped.slice(1, 0, 3);
    auto out = x * (1 - alpha) + rgb * alpha;
    // keep untouched pixels bit-identical
    return torch::where(alpha > 0, out, x);
}

torch::Tensor propagate_overlay(Model& model, const torch::Tensor& overlay, const torch::Tensor& image,
                                const AlignOptions& options) {
    return propagate_overlay(align_image(model, image, options), overlay, image);
}

VideoResult track_video(Model& model, const std::vector<torch::Tensor>& frames, const torch::Tensor& overlay,
                        const AlignOptions& options) {
    VideoResult out;
    if (frames.empty()) return out;
    AlignOptions held = options;
    if (!held.cluster || !held.flip) {
        auto [k, f] = predict_assignment(model, frames.front(), options.recursion);
        held.cluster = options.cluster.value_or(k);
        held.flip = options.flip.value_or(f);
    }
    for (const auto& frame : frames) {
        if (frame.sizes() != frames.front().sizes()) throw std::invalid_argument("track_video: frames differ in size");
        auto a = align_image(model, frame, held);
        out.frames.push_back(propagate_overlay(a, overlay, frame));
        out.grids.push_back(a.grid);
    }
    return out;
}

} // namespace gangeal
