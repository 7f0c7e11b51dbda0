#include "gangeal/warp_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace gangeal {

namespace {

// Internal addressing mode; Extrapolate backs compose() only.
enum class AddressMode : int64_t { Reflection = 0, Border = 1, Zeros = 2, Extrapolate = 3 };

AddressMode address_mode(Padding p) {
    switch (p) {
    case Padding::Reflection: return AddressMode::Reflection;
    case Padding::Border: return AddressMode::Border;
    case Padding::Zeros: return AddressMode::Zeros;
    }
    return AddressMode::Reflection;
}

thread_local int64_t g_sample_calls = 0;

template <typename T>
struct AxisTaps {
    int64_t i0 = 0;
    int64_t i1 = 0;
    T w0 = 1;
    T w1 = 0;
    bool v0 = true;
    bool v1 = false;
    // d(source pixel coordinate) / d(normalized coordinate), padding chain included.
    T dcoord = 0;
};

template <typename T>
T reflect_coordinate(T in, int64_t size, T* grad) {
    const T span = static_cast<T>(size - 1);
    if (span <= 0) {
        *grad = 0;
        return 0;
    }
    T mult = 1;
    if (in < 0) {
        mult = -1;
        in = -in;
    }
    const T extra = std::fmod(in, span);
    const auto flips = static_cast<int64_t>(std::floor(in / span));
    if (flips % 2 == 0) {
        *grad = mult;
        return extra;
    }
    *grad = -mult;
    return span - extra;
}

template <typename T>
T clip_coordinate(T in, int64_t size, T* grad) {
    if (in <= T(0)) {
        *grad = 0;
        return 0;
    }
    const T hi = static_cast<T>(size - 1);
    if (in >= hi) {
        *grad = 0;
        return hi;
    }
    *grad = 1;
    return in;
}

template <typename T>
AxisTaps<T> axis_taps(T coord, int64_t size, AddressMode mode) {
    AxisTaps<T> taps;
    if (size == 1) {
        return taps;
    }
    const T half = static_cast<T>(size - 1) / T(2);
    T pos = (coord + T(1)) * half;
    T mult = half;
    T g = 1;
    switch (mode) {
    case AddressMode::Reflection:
        pos = reflect_coordinate(pos, size, &g);
        mult *= g;
        pos = clip_coordinate(pos, size, &g);
        mult *= g;
        break;
    case AddressMode::Border:
        pos = clip_coordinate(pos, size, &g);
        mult *= g;
        break;
    case AddressMode::Zeros:
    case AddressMode::Extrapolate:
        break;
    }
    // Coordinates that land on a pixel center up to representation error are
    // snapped so that identity grids reproduce images exactly.
    const T tol = T(4) * std::numeric_limits<T>::epsilon() * static_cast<T>(size - 1);
    const T nearest = std::nearbyint(pos);
    if (std::abs(pos - nearest) <= tol) {
        pos = nearest;
    }
    int64_t i0 = static_cast<int64_t>(std::floor(pos));
    if (mode == AddressMode::Extrapolate) {
        i0 = std::clamp<int64_t>(i0, 0, size - 2);
    }
    const T frac = pos - static_cast<T>(i0);
    taps.i0 = i0;
    taps.i1 = i0 + 1;
    taps.w0 = T(1) - frac;
    taps.w1 = frac;
    taps.v0 = i0 >= 0 && i0 < size;
    taps.v1 = i0 + 1 >= 0 && i0 + 1 < size;
    taps.dcoord = mult;
    return taps;
}

template <typename T>
void sample_forward_kernel(const T* img, const T* grid, T* out, int64_t n_batch, int64_t channels,
                           int64_t in_h, int64_t in_w, int64_t out_h, int64_t out_w,
                           AddressMode mode) {
    const int64_t in_plane = in_h * in_w;
    const int64_t out_plane = out_h * out_w;
    for (int64_t n = 0; n < n_batch; ++n) {
        const T* src = img + n * channels * in_plane;
        T* dst = out + n * channels * out_plane;
        const T* gn = grid + n * out_plane * 2;
        for (int64_t p = 0; p < out_plane; ++p) {
            const auto tx = axis_taps<T>(gn[2 * p], in_w, mode);
            const auto ty = axis_taps<T>(gn[2 * p + 1], in_h, mode);
            const bool v00 = ty.v0 && tx.v0, v01 = ty.v0 && tx.v1;
            const bool v10 = ty.v1 && tx.v0, v11 = ty.v1 && tx.v1;
            const T w00 = ty.w0 * tx.w0, w01 = ty.w0 * tx.w1;
            const T w10 = ty.w1 * tx.w0, w11 = ty.w1 * tx.w1;
            const int64_t o00 = ty.i0 * in_w + tx.i0, o01 = ty.i0 * in_w + tx.i1;
            const int64_t o10 = ty.i1 * in_w + tx.i0, o11 = ty.i1 * in_w + tx.i1;
            for (int64_t c = 0; c < channels; ++c) {
                const T* s = src + c * in_plane;
                T acc = 0;
                if (v00) acc += w00 * s[o00];
                if (v01 && w01 != T(0)) acc += w01 * s[o01];
                if (v10 && w10 != T(0)) acc += w10 * s[o10];
                if (v11 && w11 != T(0)) acc += w11 * s[o11];
                dst[c * out_plane + p] = acc;
            }
        }
    }
}

template <typename T>
void sample_backward_kernel(const T* grad_out, const T* img, const T* grid, T* grad_img, T* grad_grid,
                            int64_t n_batch, int64_t channels, int64_t in_h, int64_t in_w,
                            int64_t out_h, int64_t out_w, AddressMode mode) {
    const int64_t in_plane = in_h * in_w;
    const int64_t out_plane = out_h * out_w;
    for (int64_t n = 0; n < n_batch; ++n) {
        const T* src = img + n * channels * in_plane;
        const T* go = grad_out + n * channels * out_plane;
        const T* gn = grid + n * out_plane * 2;
        T* gi = grad_img ? grad_img + n * channels * in_plane : nullptr;
        T* gg = grad_grid ? grad_grid + n * out_plane * 2 : nullptr;
        for (int64_t p = 0; p < out_plane; ++p) {
            const auto tx = axis_taps<T>(gn[2 * p], in_w, mode);
            const auto ty = axis_taps<T>(gn[2 * p + 1], in_h, mode);
            const bool v00 = ty.v0 && tx.v0, v01 = ty.v0 && tx.v1;
            const bool v10 = ty.v1 && tx.v0, v11 = ty.v1 && tx.v1;
            const int64_t o00 = ty.i0 * in_w + tx.i0, o01 = ty.i0 * in_w + tx.i1;
            const int64_t o10 = ty.i1 * in_w + tx.i0, o11 = ty.i1 * in_w + tx.i1;
            T gx = 0, gy = 0;
            for (int64_t c = 0; c < channels; ++c) {
                const T g = go[c * out_plane + p];
                if (g == T(0)) continue;
                const T* s = src + c * in_plane;
                const T s00 = v00 ? s[o00] : T(0), s01 = v01 ? s[o01] : T(0);
                const T s10 = v10 ? s[o10] : T(0), s11 = v11 ? s[o11] : T(0);
                if (gi) {
                    T* d = gi + c * in_plane;
                    if (v00) d[o00] += g * ty.w0 * tx.w0;
                    if (v01) d[o01] += g * ty.w0 * tx.w1;
                    if (v10) d[o10] += g * ty.w1 * tx.w0;
                    if (v11) d[o11] += g * ty.w1 * tx.w1;
                }
                if (gg) {
                    gx += g * (ty.w0 * (s01 - s00) + ty.w1 * (s11 - s10));
                    gy += g * (tx.w0 * (s10 - s00) + tx.w1 * (s11 - s01));
                }
            }
            if (gg) {
                gg[2 * p] += gx * tx.dcoord;
                gg[2 * p + 1] += gy * ty.dcoord;
            }
        }
    }
}

void check_sample_shapes(const torch::Tensor& image, const torch::Tensor& grid) {
    if (image.dim() != 4) {
        throw std::invalid_argument("sample: image must be [N, C, H, W]");
    }
    if (image.size(1) == 0) {
        throw std::invalid_argument("sample: image has zero channels");
    }
    if (grid.dim() != 4 || grid.size(3) != 2) {
        throw std::invalid_argument("sample: grid must be [N, H, W, 2]");
    }
    if (image.size(0) != grid.size(0)) {
        throw std::invalid_argument("sample: batch mismatch between image and grid");
    }
    if (image.scalar_type() != grid.scalar_type()) {
        throw std::invalid_argument("sample: image and grid dtypes differ");
    }
}

torch::Tensor sample_forward_impl(const torch::Tensor& image, const torch::Tensor& grid,
                                  AddressMode mode) {
    auto img = image.contiguous();
    auto grd = grid.contiguous();
    auto out = torch::empty({img.size(0), img.size(1), grd.size(1), grd.size(2)}, img.options());
    AT_DISPATCH_FLOATING_TYPES(img.scalar_type(), "gangeal_sample_forward", [&] {
        sample_forward_kernel<scalar_t>(img.data_ptr<scalar_t>(), grd.data_ptr<scalar_t>(),
                                        out.data_ptr<scalar_t>(), img.size(0), img.size(1),
                                        img.size(2), img.size(3), grd.size(1), grd.size(2), mode);
    });
    return out;
}

class SampleFunction : public torch::autograd::Function<SampleFunction> {
public:
    static torch::Tensor forward(torch::autograd::AutogradContext* ctx, torch::Tensor image,
                                 torch::Tensor grid, int64_t mode) {
        ctx->save_for_backward({image, grid});
        ctx->saved_data["mode"] = mode;
        return sample_forward_impl(image, grid, static_cast<AddressMode>(mode));
    }

    static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::tensor_list grads) {
        const auto saved = ctx->get_saved_variables();
        const auto mode = static_cast<AddressMode>(ctx->saved_data["mode"].toInt());
        auto img = saved[0].contiguous();
        auto grd = saved[1].contiguous();
        auto go = grads[0].contiguous();
        const bool want_img = ctx->needs_input_grad(0);
        const bool want_grid = ctx->needs_input_grad(1);
        torch::Tensor gi, gg;
        if (want_img) gi = torch::zeros_like(img);
        if (want_grid) gg = torch::zeros_like(grd);
        if (want_img || want_grid) {
            AT_DISPATCH_FLOATING_TYPES(img.scalar_type(), "gangeal_sample_backward", [&] {
                sample_backward_kernel<scalar_t>(
                    go.data_ptr<scalar_t>(), img.data_ptr<scalar_t>(), grd.data_ptr<scalar_t>(),
                    want_img ? gi.data_ptr<scalar_t>() : nullptr,
                    want_grid ? gg.data_ptr<scalar_t>() : nullptr, img.size(0), img.size(1),
                    img.size(2), img.size(3), grd.size(1), grd.size(2), mode);
            });
        }
        return {gi, gg, torch::Tensor()};
    }
};

torch::Tensor sample_dispatch(torch::Tensor image, torch::Tensor grid, AddressMode mode) {
    if (image.dim() == 4 && grid.dim() == 4) {
        if (grid.size(0) == 1 && image.size(0) > 1) {
            grid = grid.expand({image.size(0), grid.size(1), grid.size(2), grid.size(3)});
        } else if (image.size(0) == 1 && grid.size(0) > 1) {
            image = image.expand({grid.size(0), image.size(1), image.size(2), image.size(3)});
        }
    }
    check_sample_shapes(image, grid);
    return SampleFunction::apply(image, grid, static_cast<int64_t>(mode));
}

void check_flow(const FlowField& flow, const char* what) {
    if (!flow.displacement.defined() || flow.displacement.dim() != 4 ||
        flow.displacement.size(3) != 2) {
        throw std::invalid_argument(std::string(what) + ": flow must be [N, H, W, 2]");
    }
}

torch::Tensor huber_elementwise(const torch::Tensor& x, double delta) {
    auto t = x.abs();
    return torch::where(t <= delta, 0.5 * t * t, delta * (t - 0.5 * delta));
}

} // namespace

Padding padding_from_string(const std::string& name) {
    if (name == "reflection") return Padding::Reflection;
    if (name == "border") return Padding::Border;
    if (name == "zeros") return Padding::Zeros;
    throw std::invalid_argument("unknown padding mode: " + name);
}

std::string to_string(Padding padding) {
    switch (padding) {
    case Padding::Reflection: return "reflection";
    case Padding::Border: return "border";
    case Padding::Zeros: return "zeros";
    }
    return "reflection";
}

SamplingGrid FlowField::to_grid() const {
    const auto id = identity_grid(height(), width(), displacement.options());
    return {displacement + id.coords};
}

FlowField FlowField::from_grid(const SamplingGrid& grid) {
    const auto id = identity_grid(grid.height(), grid.width(), grid.coords.options());
    return {grid.coords - id.coords};
}

FlowField FlowField::zeros(int64_t batch, int64_t height, int64_t width,
                           torch::TensorOptions options) {
    return {torch::zeros({batch, height, width, 2}, options)};
}

Eigen::Matrix3d SimilarityParams::matrix() const {
    Eigen::Matrix3d m;
    const double c = scale * std::cos(rotation);
    const double s = scale * std::sin(rotation);
    m << c, -s, tx, s, c, ty, 0.0, 0.0, 1.0;
    return m;
}

double pixel_to_normalized(double pixel, int64_t size) {
    if (size <= 1) return -1.0;
    return -1.0 + 2.0 * pixel / static_cast<double>(size - 1);
}

double normalized_to_pixel(double coord, int64_t size) {
    if (size <= 1) return 0.0;
    return (coord + 1.0) * 0.5 * static_cast<double>(size - 1);
}

SamplingGrid identity_grid(int64_t height, int64_t width, torch::TensorOptions options) {
    if (height < 1 || width < 1) {
        throw std::invalid_argument("identity_grid: dimensions must be positive");
    }
    auto xs = torch::empty({width}, torch::kFloat64);
    auto ys = torch::empty({height}, torch::kFloat64);
    auto xa = xs.accessor<double, 1>();
    auto ya = ys.accessor<double, 1>();
    for (int64_t j = 0; j < width; ++j) xa[j] = pixel_to_normalized(static_cast<double>(j), width);
    for (int64_t i = 0; i < height; ++i) ya[i] = pixel_to_normalized(static_cast<double>(i), height);
    auto gx = xs.view({1, width}).expand({height, width});
    auto gy = ys.view({height, 1}).expand({height, width});
    auto coords = torch::stack({gx, gy}, -1).unsqueeze(0);
    return {coords.to(options.dtype()).contiguous()};
}

SimilarityParams similarity_from_raw(const std::array<double, 4>& raw) {
    for (double v : raw) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("similarity_from_raw: non-finite input");
        }
    }
    SimilarityParams p;
    p.rotation = std::numbers::pi * std::tanh(raw[0]);
    p.scale = std::exp(raw[1]);
    p.tx = raw[2];
    p.ty = raw[3];
    return p;
}

torch::Tensor similarity_matrices(const torch::Tensor& raw) {
    if (raw.dim() != 2 || raw.size(1) != 4) {
        throw std::invalid_argument("similarity_matrices: raw must be [N, 4]");
    }
    return similarity_matrices(std::numbers::pi * torch::tanh(raw.select(1, 0)), torch::exp(raw.select(1, 1)),
                               raw.select(1, 2), raw.select(1, 3));
}

torch::Tensor similarity_matrices(const torch::Tensor& rotation, const torch::Tensor& scale,
                                  const torch::Tensor& tx, const torch::Tensor& ty) {
    auto c = scale * torch::cos(rotation);
    auto sn = scale * torch::sin(rotation);
    auto zero = torch::zeros_like(c);
    auto one = torch::ones_like(c);
    auto rows = torch::stack({c, -sn, tx, sn, c, ty, zero, zero, one}, 1);
    return rows.view({-1, 3, 3});
}

SimilarityParams similarity_from_matrix(const Eigen::Matrix3d& m) {
    SimilarityParams p;
    p.scale = std::sqrt(std::abs(m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)));
    p.rotation = std::atan2(m(1, 0), m(0, 0));
    p.tx = m(0, 2);
    p.ty = m(1, 2);
    return p;
}

SamplingGrid apply_matrix(const torch::Tensor& matrices, const SamplingGrid& grid) {
    auto m = matrices.dim() == 2 ? matrices.unsqueeze(0) : matrices;
    const int64_t n = std::max(m.size(0), grid.batch());
    auto pts = grid.coords.reshape({grid.batch(), -1, 2});
    auto lin = m.slice(1, 0, 2).slice(2, 0, 2);       // [N, 2, 2]
    auto shift = m.slice(1, 0, 2).select(2, 2);       // [N, 2]
    auto out = torch::matmul(pts, lin.transpose(1, 2)) + shift.unsqueeze(1);
    return {out.reshape({n, grid.height(), grid.width(), 2})};
}

SamplingGrid grid_from_matrix(const torch::Tensor& matrices, int64_t height, int64_t width) {
    const auto id = identity_grid(height, width, matrices.options());
    return apply_matrix(matrices, id);
}

SamplingGrid grid_from_matrix(const Eigen::Matrix3d& m, int64_t height, int64_t width,
                              torch::TensorOptions options) {
    auto t = torch::empty({1, 3, 3}, torch::kFloat64);
    auto a = t.accessor<double, 3>();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a[0][r][c] = m(r, c);
    const auto id = identity_grid(height, width, torch::kFloat64);
    auto g = apply_matrix(t, id);
    return {g.coords.to(options.dtype())};
}

torch::Tensor sample(const torch::Tensor& image, const SamplingGrid& grid, Padding padding) {
    ++g_sample_calls;
    return sample_dispatch(image, grid.coords, address_mode(padding));
}

int64_t sample_call_count() { return g_sample_calls; }

SamplingGrid compose(const SamplingGrid& outer, const SamplingGrid& inner) {
    auto as_image = inner.coords.permute({0, 3, 1, 2});
    auto out = sample_dispatch(as_image, outer.coords, AddressMode::Extrapolate);
    return {out.permute({0, 2, 3, 1}).contiguous()};
}

// --- nearest-neighbor index ------------------------------------------------------

GridIndex::GridIndex(const torch::Tensor& coords_hw2) {
    if (coords_hw2.dim() != 3 || coords_hw2.size(2) != 2) {
        throw std::invalid_argument("GridIndex: expected [H, W, 2] coordinates");
    }
    height_ = coords_hw2.size(0);
    width_ = coords_hw2.size(1);
    auto c = coords_hw2.detach().to(torch::kFloat64).contiguous();
    const double* p = c.data_ptr<double>();
    const int64_t count = height_ * width_;
    xs_.resize(count);
    ys_.resize(count);
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = max_x;
    min_x_ = std::numeric_limits<double>::infinity();
    min_y_ = min_x_;
    for (int64_t k = 0; k < count; ++k) {
        xs_[k] = p[2 * k];
        ys_[k] = p[2 * k + 1];
        if (!std::isfinite(xs_[k]) || !std::isfinite(ys_[k])) {
            throw std::invalid_argument("GridIndex: non-finite grid entry");
        }
        min_x_ = std::min(min_x_, xs_[k]);
        min_y_ = std::min(min_y_, ys_[k]);
        max_x = std::max(max_x, xs_[k]);
        max_y = std::max(max_y, ys_[k]);
    }
    const double span = std::max(max_x - min_x_, max_y - min_y_);
    const double target_cells = std::max<double>(1.0, static_cast<double>(count) / 2.0);
    cell_ = span > 0.0 ? span / std::sqrt(target_cells) : 1.0;
    cells_x_ = std::max<int64_t>(1, static_cast<int64_t>(std::floor((max_x - min_x_) / cell_)) + 1);
    cells_y_ = std::max<int64_t>(1, static_cast<int64_t>(std::floor((max_y - min_y_) / cell_)) + 1);

    std::vector<int64_t> counts(cells_x_ * cells_y_ + 1, 0);
    std::vector<int64_t> cell_of(count);
    for (int64_t k = 0; k < count; ++k) {
        const auto cx = std::min<int64_t>(cells_x_ - 1, static_cast<int64_t>((xs_[k] - min_x_) / cell_));
        const auto cy = std::min<int64_t>(cells_y_ - 1, static_cast<int64_t>((ys_[k] - min_y_) / cell_));
        cell_of[k] = cy * cells_x_ + cx;
        ++counts[cell_of[k] + 1];
    }
    for (size_t i = 1; i < counts.size(); ++i) counts[i] += counts[i - 1];
    cell_start_ = counts;
    entries_.assign(count, 0);
    std::vector<int64_t> fill(counts.begin(), counts.end() - 1);
    for (int64_t k = 0; k < count; ++k) entries_[fill[cell_of[k]]++] = k;
}

GridIndex::Hit GridIndex::nearest(double x, double y) const {
    const auto cx = std::clamp<int64_t>(static_cast<int64_t>(std::floor((x - min_x_) / cell_)), 0, cells_x_ - 1);
    const auto cy = std::clamp<int64_t>(static_cast<int64_t>(std::floor((y - min_y_) / cell_)), 0, cells_y_ - 1);
    double best_d2 = std::numeric_limits<double>::infinity();
    int64_t best = -1;
    auto visit = [&](int64_t gx, int64_t gy) {
        const int64_t cell = gy * cells_x_ + gx;
        for (int64_t e = cell_start_[cell]; e < cell_start_[cell + 1]; ++e) {
            const int64_t k = entries_[e];
            const double dx = xs_[k] - x;
            const double dy = ys_[k] - y;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best_d2 || (d2 == best_d2 && k < best)) {
                best_d2 = d2;
                best = k;
            }
        }
    };
    const int64_t max_ring = std::max(cells_x_, cells_y_);
    for (int64_t ring = 0; ring <= max_ring; ++ring) {
        if (ring > 0 && best >= 0) {
            // Everything in this ring lies outside the block of cells within ring - 1.
            const double left = min_x_ + static_cast<double>(cx - ring + 1) * cell_;
            const double right = min_x_ + static_cast<double>(cx + ring) * cell_;
            const double top = min_y_ + static_cast<double>(cy - ring + 1) * cell_;
            const double bottom = min_y_ + static_cast<double>(cy + ring) * cell_;
            if (x >= left && x <= right && y >= top && y <= bottom) {
                const double lb = std::min({x - left, right - x, y - top, bottom - y});
                if (lb * lb > best_d2) break;
            }
        }
        for (int64_t gy = cy - ring; gy <= cy + ring; ++gy) {
            if (gy < 0 || gy >= cells_y_) continue;
            const bool edge_row = gy == cy - ring || gy == cy + ring;
            if (edge_row) {
                for (int64_t gx = std::max<int64_t>(0, cx - ring); gx <= std::min(cells_x_ - 1, cx + ring); ++gx) {
                    visit(gx, gy);
                }
            } else {
                if (cx - ring >= 0) visit(cx - ring, gy);
                if (ring > 0 && cx + ring < cells_x_) visit(cx + ring, gy);
            }
        }
    }
    Hit hit;
    hit.row = best / width_;
    hit.col = best % width_;
    hit.distance = std::sqrt(best_d2);
    return hit;
}

SamplingGrid invert_grid_nn(const SamplingGrid& grid) {
    const int64_t n = grid.batch(), h = grid.height(), w = grid.width();
    auto out = torch::empty({n, h, w, 2}, torch::kFloat64);
    auto acc = out.accessor<double, 4>();
    for (int64_t b = 0; b < n; ++b) {
        GridIndex index(grid.coords[b]);
        for (int64_t i = 0; i < h; ++i) {
            const double qy = pixel_to_normalized(static_cast<double>(i), h);
            for (int64_t j = 0; j < w; ++j) {
                const double qx = pixel_to_normalized(static_cast<double>(j), w);
                const auto hit = index.nearest(qx, qy);
                acc[b][i][j][0] = pixel_to_normalized(static_cast<double>(hit.col), w);
                acc[b][i][j][1] = pixel_to_normalized(static_cast<double>(hit.row), h);
            }
        }
    }
    return {out.to(grid.coords.scalar_type())};
}

// --- flow --------------------------------------------------------------------------

FlowField convex_upsample(const FlowField& coarse, const torch::Tensor& weight_logits, int64_t factor) {
    check_flow(coarse, "convex_upsample");
    if (factor < 1) {
        throw std::invalid_argument("convex_upsample: factor must be positive");
    }
    const int64_t n = coarse.batch(), h = coarse.height(), w = coarse.width();
    if (weight_logits.dim() != 4 || weight_logits.size(0) != n ||
        weight_logits.size(1) != 9 * factor * factor || weight_logits.size(2) != h ||
        weight_logits.size(3) != w) {
        throw std::invalid_argument("convex_upsample: weights must be [N, 9*f*f, h, w]");
    }
    namespace F = torch::nn::functional;
    auto flow = coarse.displacement.permute({0, 3, 1, 2});
    auto padded = F::pad(flow, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    auto nbr = F::unfold(padded, F::UnfoldFuncOptions({3, 3})).view({n, 2, 9, 1, 1, h, w});
    auto weights = torch::softmax(weight_logits.view({n, 1, 9, factor, factor, h, w}), 2);
    auto fine = (weights * nbr).sum(2);                        // [N, 2, f, f, h, w]
    fine = fine.permute({0, 1, 4, 2, 5, 3}).reshape({n, 2, h * factor, w * factor});
    return {fine.permute({0, 2, 3, 1}).contiguous()};
}

FlowField resize_flow(const FlowField& flow, int64_t height, int64_t width) {
    check_flow(flow, "resize_flow");
    if (flow.height() == height && flow.width() == width) return flow;
    const auto id = identity_grid(height, width, flow.displacement.options());
    auto img = flow.displacement.permute({0, 3, 1, 2});
    auto out = sample_dispatch(img, id.coords, AddressMode::Border);
    return {out.permute({0, 2, 3, 1}).contiguous()};
}

torch::Tensor huber(const torch::Tensor& x, double delta) {
    if (!(delta > 0.0)) {
        throw std::invalid_argument("huber: delta must be positive");
    }
    return huber_elementwise(x, delta).mean();
}

torch::Tensor tv_loss_per_sample(const FlowField& flow) {
    check_flow(flow, "tv_loss");
    if (flow.height() < 2 || flow.width() < 2) {
        throw std::invalid_argument("tv_loss: flow must be at least 2x2");
    }
    const auto& d = flow.displacement;
    auto dx = d.slice(2, 1) - d.slice(2, 0, -1);
    auto dy = d.slice(1, 1) - d.slice(1, 0, -1);
    const int64_t n = flow.batch();
    return huber_elementwise(dx, kHuberDelta).reshape({n, -1}).mean(1) +
           huber_elementwise(dy, kHuberDelta).reshape({n, -1}).mean(1);
}

torch::Tensor tv_loss(const FlowField& flow) { return tv_loss_per_sample(flow).mean(); }

torch::Tensor identity_reg_per_sample(const FlowField& flow) {
    check_flow(flow, "identity_reg");
    return flow.displacement.pow(2).reshape({flow.batch(), -1}).mean(1);
}

torch::Tensor identity_reg(const FlowField& flow) { return identity_reg_per_sample(flow).mean(); }

torch::Tensor flip_horizontal(const torch::Tensor& image) { return image.flip({-1}); }

SamplingGrid unflip_grid(const SamplingGrid& grid) {
    auto sign = torch::tensor({-1.0, 1.0}, grid.coords.options().requires_grad(false));
    return {grid.coords * sign};
}

} // namespace gangeal
