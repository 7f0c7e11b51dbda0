#include "gangeal/datapipe.hpp"

#include "gangeal/binary.hpp"
#include "gangeal/correspond.hpp"
#include "gangeal/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gangeal {

torch::Tensor center_crop_resize(const torch::Tensor& image, int64_t size) {
    if (image.dim() != 4) throw std::invalid_argument("center_crop_resize: expected [N, C, H, W]");
    if (size < 1) throw std::invalid_argument("center_crop_resize: size must be positive");
    const int64_t h = image.size(2), w = image.size(3), side = std::min(h, w);
    auto crop = image.slice(2, (h - side) / 2, (h - side) / 2 + side).slice(3, (w - side) / 2, (w - side) / 2 + side);
    if (side == size) return crop.contiguous();
    namespace F = torch::nn::functional;
    auto out = F::interpolate(crop, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{size, size})
                                        .mode(torch::kBilinear)
                                        .align_corners(false)
                                        .antialias(side > size));
    return out.clamp(-1, 1);
}

std::vector<ImageRecord> load_image_dir(const std::filesystem::path& dir, int64_t size) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<ImageRecord> out;
    for (const auto& f : files) out.push_back({f.stem().string(), center_crop_resize(read_image(f), size)});
    return out;
}

std::vector<ImageRecord> mirror_augment(const std::vector<ImageRecord>& images) {
    auto out = images;
    for (const auto& r : images) out.push_back({r.id + "#mirror", flip_horizontal(r.image)});
    return out;
}

SmoothnessReport smoothness_score(Model& model, const torch::Tensor& image, const std::string& id) {
    const auto a = align_image(model, image);
    return {id, a.smoothness, a.flipped};
}

int64_t kept_count(int64_t n, double keep_fraction) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("keep fraction must lie in (0, 1]");
    const double exact = keep_fraction * static_cast<double>(n);
    const double rounded = std::round(exact);
    // products like 0.25 * n land on integers up to rounding noise
    const int64_t k = std::abs(exact - rounded) < 1e-9 * std::max(1.0, exact) ? static_cast<int64_t>(rounded)
                                                                             : static_cast<int64_t>(std::ceil(exact));
    return std::min(k, n);
}

FilterResult filter_reports(const std::vector<SmoothnessReport>& reports, double keep_fraction) {
    FilterResult r;
    r.reports = reports;
    r.kept.assign(reports.size(), false);
    const int64_t keep = kept_count(static_cast<int64_t>(reports.size()), keep_fraction);
    std::vector<size_t> order(reports.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (reports[a].score != reports[b].score) return reports[a].score < reports[b].score;
        return reports[a].id < reports[b].id;
    });
    for (int64_t i = 0; i < keep; ++i) {
        r.kept[order[i]] = true;
        r.kept_ids.push_back(reports[order[i]].id);
    }
    return r;
}

FilterResult filter_dataset(Model& model, const std::vector<ImageRecord>& images, double keep_fraction) {
    kept_count(static_cast<int64_t>(images.size()), keep_fraction);
    std::vector<SmoothnessReport> reports;
    for (const auto& img : images) reports.push_back(smoothness_score(model, img.image, img.id));
    return filter_reports(reports, keep_fraction);
}

double extrapolation_fraction(const SamplingGrid& grid) {
    constexpr double kSlack = 1e-6;
    auto c = grid.coords.detach().abs();
    auto outside = (c.select(-1, 0) > 1.0 + kSlack) | (c.select(-1, 1) > 1.0 + kSlack);
    return outside.to(torch::kFloat64).mean().item<double>();
}

double zoom_factor(const torch::Tensor& matrix) {
    auto m = matrix.detach().to(torch::kFloat64).reshape({3, 3});
    const double det = m[0][0].item<double>() * m[1][1].item<double>() - m[0][1].item<double>() * m[1][0].item<double>();
    const double s = std::sqrt(std::abs(det));
    if (s == 0.0) return std::numeric_limits<double>::infinity();
    return std::max(s, 1.0 / s);
}

AlignRecord align_with_matrix(const torch::Tensor& image, const torch::Tensor& matrix, const AlignLimits& limits,
                              Padding padding, const std::string& id) {
    if (!(limits.extrapolation > 0.0) || !(limits.zoom > 0.0)) throw std::invalid_argument("align limits must be positive");
    AlignRecord r;
    r.id = id;
    r.matrix = matrix.detach().reshape({3, 3});
    const auto grid = grid_from_matrix(r.matrix.unsqueeze(0).to(image.scalar_type()), image.size(2), image.size(3));
    r.zoom = zoom_factor(r.matrix);
    r.extrapolation = extrapolation_fraction(grid);
    if (r.zoom > limits.zoom) {
        r.reason = "zoom";
    } else if (r.extrapolation > limits.extrapolation) {
        r.reason = "extrapolation";
    } else {
        r.kept = true;
        r.aligned = sample(image, grid, padding);
    }
    return r;
}

std::vector<AlignRecord> align_dataset(Model& model, const std::vector<ImageRecord>& images, const AlignLimits& limits,
                                       std::optional<int64_t> recursion) {
    torch::NoGradGuard guard;
    const int64_t rec = recursion.value_or(model.recursion());
    std::vector<AlignRecord> out;
    for (const auto& img : images) {
        auto [k, flipped] = predict_assignment(model, img.image, rec);
        auto input = flipped ? flip_input(img.image) : img.image;
        auto m = model.network->recursive_align(input, rec, k).matrices[0];
        auto r = align_with_matrix(input, m, limits, model.config.network.padding, img.id);
        r.flip_used = flipped;
        out.push_back(std::move(r));
    }
    return out;
}

std::string filter_report_csv(const FilterResult& result) {
    std::ostringstream ss;
    ss.precision(10);
    ss << "id,score,flip,kept,reason\n";
    for (size_t i = 0; i < result.reports.size(); ++i) {
        const auto& r = result.reports[i];
        ss << r.id << ',' << r.score << ',' << (r.flip_used ? 1 : 0) << ',' << (result.kept[i] ? 1 : 0) << ','
           << (result.kept[i] ? "" : "filtered") << '\n';
    }
    return ss.str();
}

std::string align_report_csv(const std::vector<AlignRecord>& records) {
    std::ostringstream ss;
    ss.precision(10);
    ss << "id,score,flip,kept,reason\n";
    for (const auto& r : records) {
        ss << r.id << ",," << (r.flip_used ? 1 : 0) << ',' << (r.kept ? 1 : 0) << ',' << r.reason << '\n';
    }
    return ss.str();
}

void write_aligned(const std::filesystem::path& dir, const std::vector<AlignRecord>& records) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "id,file\n";
    for (const auto& r : records) {
        if (!r.kept) continue;
        const auto file = r.id + ".png";
        write_image(dir / file, r.aligned);
        manifest << r.id << ',' << file << '\n';
    }
    write_file(dir / "manifest.csv", manifest.str());
}

} // namespace gangeal
