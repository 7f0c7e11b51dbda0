#include <doctest.h>

#include "gangeal/binary.hpp"
#include "gangeal/datapipe.hpp"
#include "gangeal/image_io.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <random>

using namespace gangeal;
using namespace gangeal::testing;

namespace {

Model fresh_model() { return create_model(tiny_config()); }

Eigen::Matrix3d translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return m;
}

torch::Tensor to_tensor(const Eigen::Matrix3d& m) {
    auto t = torch::empty({3, 3}, torch::kFloat64);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t[i][j] = m(i, j);
    return t;
}

} // namespace

TEST_CASE("center crop keeps the middle square") {
    auto x = torch::arange(2 * 6).reshape({1, 1, 2, 6}).to(torch::kFloat32);
    auto c = center_crop_resize(x, 2);
    CHECK(torch::equal(c, x.slice(3, 2, 4)));
    auto big = rand_image(1, 40, 1);
    auto r = center_crop_resize(big, 20);
    CHECK(r.sizes() == torch::IntArrayRef({1, 3, 20, 20}));
    CHECK(r.abs().max().item<double>() <= 1.0);
    CHECK_THROWS(center_crop_resize(big[0], 20));
}

TEST_CASE("image directories load in filename order") {
    TempDir dir("images");
    write_image(dir / "b.png", rand_image(1, 40, 2));
    write_image(dir / "a.png", rand_image(1, 32, 3));
    write_file(dir / "notes.txt", "ignored");
    auto imgs = load_image_dir(dir.path(), 32);
    REQUIRE(imgs.size() == 2);
    CHECK(imgs[0].id == "a");
    CHECK(imgs[1].id == "b");
    CHECK(imgs[1].image.sizes() == torch::IntArrayRef({1, 3, 32, 32}));
    auto mirrored = mirror_augment(imgs);
    REQUIRE(mirrored.size() == 4);
    CHECK(mirrored[2].id == "a#mirror");
    CHECK(torch::equal(mirrored[0].image, imgs[0].image));
    CHECK(torch::equal(mirrored[2].image, imgs[0].image.flip({3})));
    CHECK_THROWS(load_image_dir(dir / "missing", 32));
}

TEST_CASE("a fresh network scores every image as perfectly smooth") {
    auto m = fresh_model();
    for (uint64_t s = 0; s < 5; ++s) CHECK(smoothness_score(m, rand_image(1, 32, s)).score == 0.0);
}

TEST_CASE("smoothness scores are deterministic") {
    auto m = fresh_model();
    perturb_network(*m.network, 4, 0.1);
    auto x = rand_image(1, 32, 5);
    auto a = smoothness_score(m, x, "a"), b = smoothness_score(m, x.clone(), "b");
    CHECK(a.score > 0.0);
    CHECK(a.score == b.score);
    CHECK(a.id == "a");
}

TEST_CASE("kept counts round up") {
    CHECK(kept_count(10, 1.0) == 10);
    CHECK(kept_count(10, 0.25) == 3);
    CHECK(kept_count(8, 0.25) == 2);
    CHECK(kept_count(1, 0.01) == 1);
    CHECK(kept_count(0, 0.5) == 0);
    CHECK(kept_count(1657264, 0.25) == 414316);
    CHECK_THROWS(kept_count(10, 0.0));
    CHECK_THROWS(kept_count(10, 1.5));
}

TEST_CASE("filtering keeps the lowest scores") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<SmoothnessReport> reports;
    for (int i = 0; i < 10; ++i) reports.push_back({"img" + std::to_string(i), u(rng), false});
    reports[7].score = reports[2].score;  // tie resolved by id
    for (double keep : {0.1, 0.25, 0.5, 0.75, 1.0}) {
        auto r = filter_reports(reports, keep);
        auto sorted = reports;
        std::sort(sorted.begin(), sorted.end(),
                  [](const auto& a, const auto& b) { return std::tie(a.score, a.id) < std::tie(b.score, b.id); });
        const auto k = kept_count(10, keep);
        REQUIRE(r.kept_ids.size() == size_t(k));
        for (int64_t i = 0; i < k; ++i) CHECK(r.kept_ids[i] == sorted[i].id);
        for (size_t i = 0; i < reports.size(); ++i) {
            const bool in = std::find(r.kept_ids.begin(), r.kept_ids.end(), reports[i].id) != r.kept_ids.end();
            CHECK(r.kept[i] == in);
        }
    }
}

TEST_CASE("keeping everything keeps every input") {
    auto m = fresh_model();
    std::vector<ImageRecord> imgs;
    for (int i = 0; i < 4; ++i) imgs.push_back({"x" + std::to_string(i), rand_image(1, 32, 10 + i)});
    auto r = filter_dataset(m, imgs, 1.0);
    CHECK(r.kept_ids.size() == 4);
    auto csv = filter_report_csv(r);
    CHECK(csv.rfind("id,score,flip,kept,reason\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("extrapolation fraction counts out-of-range grid entries") {
    const int64_t n = 20;
    auto g = grid_from_matrix(translation(0.6, 0.0), n, n, torch::kFloat64);
    int64_t outside = 0;
    for (int64_t j = 0; j < n; ++j) outside += (-1.0 + 2.0 * j / (n - 1) + 0.6 > 1.0 + 1e-6) ? n : 0;
    CHECK(extrapolation_fraction(g) == doctest::Approx(double(outside) / (n * n)));
    CHECK(extrapolation_fraction(identity_grid(n, n)) == 0.0);
}

TEST_CASE("zoom factor is symmetric in zooming in and out") {
    CHECK(zoom_factor(to_tensor(SimilarityParams{0.3, 4.0, 0.1, 0}.matrix())) == doctest::Approx(4.0));
    CHECK(zoom_factor(to_tensor(SimilarityParams{0.0, 0.25, 0, 0}.matrix())) == doctest::Approx(4.0));
    CHECK(zoom_factor(torch::eye(3)) == 1.0);
}

TEST_CASE("alignment rejects excessive zoom and extrapolation") {
    auto x = rand_image(1, 32, 20);
    auto zoom = align_with_matrix(x, to_tensor(SimilarityParams{0, 4.0, 0, 0}.matrix()), {0.25, 2.0}, Padding::Reflection);
    CHECK_FALSE(zoom.kept);
    CHECK(zoom.reason == "zoom");
    CHECK_FALSE(zoom.aligned.defined());

    // shift by 0.6 of the half-width pushes 30% of the columns off the image
    auto shift = align_with_matrix(x, to_tensor(translation(0.6, 0.0)), {0.25, 2.0}, Padding::Reflection);
    CHECK_FALSE(shift.kept);
    CHECK(shift.reason == "extrapolation");
    const double oracle = 10.0 / 32.0;  // columns j with -1 + 2j/31 + 0.6 > 1
    CHECK(shift.extrapolation == doctest::Approx(oracle));

    auto ok = align_with_matrix(x, to_tensor(translation(0.1, 0.0)), {0.25, 2.0}, Padding::Reflection, "ok");
    CHECK(ok.kept);
    CHECK(ok.reason.empty());
    CHECK(max_abs(ok.aligned - sample(x, grid_from_matrix(translation(0.1, 0.0), 32, 32), Padding::Reflection)) < 1e-5);
    CHECK_THROWS(align_with_matrix(x, torch::eye(3), {0.0, 2.0}, Padding::Reflection));
}

TEST_CASE("identity network with generous limits passes every image through") {
    auto m = fresh_model();
    TempDir src("align_src"), dst("align_dst");
    write_image(src / "wide.png", rand_image(1, 48, 21).slice(2, 0, 40));
    write_image(src / "square.png", rand_image(1, 32, 22));
    auto imgs = load_image_dir(src.path(), 32);
    auto records = align_dataset(m, imgs, {1.0, 10.0});
    REQUIRE(records.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(records[i].kept);
        CHECK(torch::equal(records[i].aligned, imgs[i].image));
    }
    write_aligned(dst.path(), records);
    CHECK(std::filesystem::exists(dst / "square.png"));
    CHECK(read_file(dst / "manifest.csv") == "id,file\nsquare,square.png\nwide,wide.png\n");
    CHECK(align_report_csv(records) == "id,score,flip,kept,reason\nsquare,,0,1,\nwide,,0,1,\n");
}
