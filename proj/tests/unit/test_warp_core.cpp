#include <doctest.h>

#include "gangeal/grid_io.hpp"
#include "gangeal/warp_core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

using namespace gangeal;

namespace {

torch::Tensor rand_image(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed,
                         torch::Dtype dtype = torch::kFloat64) {
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::rand({n, c, h, w}, gen, dtype) * 2 - 1;
}

// Plain bilinear lookup with the source pixel coordinate clamped to the image.
double bilinear_oracle(const torch::Tensor& img_chw, int64_t c, double x, double y) {
    const int64_t h = img_chw.size(1), w = img_chw.size(2);
    const double px = std::clamp((x + 1) / 2 * (w - 1), 0.0, double(w - 1));
    const double py = std::clamp((y + 1) / 2 * (h - 1), 0.0, double(h - 1));
    const int64_t x0 = std::min<int64_t>(std::floor(px), w - 1), y0 = std::min<int64_t>(std::floor(py), h - 1);
    const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1), y1 = std::min<int64_t>(y0 + 1, h - 1);
    const double fx = px - x0, fy = py - y0;
    auto a = img_chw.accessor<double, 3>();
    return (1 - fy) * ((1 - fx) * a[c][y0][x0] + fx * a[c][y0][x1]) +
           fy * ((1 - fx) * a[c][y1][x0] + fx * a[c][y1][x1]);
}

int64_t brute_nearest(const torch::Tensor& g_hw2, double x, double y) {
    auto a = g_hw2.to(torch::kFloat64).contiguous();
    const double* p = a.data_ptr<double>();
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < a.size(0) * a.size(1); ++k) {
        const double dx = p[2 * k] - x, dy = p[2 * k + 1] - y;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

} // namespace

TEST_CASE("identity grid values") {
    auto g = identity_grid(2, 2).coords[0];
    CHECK(g[0][0][0].item<float>() == -1.f);
    CHECK(g[0][0][1].item<float>() == -1.f);
    CHECK(g[0][1][0].item<float>() == 1.f);
    CHECK(g[1][0][1].item<float>() == 1.f);
    CHECK(g[1][1][0].item<float>() == 1.f);

    auto one = identity_grid(1, 1).coords;
    CHECK(one[0][0][0][0].item<float>() == -1.f);
    CHECK(one[0][0][0][1].item<float>() == -1.f);

    auto three = identity_grid(3, 3).coords;
    CHECK(three[0][1][1][0].item<float>() == 0.f);
    CHECK(three[0][1][1][1].item<float>() == 0.f);

    auto g57 = identity_grid(5, 7, torch::kFloat64).coords[0];
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 7; ++j) {
            CHECK(g57[i][j][0].item<double>() == doctest::Approx(-1 + 2.0 * j / 6).epsilon(1e-15));
            CHECK(g57[i][j][1].item<double>() == doctest::Approx(-1 + 2.0 * i / 4).epsilon(1e-15));
        }

    CHECK_THROWS_AS(identity_grid(0, 3), std::invalid_argument);
    CHECK_THROWS_AS(identity_grid(3, -1), std::invalid_argument);
}

TEST_CASE("similarity from raw outputs") {
    auto id = similarity_from_raw({0, 0, 0, 0});
    CHECK(id.matrix().isApprox(Eigen::Matrix3d::Identity(), 0.0));

    auto s2 = similarity_from_raw({0, std::log(2.0), 0, 0});
    CHECK(s2.scale == doctest::Approx(2.0));
    CHECK(s2.matrix()(0, 0) == doctest::Approx(2.0));
    CHECK(s2.matrix()(1, 1) == doctest::Approx(2.0));
    CHECK(s2.matrix()(0, 1) == doctest::Approx(0.0));

    auto p = similarity_from_raw({0.5, 0.0, 0.1, -0.2});
    const double r = std::numbers::pi * std::tanh(0.5);
    Eigen::Matrix3d rot;
    rot << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
    Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
    shift(0, 2) = 0.1;
    shift(1, 2) = -0.2;
    CHECK((p.matrix() - shift * rot).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(similarity_from_raw({NAN, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(similarity_from_raw({0, INFINITY, 0, 0}), std::invalid_argument);

    auto raw = torch::tensor({{0.5, 0.0, 0.1, -0.2}, {-0.3, 0.4, 0.0, 0.7}}, torch::kFloat64);
    auto ms = similarity_matrices(raw);
    for (int n = 0; n < 2; ++n) {
        std::array<double, 4> o{};
        for (int k = 0; k < 4; ++k) o[k] = raw[n][k].item<double>();
        auto ref = similarity_from_raw(o).matrix();
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) CHECK(ms[n][a][b].item<double>() == doctest::Approx(ref(a, b)).epsilon(1e-12));
    }

    auto back = similarity_from_matrix(s2.matrix());
    CHECK(back.scale == doctest::Approx(2.0));
    CHECK(back.rotation == doctest::Approx(0.0));
}

TEST_CASE("grid from matrix") {
    auto g = grid_from_matrix(Eigen::Matrix3d::Identity(), 6, 5);
    CHECK(torch::equal(g.coords, identity_grid(6, 5).coords));

    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 2) = 0.5;
    auto gt = grid_from_matrix(t, 4, 4, torch::kFloat64);
    auto diff = gt.coords - identity_grid(4, 4, torch::kFloat64).coords;
    CHECK(max_abs(diff.select(3, 0) - 0.5) < 1e-15);
    CHECK(max_abs(diff.select(3, 1)) < 1e-15);

    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    Eigen::Matrix3d m;
    m << u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), 0, 0, 1;
    auto gm = grid_from_matrix(m, 4, 4, torch::kFloat64).coords[0];
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            Eigen::Vector3d v(-1 + 2.0 * j / 3, -1 + 2.0 * i / 3, 1.0);
            Eigen::Vector3d r = m * v;
            CHECK(gm[i][j][0].item<double>() == doctest::Approx(r(0)).epsilon(1e-12));
            CHECK(gm[i][j][1].item<double>() == doctest::Approx(r(1)).epsilon(1e-12));
        }
}

TEST_CASE("sample reproduces images under the identity grid") {
    for (auto pad : {Padding::Reflection, Padding::Border, Padding::Zeros}) {
        for (auto [h, w] : {std::pair{7, 5}, std::pair{64, 64}, std::pair{1, 9}, std::pair{33, 17}}) {
            auto img = rand_image(2, 3, h, w, 11, torch::kFloat32);
            auto out = sample(img, identity_grid(h, w));
            auto out_pad = sample(img, identity_grid(h, w), pad);
            CHECK(torch::equal(out, img));
            CHECK(torch::equal(out_pad, img));
        }
    }
}

TEST_CASE("sample at the center of a 2x2 image averages the pixels") {
    auto img = torch::tensor({1.0, 2.0, 3.0, 5.0}, torch::kFloat64).view({1, 1, 2, 2});
    auto grid = torch::zeros({1, 1, 1, 2}, torch::kFloat64);
    auto out = sample(img, {grid});
    CHECK(out.item<double>() == doctest::Approx(2.75));
}

TEST_CASE("sample matches a scalar bilinear oracle") {
    auto img = rand_image(1, 2, 5, 5, 4);
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(5);
    auto grid = torch::rand({1, 6, 7, 2}, gen, torch::kFloat64) * 2 - 1;
    auto out = sample(img, {grid});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 7; ++j) {
                const double ref = bilinear_oracle(img[0], c, grid[0][i][j][0].item<double>(),
                                                   grid[0][i][j][1].item<double>());
                CHECK(std::abs(out[0][c][i][j].item<double>() - ref) < 1e-6);
            }
}

TEST_CASE("sample agrees with torch grid_sampler for every padding mode") {
    auto img = rand_image(2, 3, 9, 6, 8);
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(9);
    auto grid = torch::rand({2, 5, 4, 2}, gen, torch::kFloat64) * 5 - 2.5;
    const std::pair<Padding, int64_t> modes[] = {
        {Padding::Zeros, 0}, {Padding::Border, 1}, {Padding::Reflection, 2}};
    for (auto [pad, code] : modes) {
        auto ours = sample(img, {grid}, pad);
        auto ref = torch::grid_sampler(img, grid, 0, code, true);
        CHECK(max_abs(ours - ref) < 1e-12);
    }
}

TEST_CASE("sample gradients match central differences") {
    // Coordinates are kept away from pixel-center breakpoints where bilinear
    // interpolation is not differentiable.
    std::mt19937 rng(21);
    const int64_t h = 6, w = 7;
    std::uniform_int_distribution<int> cell_x(0, w - 2), cell_y(0, h - 2);
    std::uniform_real_distribution<double> frac(0.05, 0.95);
    auto grid = torch::empty({1, 4, 5, 2}, torch::kFloat64);
    auto ga = grid.accessor<double, 4>();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            ga[0][i][j][0] = -1 + 2 * (cell_x(rng) + frac(rng)) / (w - 1);
            ga[0][i][j][1] = -1 + 2 * (cell_y(rng) + frac(rng)) / (h - 1);
        }
    for (auto pad : {Padding::Reflection, Padding::Border, Padding::Zeros}) {
        auto img = rand_image(1, 2, h, w, 22).requires_grad_(true);
        auto g = grid.clone().requires_grad_(true);
        auto weights = rand_image(1, 2, 4, 5, 23);
        auto loss = (sample(img, {g}, pad) * weights).sum();
        loss.backward();
        auto f = [&](const torch::Tensor& im, const torch::Tensor& gr) {
            return (sample(im, {gr}, pad) * weights).sum().item<double>();
        };
        const double eps = 1e-3 * 2.0 / (w - 1);
        int checked = 0;
        for (int64_t k = 0; k < g.numel(); ++k) {
            auto gp = grid.clone(), gm = grid.clone();
            gp.view(-1)[k] += eps;
            gm.view(-1)[k] -= eps;
            const double fd = (f(img.detach(), gp) - f(img.detach(), gm)) / (2 * eps);
            const double an = g.grad().view(-1)[k].item<double>();
            CHECK(std::abs(fd - an) <= 1e-3 * std::max(std::abs(fd), 1e-6) + 1e-9);
            ++checked;
        }
        for (int64_t k = 0; k < img.numel(); ++k) {
            auto ip = img.detach().clone(), im = img.detach().clone();
            ip.view(-1)[k] += 1e-3;
            im.view(-1)[k] -= 1e-3;
            const double fd = (f(ip, grid) - f(im, grid)) / 2e-3;
            const double an = img.grad().view(-1)[k].item<double>();
            CHECK(std::abs(fd - an) <= 1e-3 * std::max(std::abs(fd), 1e-6) + 1e-9);
        }
        CHECK(checked == 40);
    }
}

TEST_CASE("sample rejects bad inputs and counts calls") {
    auto img = torch::zeros({1, 0, 4, 4});
    CHECK_THROWS_AS(sample(img, identity_grid(4, 4)), std::invalid_argument);
    CHECK_THROWS_AS(sample(torch::zeros({1, 1, 4}), identity_grid(4, 4)), std::invalid_argument);
    const auto before = sample_call_count();
    sample(torch::zeros({1, 1, 4, 4}), identity_grid(4, 4));
    compose(identity_grid(4, 4), identity_grid(4, 4));
    CHECK(sample_call_count() == before + 1);
}

TEST_CASE("compose identities and translations") {
    auto g = grid_from_matrix(similarity_from_raw({0.2, 0.1, 0.05, -0.1}).matrix(), 9, 9, torch::kFloat64);
    auto id = identity_grid(9, 9, torch::kFloat64);
    CHECK(max_abs(compose(id, g).coords - g.coords) < 1e-12);
    CHECK(max_abs(compose(g, id).coords - g.coords) < 1e-12);

    Eigen::Matrix3d ta = Eigen::Matrix3d::Identity(), tb = Eigen::Matrix3d::Identity();
    ta(0, 2) = 0.25;
    ta(1, 2) = -0.125;
    tb(0, 2) = -0.5;
    tb(1, 2) = 0.375;
    auto a = grid_from_matrix(ta, 17, 17, torch::kFloat64);
    auto b = grid_from_matrix(tb, 17, 17, torch::kFloat64);
    auto ab = compose(a, b);
    auto expected = grid_from_matrix(tb * ta, 17, 17, torch::kFloat64);
    CHECK(max_abs(ab.coords - expected.coords) < 1e-12);

    // sampling with the composition equals sampling with b, then with a.
    auto img = rand_image(1, 3, 17, 17, 31);
    auto smooth = torch::nn::functional::avg_pool2d(
        torch::nn::functional::pad(img, torch::nn::functional::PadFuncOptions({2, 2, 2, 2}).mode(torch::kReflect)),
        torch::nn::functional::AvgPool2dFuncOptions(5).stride(1));
    auto one_pass = sample(smooth, ab, Padding::Border);
    auto two_pass = sample(sample(smooth, b, Padding::Border), a, Padding::Border);
    auto inner = torch::indexing::Slice(4, 13);
    CHECK(max_abs(one_pass.index({0, torch::indexing::Slice(), inner, inner}) -
                  two_pass.index({0, torch::indexing::Slice(), inner, inner})) < 1e-12);
}

TEST_CASE("compose is associative on smooth grids") {
    const int64_t n = 128;
    auto mk = [&](std::array<double, 4> raw) {
        auto g = grid_from_matrix(similarity_from_raw(raw).matrix(), n, n, torch::kFloat64);
        auto y = g.coords.select(3, 1);
        auto x = g.coords.select(3, 0);
        auto wobble = torch::stack({0.03 * torch::sin(3 * y), 0.02 * torch::cos(2 * x)}, -1);
        return SamplingGrid{g.coords + wobble};
    };
    auto a = mk({0.02, 0.05, 0.05, 0.0});
    auto b = mk({-0.03, -0.05, 0.0, 0.05});
    auto c = mk({0.02, 0.0, -0.05, 0.05});
    auto left = compose(a, compose(b, c));
    auto right = compose(compose(a, b), c);
    auto img = torch::sin(3 * identity_grid(n, n, torch::kFloat64).coords.select(3, 0)).unsqueeze(1);
    // Lookups near the frame fall outside the inner grids and extrapolate differently.
    auto inner = torch::indexing::Slice(16, n - 16);
    auto diff = (sample(img, left) - sample(img, right)).index({0, 0, inner, inner});
    CHECK(max_abs(diff) < 1e-4);
}

TEST_CASE("nearest-neighbor inversion") {
    auto id = identity_grid(12, 12);
    CHECK(torch::equal(invert_grid_nn(id).coords, id.coords));

    const int64_t n = 16;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 2) = 2.0 / (n - 1);
    auto g = grid_from_matrix(t, n, n, torch::kFloat64);
    auto inv = invert_grid_nn(g).coords[0];
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            const double qx = pixel_to_normalized(j, n), qy = pixel_to_normalized(i, n);
            const int64_t k = brute_nearest(g.coords[0], qx, qy);
            CHECK(inv[i][j][0].item<double>() == pixel_to_normalized(k % n, n));
            CHECK(inv[i][j][1].item<double>() == pixel_to_normalized(k / n, n));
            if (j >= 1) {
                CHECK(std::abs(inv[i][j][0].item<double>() - (qx - 2.0 / (n - 1))) < 1e-12);
            }
        }

    Eigen::Matrix3d rot = similarity_from_raw({std::atanh(0.5), 0, 0, 0}).matrix();
    auto gr = grid_from_matrix(rot, n, n, torch::kFloat64);
    auto invr = invert_grid_nn(gr).coords[0];
    Eigen::Matrix3d back = rot.inverse();
    auto expected = grid_from_matrix(back, n, n, torch::kFloat64).coords[0];
    for (int64_t i = 1; i < n - 1; ++i)
        for (int64_t j = 1; j < n - 1; ++j) {
            const double qx = pixel_to_normalized(j, n), qy = pixel_to_normalized(i, n);
            const int64_t k = brute_nearest(gr.coords[0], qx, qy);
            CHECK(invr[i][j][0].item<double>() == pixel_to_normalized(k % n, n));
            CHECK(invr[i][j][1].item<double>() == pixel_to_normalized(k / n, n));
            CHECK(std::abs(invr[i][j][0].item<double>() - expected[i][j][0].item<double>()) < 1e-9);
            CHECK(std::abs(invr[i][j][1].item<double>() - expected[i][j][1].item<double>()) < 1e-9);
        }
}

TEST_CASE("grid index agrees with exhaustive search including ties") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-1.8, 1.8);
    for (int trial = 0; trial < 5; ++trial) {
        auto gen = torch::make_generator<at::CPUGeneratorImpl>(100 + trial);
        auto g = torch::rand({9, 11, 2}, gen, torch::kFloat64) * 3 - 1.5;
        // Quantized copies create exact duplicates and equal distances.
        if (trial % 2 == 1) g = torch::round(g * 4) / 4;
        GridIndex index(g);
        for (int q = 0; q < 300; ++q) {
            double x = u(rng), y = u(rng);
            if (trial % 2 == 1) {
                x = std::round(x * 8) / 8;
                y = std::round(y * 8) / 8;
            }
            const auto hit = index.nearest(x, y);
            CHECK(hit.row * 11 + hit.col == brute_nearest(g, x, y));
        }
    }
    auto constant = torch::full({4, 4, 2}, 0.3, torch::kFloat64);
    auto inv = invert_grid_nn({constant.unsqueeze(0)});
    CHECK(max_abs(inv.coords.select(3, 0) + 1) == 0.0);
    CHECK(max_abs(inv.coords.select(3, 1) + 1) == 0.0);
}

TEST_CASE("inversion round trip stays within two pixel pitches") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> r(-0.25, 0.25), s(std::log(0.5), std::log(2.0)), t(-0.3, 0.3);
    const int64_t n = 32;
    for (int trial = 0; trial < 10; ++trial) {
        auto m = similarity_from_raw({r(rng), s(rng), t(rng), t(rng)}).matrix();
        auto g = grid_from_matrix(m, n, n, torch::kFloat64);
        auto rt = compose(invert_grid_nn(g), g).coords[0];
        auto id = identity_grid(n, n, torch::kFloat64).coords[0];
        // Only pixels whose preimage lies on the warped support can be recovered.
        auto inv_m = m.inverse();
        double worst = 0.0;
        for (int64_t i = 1; i < n - 1; ++i)
            for (int64_t j = 1; j < n - 1; ++j) {
                Eigen::Vector3d p(pixel_to_normalized(j, n), pixel_to_normalized(i, n), 1.0);
                Eigen::Vector3d pre = inv_m * p;
                if (std::abs(pre(0)) > 0.9 || std::abs(pre(1)) > 0.9) continue;
                const double dx = (rt[i][j][0].item<double>() - id[i][j][0].item<double>()) * (n - 1) / 2;
                const double dy = (rt[i][j][1].item<double>() - id[i][j][1].item<double>()) * (n - 1) / 2;
                worst = std::max(worst, std::hypot(dx, dy));
            }
        CHECK(worst <= 2.0);
    }
}

TEST_CASE("convex upsampling") {
    const int64_t h = 4, w = 5, f = 8;
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(12);
    auto logits = torch::randn({2, 9 * f * f, h, w}, gen, torch::kFloat64) * 3;

    auto constant = FlowField{torch::full({2, h, w, 2}, 0.37, torch::kFloat64)};
    auto up = convex_upsample(constant, logits, f);
    CHECK(up.height() == h * f);
    CHECK(up.width() == w * f);
    CHECK(max_abs(up.displacement - 0.37) < 1e-15);

    auto coarse = FlowField{torch::randn({2, h, w, 2}, gen, torch::kFloat64)};
    auto onehot = torch::full({2, 9, f, f, h, w}, -1e4, torch::kFloat64);
    onehot.select(1, 4).fill_(0.0);
    auto nn = convex_upsample(coarse, onehot.view({2, 9 * f * f, h, w}), f).displacement;
    auto ca = coarse.displacement.accessor<double, 4>();
    auto na = nn.accessor<double, 4>();
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t y = 0; y < h * f; ++y)
            for (int64_t x = 0; x < w * f; ++x)
                for (int c = 0; c < 2; ++c) CHECK(na[n][y][x][c] == doctest::Approx(ca[n][y / f][x / f][c]).epsilon(1e-12));

    auto uniform = convex_upsample(coarse, torch::zeros({2, 9 * f * f, h, w}, torch::kFloat64), f).displacement;
    auto ua = uniform.accessor<double, 4>();
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int c = 0; c < 2; ++c) {
                    double box = 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int64_t yy = std::clamp<int64_t>(y + dy, 0, h - 1);
                            const int64_t xx = std::clamp<int64_t>(x + dx, 0, w - 1);
                            box += ca[n][yy][xx][c];
                        }
                    box /= 9;
                    for (int a = 0; a < f; ++a)
                        for (int b = 0; b < f; ++b) CHECK(std::abs(ua[n][y * f + a][x * f + b][c] - box) < 1e-12);
                }

    // Channel layout: k * f^2 + a * f + b selects neighbor k for fine offset (a, b).
    auto pick = torch::full({1, 9, f, f, h, w}, -1e4, torch::kFloat64);
    pick.select(1, 5).fill_(0.0);  // right neighbor everywhere
    auto right = convex_upsample(FlowField{coarse.displacement.slice(0, 0, 1)}, pick.view({1, 9 * f * f, h, w}), f);
    CHECK(right.displacement[0][0][0][0].item<double>() == doctest::Approx(ca[0][0][1][0]).epsilon(1e-12));

    auto rnd = convex_upsample(coarse, logits, f).displacement;
    auto ra = rnd.accessor<double, 4>();
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t y = 0; y < h * f; ++y)
            for (int64_t x = 0; x < w * f; ++x)
                for (int c = 0; c < 2; ++c) {
                    double lo = 1e9, hi = -1e9;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const double v = ca[n][std::clamp<int64_t>(y / f + dy, 0, h - 1)][std::clamp<int64_t>(x / f + dx, 0, w - 1)][c];
                            lo = std::min(lo, v);
                            hi = std::max(hi, v);
                        }
                    CHECK(ra[n][y][x][c] >= lo - 1e-12);
                    CHECK(ra[n][y][x][c] <= hi + 1e-12);
                }

    CHECK_THROWS_AS(convex_upsample(coarse, torch::zeros({2, 9 * f * f, h, w + 1}), f), std::invalid_argument);
    CHECK_THROWS_AS(convex_upsample(coarse, torch::zeros({2, 9 * 4, h, w}), f), std::invalid_argument);
}

TEST_CASE("16x16 coarse flow upsamples to 128x128") {
    auto coarse = FlowField::zeros(1, 16, 16);
    auto up = convex_upsample(coarse, torch::zeros({1, 9 * 64, 16, 16}));
    CHECK(up.height() == 128);
    CHECK(up.width() == 128);
}

TEST_CASE("huber penalty") {
    CHECK(huber(torch::zeros({3, 4})).item<double>() == 0.0);
    CHECK(huber(torch::tensor({2.0}), 1.0).item<double>() == doctest::Approx(1.5));
    CHECK(huber(torch::tensor({1.0}), 0.5).item<double>() == doctest::Approx(1.5 * 0.25));
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(2);
    auto x = torch::randn({50}, gen, torch::kFloat64) * 2;
    double ref = 0;
    for (int i = 0; i < 50; ++i) {
        const double t = std::abs(x[i].item<double>());
        ref += t <= 1.0 ? 0.5 * t * t : (t - 0.5);
    }
    CHECK(huber(x).item<double>() == doctest::Approx(ref / 50).epsilon(1e-12));
    CHECK_THROWS_AS(huber(x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(huber(x, -1.0), std::invalid_argument);
}

TEST_CASE("total variation of flow fields") {
    CHECK(tv_loss(FlowField::zeros(2, 5, 6)).item<double>() == 0.0);
    CHECK(tv_loss(FlowField{torch::full({1, 5, 6, 2}, 0.7)}).item<double>() == 0.0);

    const double a = 0.3;
    const int64_t h = 4, w = 5;
    auto d = torch::empty({1, h, w, 2}, torch::kFloat64);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            d[0][i][j][0] = ((i + j) % 2 == 0) ? a : -a;
            d[0][i][j][1] = ((i + j) % 2 == 0) ? -2 * a : 2 * a;
        }
    auto hub = [](double t) { t = std::abs(t); return t <= 1 ? 0.5 * t * t : t - 0.5; };
    double sx = 0, sy = 0;
    auto da = d.accessor<double, 4>();
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j + 1 < w; ++j)
            for (int c = 0; c < 2; ++c) sx += hub(da[0][i][j + 1][c] - da[0][i][j][c]);
    for (int64_t i = 0; i + 1 < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int c = 0; c < 2; ++c) sy += hub(da[0][i + 1][j][c] - da[0][i][j][c]);
    const double ref = sx / (h * (w - 1) * 2) + sy / ((h - 1) * w * 2);
    CHECK(tv_loss(FlowField{d}).item<double>() == doctest::Approx(ref).epsilon(1e-12));

    auto gen = torch::make_generator<at::CPUGeneratorImpl>(4);
    auto r = torch::randn({1, 6, 7, 2}, gen, torch::kFloat64);
    auto mirrored = -r.flip({1, 2});
    CHECK(tv_loss(FlowField{r}).item<double>() == doctest::Approx(tv_loss(FlowField{mirrored}).item<double>()).epsilon(1e-12));
    auto per = tv_loss_per_sample(FlowField{torch::cat({r, torch::zeros_like(r)})});
    CHECK(per[1].item<double>() == 0.0);

    CHECK_THROWS_AS(tv_loss(FlowField::zeros(1, 1, 5)), std::invalid_argument);
    CHECK_THROWS_AS(tv_loss(FlowField::zeros(1, 5, 1)), std::invalid_argument);
}

TEST_CASE("identity regularizer") {
    CHECK(identity_reg(FlowField::zeros(1, 4, 4)).item<double>() == 0.0);
    auto d = torch::zeros({1, 4, 4, 2}, torch::kFloat64);
    d.select(3, 0).fill_(0.1);
    CHECK(identity_reg(FlowField{d}).item<double>() == doctest::Approx(0.005).epsilon(1e-12));
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(6);
    auto r = torch::randn({2, 3, 5, 2}, gen, torch::kFloat64);
    double ref = 0;
    auto ra = r.accessor<double, 4>();
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j)
                for (int c = 0; c < 2; ++c) ref += ra[n][i][j][c] * ra[n][i][j][c];
    CHECK(identity_reg(FlowField{r}).item<double>() == doctest::Approx(ref / 60).epsilon(1e-12));
    CHECK(identity_reg(FlowField{-r.flip({1, 2})}).item<double>() == doctest::Approx(ref / 60).epsilon(1e-12));
}

TEST_CASE("flow and grid conversions") {
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(7);
    auto d = torch::randn({1, 5, 5, 2}, gen);
    auto g = FlowField{d}.to_grid();
    CHECK(max_abs(FlowField::from_grid(g).displacement - d) < 1e-6);
    CHECK(torch::equal(FlowField::zeros(1, 5, 5).to_grid().coords, identity_grid(5, 5).coords));

    auto small = FlowField{torch::full({1, 4, 4, 2}, 0.2)};
    auto big = resize_flow(small, 9, 9);
    CHECK(big.height() == 9);
    CHECK(max_abs(big.displacement - 0.2) < 1e-6);
}

TEST_CASE("horizontal flips") {
    auto img = rand_image(1, 2, 3, 4, 1);
    auto f = flip_horizontal(img);
    for (int64_t j = 0; j < 4; ++j) CHECK(torch::equal(f.select(3, j), img.select(3, 3 - j)));
    CHECK(torch::equal(flip_horizontal(f), img));
    auto sym = torch::cat({img, img.flip({3})}, 3);
    CHECK(torch::equal(flip_horizontal(sym), sym));

    // Warping a mirrored input with g equals warping the original with unflip(g).
    auto g = grid_from_matrix(similarity_from_raw({0.1, 0.1, 0.2, -0.1}).matrix(), 6, 6, torch::kFloat64);
    auto image = rand_image(1, 3, 6, 6, 2);
    CHECK(max_abs(sample(flip_horizontal(image), g) - sample(image, unflip_grid(g))) < 1e-12);
}

TEST_CASE("padding names") {
    CHECK(padding_from_string("reflection") == Padding::Reflection);
    CHECK(padding_from_string(to_string(Padding::Zeros)) == Padding::Zeros);
    CHECK(padding_from_string(to_string(Padding::Border)) == Padding::Border);
    CHECK_THROWS_AS(padding_from_string("wrap"), std::invalid_argument);
}

TEST_CASE("flow file round trip") {
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(8);
    auto f = torch::randn({7, 3, 2}, gen);
    auto bytes = encode_ggfl(f);
    CHECK(bytes.size() == 4 + 12 + 7 * 3 * 2 * 4);
    CHECK(bytes.substr(0, 4) == "GGFL");
    CHECK(static_cast<unsigned char>(bytes[4]) == 7);
    CHECK(static_cast<unsigned char>(bytes[8]) == 3);
    CHECK(static_cast<unsigned char>(bytes[12]) == 2);
    CHECK(torch::equal(decode_ggfl(bytes), f));
    CHECK_THROWS(decode_ggfl("GGFX" + bytes.substr(4)));
    CHECK_THROWS(decode_ggfl(bytes.substr(0, bytes.size() - 1)));
    CHECK_THROWS_AS(encode_ggfl(torch::zeros({3, 3, 3})), std::invalid_argument);
}
