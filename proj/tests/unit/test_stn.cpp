#include <doctest.h>

#include "gangeal/stn.hpp"

#include <cmath>
#include <numbers>

using namespace gangeal;

namespace {

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

torch::Tensor rand_image(int64_t n, int64_t size, uint64_t seed) {
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::rand({n, 3, size, size}, gen) * 2 - 1;
}

// Low-frequency image so that bilinear resampling is accurate to well below 1e-3.
torch::Tensor smooth_image(int64_t size) {
    auto g = identity_grid(size, size, torch::kFloat64).coords[0];
    auto x = g.select(-1, 0), y = g.select(-1, 1);
    auto img = torch::stack({0.5 * torch::sin(1.3 * x + 0.7 * y), 0.4 * torch::cos(0.9 * x - 1.1 * y),
                             0.3 * torch::sin(0.6 * x * y + 0.2)})
                   .unsqueeze(0);
    return img.to(torch::kFloat32);
}

WarpNetwork small_net(int64_t clusters = 1, int64_t resolution = 32) {
    NetworkConfig cfg;
    cfg.resolution = resolution;
    cfg.width = 8;
    cfg.hidden = 32;
    cfg.clusters = clusters;
    return WarpNetwork(cfg);
}

void set_sim_bias(WarpNetwork& net, int64_t k, std::array<float, 4> b) {
    torch::NoGradGuard ng;
    net->sim_head(k)->bias.copy_(torch::tensor({b[0], b[1], b[2], b[3]}));
}

void set_flow_bias(WarpNetwork& net, int64_t k, float vx, float vy) {
    torch::NoGradGuard ng;
    net->flow_head(k)->bias.copy_(torch::tensor({vx, vy}));
}

} // namespace

TEST_CASE("fresh network is the identity warp for every cluster") {
    auto net = small_net(3);
    auto x = rand_image(2, 32, 1);
    for (int64_t k = 0; k < 3; ++k) {
        auto sim = net->forward_sim(x, k);
        CHECK(torch::equal(sim.warped, x));
        for (int64_t i = 0; i < 2; ++i) {
            auto p = similarity_from_raw({sim.raw[i][0].item<double>(), sim.raw[i][1].item<double>(),
                                          sim.raw[i][2].item<double>(), sim.raw[i][3].item<double>()});
            CHECK(p.scale == 1.0);
            CHECK(p.rotation == 0.0);
        }
        auto fl = net->forward_flow(x, k);
        CHECK(max_abs(fl.flow.displacement) == 0.0);
        CHECK(tv_loss(fl.flow).item<double>() == 0.0);
        CHECK(torch::equal(fl.warped, x));
        auto full = net->forward(x, k, 2);
        CHECK(torch::equal(full.grid.coords, identity_grid(32, 32).coords.expand({2, 32, 32, 2})));
        CHECK(torch::equal(full.warped, x));
        CHECK(full.cluster == k);
        auto rec = net->recursive_align(x, 3, k);
        CHECK(torch::equal(rec.warped, x));
        CHECK(torch::allclose(rec.matrices, torch::eye(3).expand({2, 3, 3})));
    }
}

TEST_CASE("similarity bias of ln 2 produces a uniform 2x scale warp") {
    auto net = small_net();
    set_sim_bias(net, 0, {0.f, static_cast<float>(std::log(2.0)), 0.f, 0.f});
    auto x = rand_image(1, 32, 2);
    auto sim = net->forward_sim(x, 0);
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = m(1, 1) = 2.0;
    auto oracle_grid = grid_from_matrix(m, 32, 32);
    CHECK(max_abs(sim.grid.coords - oracle_grid.coords) < 1e-5);
    CHECK(max_abs(sim.warped - sample(x, oracle_grid, Padding::Reflection)) < 1e-5);
    CHECK(sim.matrices[0][0][0].item<double>() == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(max_abs(sim.matrices[0][0].slice(0, 1, 3)) < 1e-6);
}

TEST_CASE("constant coarse flow yields a constant fine flow and a translation warp") {
    auto net = small_net();
    set_flow_bias(net, 0, 0.1f, -0.05f);
    {
        // non-uniform convex weights must not change a constant field
        torch::NoGradGuard ng;
        net->mask_head(0)->bias.uniform_(-2, 2);
    }
    auto x = rand_image(2, 32, 3);
    auto fl = net->forward_flow(x, 0);
    CHECK(fl.flow.height() == 32);
    CHECK(max_abs(fl.flow.displacement.select(-1, 0) - 0.1) < 1e-6);
    CHECK(max_abs(fl.flow.displacement.select(-1, 1) + 0.05) < 1e-6);
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 2) = 0.1;
    t(1, 2) = -0.05;
    auto oracle = sample(x, grid_from_matrix(t, 32, 32), Padding::Reflection);
    CHECK(max_abs(fl.warped - oracle) < 1e-5);
}

TEST_CASE("identity flow leaves the composed grid equal to the similarity grid") {
    auto net = small_net();
    set_sim_bias(net, 0, {0.1f, -0.2f, 0.05f, 0.1f});
    auto x = rand_image(1, 32, 4);
    auto r = net->forward(x, 0);
    auto sim = net->forward_sim(x, 0);
    CHECK(max_abs(r.grid.coords - sim.grid.coords) < 1e-6);
    CHECK(max_abs(r.warped - sim.warped) < 1e-5);
    auto p = r.similarity();
    REQUIRE(p.size() == 1);
    CHECK(p[0].scale == doctest::Approx(std::exp(-0.2)).epsilon(1e-5));
    CHECK(p[0].rotation == doctest::Approx(std::numbers::pi * std::tanh(0.1)).epsilon(1e-5));
}

TEST_CASE("single-pass composed warp matches two-pass sampling") {
    auto net = small_net(1, 64);
    set_sim_bias(net, 0, {0.03f, static_cast<float>(std::log(0.8)), 0.05f, -0.04f});
    set_flow_bias(net, 0, 0.02f, -0.015f);
    auto x = smooth_image(64);
    const auto before = sample_call_count();
    auto r = net->forward(x, 0);
    // one call for the similarity output feeding the flow head, one for the final output
    CHECK(sample_call_count() - before == 2);
    CHECK(torch::equal(r.warped, sample(x, r.grid, Padding::Reflection)));
    auto sim = net->forward_sim(x, 0);
    auto two_pass = sample(sim.warped, r.flow.to_grid(), Padding::Reflection);
    // the flow reaches one pixel past the similarity output at its border, where
    // the two-pass reference reflects instead of reading the source
    auto interior = [](const torch::Tensor& t) { return t.slice(2, 2, -2).slice(3, 2, -2); };
    CHECK(max_abs(interior(r.warped) - interior(two_pass)) < 1e-3);
}

TEST_CASE("recursive alignment with one iteration equals forward_sim") {
    auto net = small_net();
    set_sim_bias(net, 0, {0.2f, 0.1f, -0.1f, 0.05f});
    auto x = rand_image(2, 32, 5);
    auto rec = net->recursive_align(x, 1, 0);
    auto sim = net->forward_sim(x, 0);
    CHECK(torch::equal(rec.warped, sim.warped));
    CHECK(torch::equal(rec.matrices, sim.matrices));
    // a constant head composes with itself: two iterations give M * M
    auto rec2 = net->recursive_align(x, 2, 0);
    CHECK(max_abs(rec2.matrices - torch::matmul(sim.matrices, sim.matrices)) < 1e-5);
    CHECK_THROWS_AS(net->recursive_align(x, 0, 0), std::invalid_argument);
}

TEST_CASE("clusters have independent heads") {
    auto net = small_net(2);
    set_sim_bias(net, 1, {0.f, 0.3f, 0.f, 0.f});
    auto x = rand_image(1, 32, 6);
    CHECK(torch::equal(net->forward(x, 0).warped, x));
    CHECK_FALSE(torch::equal(net->forward(x, 1).warped, x));
    CHECK(net->cluster_parameters(0).size() == net->cluster_parameters(1).size());
    CHECK_THROWS(net->forward(x, 2));
    CHECK_THROWS(net->forward(x, -1));
}

TEST_CASE("flip_input reverses columns") {
    auto x = rand_image(2, 8, 7);
    CHECK(torch::equal(flip_input(flip_input(x)), x));
    auto f = flip_input(x);
    for (int64_t j = 0; j < 8; ++j) CHECK(torch::equal(f.select(3, j), x.select(3, 7 - j)));
    auto sym = x + flip_input(x);
    CHECK(torch::equal(flip_input(sym), sym));
}

TEST_CASE("network gradients reach every head") {
    auto net = small_net();
    auto x = rand_image(2, 32, 8);
    auto r = net->forward(x, 0);
    (r.warped - x.flip({3})).pow(2).mean().backward();
    for (auto& p : net->cluster_parameters(0)) {
        REQUIRE(p.grad().defined());
    }
    CHECK(net->sim_head(0)->bias.grad().abs().sum().item<double>() > 0);
    CHECK(net->flow_head(0)->bias.grad().abs().sum().item<double>() > 0);
}

TEST_CASE("cluster classifier shares the warp backbone") {
    auto net = small_net(2);
    NetworkConfig cfg = net->config();
    ClusterClassifier clf(cfg, 3);
    CHECK(clf->classes() == 4);
    clf->init_from(*net);
    auto x = rand_image(3, 32, 9);
    CHECK(torch::equal(clf->backbone->forward(x), net->sim_backbone->forward(x)));
    CHECK(clf->forward(x).sizes() == torch::IntArrayRef({3, 4}));
}

TEST_CASE("network configuration round trips through JSON") {
    NetworkConfig cfg;
    cfg.clusters = 3;
    cfg.padding = Padding::Border;
    cfg.use_flow = false;
    auto back = NetworkConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.padding == Padding::Border);
}
