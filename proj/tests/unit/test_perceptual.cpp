#include <doctest.h>

#include "gangeal/generator.hpp"
#include "gangeal/perceptual.hpp"

using namespace gangeal;

namespace {

torch::Tensor rand_image(int64_t n, int64_t size, uint64_t seed) {
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::rand({n, 3, size, size}, gen) * 2 - 1;
}

} // namespace

TEST_CASE("distance of an image to itself is zero and distance is symmetric") {
    auto x = rand_image(2, 32, 1), y = rand_image(2, 32, 2);
    for (const auto& d : {FeatureDistance::pixel(), FeatureDistance::random_features(4, 8)}) {
        CHECK(d.distance(x, x).item<double>() == 0.0);
        CHECK(d.distance(x, y).item<double>() == doctest::Approx(d.distance(y, x).item<double>()).epsilon(1e-6));
        CHECK(d.distance(x, y).item<double>() > 0.0);
    }
}

TEST_CASE("pixel distance is the mean squared pixel error") {
    auto x = rand_image(2, 5, 3).to(torch::kFloat64), y = rand_image(2, 5, 4).to(torch::kFloat64);
    auto d = FeatureDistance::pixel();
    auto per = d.distance_per_sample(x, y);
    auto ax = x.accessor<double, 4>(), ay = y.accessor<double, 4>();
    double total = 0;
    for (int n = 0; n < 2; ++n) {
        double s = 0;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 5; ++j) s += (ax[n][c][i][j] - ay[n][c][i][j]) * (ax[n][c][i][j] - ay[n][c][i][j]);
        CHECK(per[n].item<double>() == doctest::Approx(s / 75).epsilon(1e-12));
        total += s / 75;
    }
    CHECK(d.distance(x, y).item<double>() == doctest::Approx(total / 2).epsilon(1e-12));
    CHECK(d.distance(torch::zeros({1, 3, 4, 4}), torch::ones({1, 3, 4, 4})).item<double>() == 1.0);
}

TEST_CASE("random features are deterministic in the seed") {
    auto x = rand_image(1, 32, 5), y = rand_image(1, 32, 6);
    auto a = FeatureDistance::random_features(11).distance(x, y).item<double>();
    auto b = FeatureDistance::random_features(11).distance(x, y).item<double>();
    auto c = FeatureDistance::random_features(12).distance(x, y).item<double>();
    CHECK(a == b);
    CHECK(a != c);
    CHECK(make_extractor("random_features", 11).distance(x, y).item<double>() == a);
    CHECK(make_extractor("pixel").kind() == FeatureDistance::Kind::Pixel);
    CHECK_THROWS_AS(make_extractor("vgg"), std::invalid_argument);
}

TEST_CASE("random features rank a one-pixel shift closer than an unrelated image") {
    ToyGenerator g;
    auto d = FeatureDistance::random_features(0, 8);
    auto imgs = g.synthesize(g.sample_latents(51, 123));
    int wins = 0;
    for (int64_t i = 0; i < 50; ++i) {
        auto x = imgs.slice(0, i, i + 1);
        auto shifted = torch::cat({x.slice(3, 1), x.slice(3, -1)}, 3);
        auto other = imgs.slice(0, i + 1, i + 2);
        wins += d.distance(x, shifted).item<double>() < d.distance(x, other).item<double>();
    }
    CHECK(wins == 50);
}

TEST_CASE("precomputed target features give the same distance") {
    auto d = FeatureDistance::random_features(2, 8);
    auto x = rand_image(3, 32, 7), y = rand_image(3, 32, 8);
    auto fy = d.features(y);
    CHECK(fy.size() == 3);
    CHECK(d.distance_to_features(x, fy).allclose(d.distance_per_sample(x, y)));
}

TEST_CASE("distance is differentiable in the first argument") {
    auto d = FeatureDistance::random_features(3, 8);
    auto x = rand_image(1, 16, 9).to(torch::kFloat64).requires_grad_(true);
    auto y = rand_image(1, 16, 10).to(torch::kFloat64);
    auto loss = d.distance(x, y);
    auto grad = torch::autograd::grad({loss}, {x})[0];
    auto dir = rand_image(1, 16, 11).to(torch::kFloat64);
    const double eps = 1e-6;
    const double fd = (d.distance(x.detach() + eps * dir, y) - d.distance(x.detach() - eps * dir, y)).item<double>() /
                      (2 * eps);
    CHECK((grad * dir).sum().item<double>() == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("scale weights can be replaced") {
    auto d = FeatureDistance::random_features(0, 8);
    CHECK(d.weights().size() == 3);
    CHECK_THROWS(d.set_weights({1.0}));
    d.set_weights({0.0, 0.0, 0.0});
    CHECK(d.distance(rand_image(1, 16, 1), rand_image(1, 16, 2)).item<double>() == 0.0);
    CHECK(d.describe()["kind"] == "random_features");
}
