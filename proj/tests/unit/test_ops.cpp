#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dgnet/ops.hpp"
#include "support/gradcheck.hpp"

using namespace dgnet;
using dgnet::testing::check_gradients;
using dgnet::testing::GradCheckOptions;
using dgnet::testing::random_tensor;

namespace {

constexpr double kTolerance = 1e-4;

// Weighted sum with distinct random weights, so every output element has its own cotangent.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 99)
{
    std::mt19937_64 rng(seed);
    const Tensor<double> w = random_tensor(y.shape(), rng, -1.0, 1.0);
    return sum(mul(y, w));
}

void require_gradients(const std::vector<Tensor<double>>& inputs, const std::vector<std::string>& names,
                       const std::function<Tensor<double>()>& loss)
{
    const auto report = check_gradients(inputs, names, loss, GradCheckOptions{});
    INFO(report.worst);
    CHECK(report.checks > 0);
    CHECK(report.max_rel_error < kTolerance);
}

} // namespace

TEST_CASE("conv2d gradients")
{
    std::mt19937_64 rng(1);
    const auto x = random_tensor({2, 4, 6, 5}, rng, -1, 1);
    const auto w = random_tensor({6, 2, 3, 3}, rng, -1, 1);
    const auto b = random_tensor({1, 6, 1, 1}, rng, -1, 1);
    require_gradients({x, w, b}, {"x", "w", "b"},
                      [&] { return probe(conv2d(x, w, &b, {.stride = 1, .padding = 1, .groups = 2})); });
    require_gradients({x, w}, {"x", "w"}, [&] {
        return probe(conv2d<double>(x, w, nullptr, {.stride = 2, .padding = 1, .groups = 2}));
    });
}

TEST_CASE("conv2d rejects bad groups and shapes")
{
    const Tensor<float> x(Shape{1, 4, 8, 8});
    CHECK_THROWS_AS(conv2d<float>(x, Tensor<float>(Shape{3, 2, 3, 3}), nullptr, {.padding = 1, .groups = 3}),
                    ConfigError);
    CHECK_THROWS_AS(conv2d<float>(x, Tensor<float>(Shape{4, 3, 3, 3}), nullptr, {.padding = 1}), DimensionError);
    CHECK_THROWS_AS(conv2d<float>(x, Tensor<float>(Shape{4, 4, 9, 9}), nullptr, {}), DimensionError);
}

TEST_CASE("batchnorm gradients in train and eval mode")
{
    std::mt19937_64 rng(2);
    const auto x = random_tensor({2, 3, 4, 4}, rng, -2, 2);
    const auto gamma = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
    const auto beta = random_tensor({1, 3, 1, 1}, rng, -1, 1);
    BatchNormState<double> state(3);
    require_gradients({x, gamma, beta}, {"x", "gamma", "beta"},
                      [&] { return probe(batchnorm2d(x, gamma, beta, state, Mode::Train)); });
    state.running_mean = {0.1, -0.2, 0.3};
    state.running_var = {0.5, 1.5, 2.0};
    require_gradients({x, gamma, beta}, {"x", "gamma", "beta"},
                      [&] { return probe(batchnorm2d(x, gamma, beta, state, Mode::Eval)); });
}

TEST_CASE("batchnorm statistics")
{
    // One channel, values 1..4: mean 2.5, biased var 1.25, unbiased var 5/3.
    const Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const Tensor<double> gamma(Shape{1, 1, 1, 1}, 2.0);
    const Tensor<double> beta(Shape{1, 1, 1, 1}, 0.5);
    BatchNormState<double> state(1);
    const auto y = batchnorm2d(x, gamma, beta, state, Mode::Train, {.eps = 0.0, .momentum = 0.1});
    CHECK(y.data()[0] == Catch::Approx(2.0 * (1 - 2.5) / std::sqrt(1.25) + 0.5).epsilon(1e-12));
    CHECK(state.running_mean[0] == Catch::Approx(0.25));
    CHECK(state.running_var[0] == Catch::Approx(0.9 + 0.1 * 5.0 / 3.0));

    BatchNormState<double> fresh(1);
    const auto e = batchnorm2d(x, gamma, beta, fresh, Mode::Eval, {.eps = 0.0});
    CHECK(e.data()[3] == Catch::Approx(8.5));
}

TEST_CASE("mish and sigmoid values and gradients")
{
    const std::vector<double> points{-30.0, -5.0, -1.0, 0.0, 0.3, 2.0, 19.0, 25.0};
    const Tensor<double> x(Shape{1, 1, 1, static_cast<std::int64_t>(points.size())}, points);
    const auto m = mish(x);
    const auto s = sigmoid(x);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double v = points[i];
        CHECK(m.data()[i] == Catch::Approx(v * std::tanh(std::log1p(std::exp(v)))).epsilon(1e-12).margin(1e-14));
        CHECK(s.data()[i] == Catch::Approx(1.0 / (1.0 + std::exp(-v))).epsilon(1e-12));
    }

    std::mt19937_64 rng(3);
    const auto y = random_tensor({1, 2, 4, 4}, rng, -4, 4);
    require_gradients({y}, {"x"}, [&] { return probe(mish(y)); });
    require_gradients({y}, {"x"}, [&] { return probe(sigmoid(y)); });
    require_gradients({x}, {"x"}, [&] { return probe(mish(x)); });
}

TEST_CASE("elementwise, channel and reduction gradients")
{
    std::mt19937_64 rng(4);
    const auto a = random_tensor({2, 3, 3, 3}, rng, -1, 1);
    const auto b = random_tensor({2, 3, 3, 3}, rng, -1, 1);
    const auto c = random_tensor({2, 2, 3, 3}, rng, -1, 1);
    require_gradients({a, b}, {"a", "b"}, [&] { return probe(add(a, b)); });
    require_gradients({a, b}, {"a", "b"}, [&] { return probe(sub(a, b)); });
    require_gradients({a, b}, {"a", "b"}, [&] { return probe(mul(a, b)); });
    require_gradients({a}, {"a"}, [&] { return probe(scale(a, -2.5)); });
    require_gradients({a}, {"a"}, [&] { return probe(shift(a, 0.75)); });
    require_gradients({a, c}, {"a", "c"}, [&] { return probe(concat_channels<double>({a, c, a})); });
    require_gradients({a}, {"a"}, [&] { return probe(slice_channels(a, 1, 3)); });
    require_gradients({a}, {"a"}, [&] { return mean(mul(a, a)); });
    require_gradients({a}, {"a"}, [&] { return sum(mul(a, a)); });

    // Kinks kept away from the sample points.
    auto away = [](Tensor<double> t, double at) {
        for (double& v : t.data()) {
            if (std::abs(v - at) < 0.05) v = at + 0.1;
        }
        return t;
    };
    const auto k = away(away(away(random_tensor({1, 2, 4, 4}, rng, -1, 1), 0.0), -0.5), 0.5);
    require_gradients({k}, {"x"}, [&] { return probe(abs(k)); });
    require_gradients({k}, {"x"}, [&] { return probe(clamp(k, -0.5, 0.5)); });
}

TEST_CASE("replicate padding values and gradients")
{
    const Tensor<double> x(Shape{1, 1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const auto p = pad_replicate(x, 1);
    CHECK(p.shape() == Shape{1, 1, 4, 5});
    const std::vector<double> expected{1, 1, 2, 3, 3, 1, 1, 2, 3, 3, 4, 4, 5, 6, 6, 4, 4, 5, 6, 6};
    CHECK(std::equal(expected.begin(), expected.end(), p.data().begin()));
    CHECK(pad_replicate(x, 0).data().size() == 6);
    CHECK_THROWS_AS(pad_replicate(x, -1), ConfigError);

    std::mt19937_64 rng(6);
    const auto a = random_tensor({2, 3, 4, 5}, rng, -1, 1);
    require_gradients({a}, {"x"}, [&] { return probe(pad_replicate(a, 2)); });
}

TEST_CASE("op shape errors")
{
    const Tensor<float> a(Shape{1, 2, 3, 3});
    const Tensor<float> b(Shape{1, 2, 3, 4});
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(mul(a, b), DimensionError);
    CHECK_THROWS_AS(concat_channels<float>({a, b}), DimensionError);
    CHECK_THROWS_AS(slice_channels(a, 1, 3), DimensionError);
    CHECK_THROWS_AS(clamp(a, 1.0f, 0.0f), ConfigError);
}

TEST_CASE("clamp and abs subgradients at the boundary")
{
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{0.0, 1.0, 0.5});
    x.set_requires_grad(true);
    tape.backward(sum(add(abs(x), clamp(x, 0.0, 1.0))));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 2.0);
}
