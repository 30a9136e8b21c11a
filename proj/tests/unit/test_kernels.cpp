#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "dgnet/kernels.hpp"

using namespace dgnet::kernels;

namespace {

template <class T>
std::vector<T> random_values(std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(u(rng));
    return v;
}

// Largest difference relative to the reference's largest magnitude (at least 1).
template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& ref)
{
    double worst = 0.0;
    double magnitude = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(double(a[i]) - double(ref[i])));
        magnitude = std::max(magnitude, std::abs(double(ref[i])));
    }
    return worst / magnitude;
}

template <class T>
void compare_with_reference(const ConvGeometry& g, double tolerance)
{
    std::mt19937_64 rng(42);
    const std::size_t in_n = g.batch * g.in_channels * g.in_h * g.in_w;
    const std::size_t w_n = g.out_channels * g.in_per_group() * g.kernel_h * g.kernel_w;
    const std::size_t out_n = g.batch * g.out_channels * g.out_h() * g.out_w();
    const auto input = random_values<T>(in_n, rng);
    const auto weight = random_values<T>(w_n, rng);
    const auto bias = random_values<T>(g.out_channels, rng);
    const auto grad_out = random_values<T>(out_n, rng);

    std::vector<T> out(out_n), out_ref(out_n);
    conv2d_forward(g, input.data(), weight.data(), bias.data(), out.data());
    reference::conv2d_forward(g, input.data(), weight.data(), bias.data(), out_ref.data());
    CHECK(max_abs_diff(out, out_ref) < tolerance);

    // Both accumulate into pre-filled buffers.
    std::vector<T> gi(in_n, T(0.5)), gi_ref(in_n, T(0.5));
    conv2d_backward_input(g, grad_out.data(), weight.data(), gi.data());
    reference::conv2d_backward_input(g, grad_out.data(), weight.data(), gi_ref.data());
    CHECK(max_abs_diff(gi, gi_ref) < tolerance);

    std::vector<T> gw(w_n, T(0.25)), gw_ref(w_n, T(0.25));
    std::vector<T> gb(g.out_channels, T(1)), gb_ref(g.out_channels, T(1));
    conv2d_backward_weight(g, input.data(), grad_out.data(), gw.data(), gb.data());
    reference::conv2d_backward_weight(g, input.data(), grad_out.data(), gw_ref.data(), gb_ref.data());
    CHECK(max_abs_diff(gw, gw_ref) < tolerance);
    CHECK(max_abs_diff(gb, gb_ref) < tolerance);
}

ConvGeometry geometry(std::int64_t n, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t cout,
                      std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t groups)
{
    ConvGeometry g;
    g.batch = n;
    g.in_channels = cin;
    g.in_h = h;
    g.in_w = w;
    g.out_channels = cout;
    g.kernel_h = k;
    g.kernel_w = k;
    g.stride = stride;
    g.padding = pad;
    g.groups = groups;
    return g;
}

} // namespace

TEST_CASE("reference conv matches a hand-computed example")
{
    // 3x3 input 1..9, 2x2 kernel [[1,0],[0,-1]], no padding: x[y][x] - x[y+1][x+1] = -4 everywhere.
    const ConvGeometry g = geometry(1, 1, 3, 3, 1, 2, 1, 0, 1);
    const std::vector<double> input{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<double> weight{1, 0, 0, -1};
    const double bias = 0.5;
    std::vector<double> out(4);
    reference::conv2d_forward(g, input.data(), weight.data(), &bias, out.data());
    for (const double v : out) CHECK(v == -3.5);

    // Padding 1, stride 2, 3x3 box kernel over the same input.
    const ConvGeometry p = geometry(1, 1, 3, 3, 1, 3, 2, 1, 1);
    const std::vector<double> box(9, 1.0);
    std::vector<double> pooled(4);
    reference::conv2d_forward<double>(p, input.data(), box.data(), nullptr, pooled.data());
    CHECK(pooled == std::vector<double>{1 + 2 + 4 + 5, 2 + 3 + 5 + 6, 4 + 5 + 7 + 8, 5 + 6 + 8 + 9});
}

TEST_CASE("parallel conv kernels match the nested-loop reference")
{
    const std::vector<ConvGeometry> cases{
        geometry(2, 3, 9, 7, 4, 3, 1, 1, 1),
        geometry(1, 6, 8, 8, 6, 3, 1, 1, 3),    // grouped
        geometry(2, 5, 6, 6, 5, 3, 1, 1, 5),    // depthwise
        geometry(1, 4, 11, 10, 2, 3, 2, 1, 2),  // strided
        geometry(1, 3, 5, 5, 3, 1, 1, 0, 1),    // pointwise
        geometry(1, 2, 7, 7, 3, 5, 1, 2, 1),    // wide padding
        geometry(1, 1024, 20, 20, 4, 3, 1, 1, 1), // several im2col chunks
    };
    for (const ConvGeometry& g : cases) {
        compare_with_reference<double>(g, 1e-12);
        compare_with_reference<float>(g, 1e-5);
    }
}

TEST_CASE("parallel conv kernels are deterministic")
{
    const ConvGeometry g = geometry(3, 6, 16, 16, 6, 3, 1, 1, 3);
    std::mt19937_64 rng(1);
    const auto input = random_values<float>(3 * 6 * 16 * 16, rng);
    const auto weight = random_values<float>(6 * 2 * 9, rng);
    const auto grad_out = random_values<float>(3 * 6 * 16 * 16, rng);
    std::vector<float> a(6 * 2 * 9, 0.0f), b(6 * 2 * 9, 0.0f);
    conv2d_backward_weight(g, input.data(), grad_out.data(), a.data(), static_cast<float*>(nullptr));
    conv2d_backward_weight(g, input.data(), grad_out.data(), b.data(), static_cast<float*>(nullptr));
    CHECK(a == b);
}
