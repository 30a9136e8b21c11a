#pragma once

// Synthetic images rebuilt exactly as in tests/oracles/metric_oracle.py, and
// the oracle's UIQM / UCIQE terms for them.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dgnet/tensor.hpp"

namespace dgnet::testing {

inline Tensor<double> lcg_image(std::uint64_t state, int h, int w)
{
    Tensor<double> t(Shape{1, 3, h, w});
    for (double& v : t.data()) {
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        v = static_cast<double>(state >> 11) * 0x1p-53;
    }
    return t;
}

inline Tensor<double> checkerboard(int h, int w)
{
    const double a[3] = {0.2, 0.4, 0.7};
    const double b[3] = {0.8, 0.6, 0.3};
    Tensor<double> t(Shape{1, 3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) t.at(0, c, y, x) = ((y / 4 + x / 4) % 2) ? b[c] : a[c];
    return t;
}

inline void hsv_to_rgb(double h, double s, double v, double rgb[3])
{
    if (s == 0.0) {
        rgb[0] = rgb[1] = rgb[2] = v;
        return;
    }
    int i = static_cast<int>(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    i %= 6;
    const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
    for (int c = 0; c < 3; ++c) rgb[c] = table[i][c];
}

inline Tensor<double> color_wheel(int size)
{
    Tensor<double> t(Shape{1, 3, size, size});
    const double center = (size - 1) / 2.0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dy = y - center;
            const double dx = x - center;
            double hue = std::atan2(dy, dx) / (2.0 * std::numbers::pi);
            if (hue < 0.0) hue += 1.0;
            double rgb[3];
            hsv_to_rgb(hue, std::min(1.0, std::hypot(dy, dx) / center), 0.9, rgb);
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = rgb[c];
        }
    }
    return t;
}

inline Tensor<double> cast_ramp(int h, int w)
{
    Tensor<double> t(Shape{1, 3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double base = 0.2 + 0.6 * (x + 2 * y) / (w - 1 + 2 * (h - 1));
            t.at(0, 0, y, x) = 0.5 * base;
            t.at(0, 1, y, x) = 0.85 * base;
            t.at(0, 2, y, x) = std::min(1.0, 1.1 * base);
        }
    }
    return t;
}

struct Pinned {
    const char* name;
    Tensor<double> image;
    double uiqm[4];  // uicm, uism, uiconm, value
    double uciqe[4]; // chroma std, luminance contrast, saturation, value
};

inline const std::vector<Pinned>& pinned_metric_cases()
{
    static const std::vector<Pinned> cases{
        {"lcg", lcg_image(12345, 32, 40),
         {21.91017824035475, 11.348974172901777, 0.18909009564401424, 4.6452729185919424},
         {0.27251658163531045, 0.88576782488732819, 1.1624069519924625, 0.67011705897015528}},
        {"checker", checkerboard(32, 32),
         {18.08294123059585, 0.0, 0.34703426811028903, 1.7506905614775192},
         {0.007312733801170701, 0.23217224455729571, 0.89692725496719272, 0.2982021014294744}},
        {"wheel", color_wheel(48),
         {28.304631073630325, 0.88306124695075727, 0.28191181308811408, 2.0668778878348681},
         {0.26793775592628316, 0.60655254110746681, 1.2670845082695894, 0.6182945116377464}},
        {"ramp", cast_ramp(28, 36),
         {1.0027471686916378, 1.0328743621637444, 0.29090069833887772, 1.3733425360750475},
         {0.048312976415288658, 0.48140627538811048, 0.52867227711866605, 0.29094247414215979}},
    };
    return cases;
}

} // namespace dgnet::testing
