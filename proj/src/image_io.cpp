#include "dgnet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace dgnet {

Tensor<float> load_image(const std::filesystem::path& path)
{
    if (!std::filesystem::is_regular_file(path)) throw IoError("cannot read image: " + path.string());
    cv::Mat bgr;
    try {
        bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw IoError("cannot decode image " + path.string() + ": " + e.what());
    }
    if (bgr.empty()) throw IoError("cannot decode image: " + path.string());
    if (bgr.depth() != CV_8U || bgr.channels() != 3) throw IoError("not an 8-bit RGB image: " + path.string());

    const int h = bgr.rows;
    const int w = bgr.cols;
    Tensor<float> out(Shape{1, 3, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * w + x;
            out.raw()[i] = row[x][2] / 255.0f;
            out.raw()[plane + i] = row[x][1] / 255.0f;
            out.raw()[2 * plane + i] = row[x][0] / 255.0f;
        }
    }
    return out;
}

void save_image(const std::filesystem::path& path, const Tensor<float>& image)
{
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw DimensionError("save_image: expected (1, 3, H, W), got " + s.str());
    cv::Mat bgr(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
    const std::int64_t plane = s.plane();
    const auto quantize = [](float v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    };
    for (int y = 0; y < bgr.rows; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * s.w + x;
            row[x][2] = quantize(image.raw()[i]);
            row[x][1] = quantize(image.raw()[plane + i]);
            row[x][0] = quantize(image.raw()[2 * plane + i]);
        }
    }
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), bgr);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write image " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write image: " + path.string());
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, int height, int width)
{
    if (height < 1 || width < 1) throw ConfigError("resize_bilinear: target size must be positive");
    const Shape& s = image.shape();
    if (s.h < 1 || s.w < 1) throw DimensionError("resize_bilinear: empty image " + s.str());
    Tensor<T> out(Shape{s.n, s.c, height, width});

    struct Tap {
        std::int64_t i0;
        std::int64_t i1;
        double t;
    };
    const auto taps = [](std::int64_t in, int outn) {
        std::vector<Tap> v(static_cast<std::size_t>(outn));
        for (int o = 0; o < outn; ++o) {
            const double pos = outn > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / (outn - 1) : 0.0;
            const auto i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(pos)), in - 1);
            const std::int64_t i1 = std::min<std::int64_t>(i0 + 1, in - 1);
            v[o] = {i0, i1, pos - static_cast<double>(i0)};
        }
        return v;
    };
    const std::vector<Tap> ty = taps(s.h, height);
    const std::vector<Tap> tx = taps(s.w, width);
    const std::int64_t planes = s.n * s.c;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = image.raw() + p * s.plane();
        T* dst = out.raw() + p * static_cast<std::int64_t>(height) * width;
        for (int y = 0; y < height; ++y) {
            const Tap& a = ty[y];
            for (int x = 0; x < width; ++x) {
                const Tap& b = tx[x];
                const double top = (1.0 - b.t) * src[a.i0 * s.w + b.i0] + b.t * src[a.i0 * s.w + b.i1];
                const double bottom = (1.0 - b.t) * src[a.i1 * s.w + b.i0] + b.t * src[a.i1 * s.w + b.i1];
                dst[y * width + x] = static_cast<T>((1.0 - a.t) * top + a.t * bottom);
            }
        }
    }
    return out;
}

namespace {

template <class T>
Tensor<T> window(const Tensor<T>& image, std::int64_t y0, std::int64_t x0, std::int64_t height, std::int64_t width)
{
    const Shape& s = image.shape();
    if (height < 0 || width < 0 || y0 < 0 || x0 < 0 || y0 + height > s.h || x0 + width > s.w) {
        throw DimensionError("crop window outside image " + s.str());
    }
    Tensor<T> out(Shape{s.n, s.c, height, width});
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t y = 0; y < height; ++y) {
            const T* src = image.raw() + p * s.plane() + (y0 + y) * s.w + x0;
            std::copy(src, src + width, out.raw() + (p * height + y) * width);
        }
    }
    return out;
}

} // namespace

template <class T>
Tensor<T> center_crop(const Tensor<T>& image, std::int64_t height, std::int64_t width)
{
    const Shape& s = image.shape();
    return window(image, (s.h - height) / 2, (s.w - width) / 2, height, width);
}

template <class T>
Tensor<T> crop_top_left(const Tensor<T>& image, std::int64_t height, std::int64_t width)
{
    return window(image, 0, 0, height, width);
}

template <class T>
Tensor<T> pad_to_multiple(const Tensor<T>& image, int multiple)
{
    if (multiple < 1) throw ConfigError("pad_to_multiple: multiple must be >= 1");
    const Shape& s = image.shape();
    const std::int64_t h = (s.h + multiple - 1) / multiple * multiple;
    const std::int64_t w = (s.w + multiple - 1) / multiple * multiple;
    Tensor<T> out(Shape{s.n, s.c, h, w});
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t y = 0; y < h; ++y) {
            const T* src = image.raw() + p * s.plane() + std::min(y, s.h - 1) * s.w;
            T* dst = out.raw() + (p * h + y) * w;
            for (std::int64_t x = 0; x < w; ++x) dst[x] = src[std::min(x, s.w - 1)];
        }
    }
    return out;
}

template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& images)
{
    if (images.empty()) throw DimensionError("stack_batch: no images");
    const Shape first = images.front().shape();
    std::int64_t n = 0;
    for (const Tensor<T>& im : images) {
        const Shape& s = im.shape();
        if (s.c != first.c || s.h != first.h || s.w != first.w) {
            throw DimensionError("stack_batch: shape " + s.str() + " differs from " + first.str());
        }
        n += s.n;
    }
    Tensor<T> out(Shape{n, first.c, first.h, first.w});
    T* dst = out.raw();
    for (const Tensor<T>& im : images) dst = std::copy(im.data().begin(), im.data().end(), dst);
    return out;
}

template <class T>
Tensor<T> batch_item(const Tensor<T>& batch, std::int64_t n)
{
    const Shape& s = batch.shape();
    if (n < 0 || n >= s.n) throw DimensionError("batch_item: index out of range for " + s.str());
    const std::size_t per = static_cast<std::size_t>(s.c * s.plane());
    const auto begin = batch.data().begin() + static_cast<std::ptrdiff_t>(n * per);
    return Tensor<T>(Shape{1, s.c, s.h, s.w}, std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(per)));
}

#define DGNET_INSTANTIATE_IMAGE(T)                                                              \
    template Tensor<T> resize_bilinear<T>(const Tensor<T>&, int, int);                          \
    template Tensor<T> center_crop<T>(const Tensor<T>&, std::int64_t, std::int64_t);            \
    template Tensor<T> crop_top_left<T>(const Tensor<T>&, std::int64_t, std::int64_t);          \
    template Tensor<T> pad_to_multiple<T>(const Tensor<T>&, int);                               \
    template Tensor<T> stack_batch<T>(const std::vector<Tensor<T>>&);                           \
    template Tensor<T> batch_item<T>(const Tensor<T>&, std::int64_t);

DGNET_INSTANTIATE_IMAGE(float)
DGNET_INSTANTIATE_IMAGE(double)

} // namespace dgnet
