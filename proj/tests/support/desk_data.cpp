#include "desk_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dgnet/image_io.hpp"

#ifndef DGNET_TEST_DATA_DIR
#error "DGNET_TEST_DATA_DIR must point at tests/data"
#endif

namespace dgnet::testing {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("dgnet_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

namespace {

Tensor<float> degrade(const Tensor<float>& clean, std::mt19937_64& rng)
{
    constexpr float gains[3] = {0.55f, 0.9f, 1.0f};
    std::normal_distribution<double> noise(0.0, 0.02);
    Tensor<float> out = clean.detach();
    const std::int64_t plane = clean.shape().plane();
    for (int c = 0; c < 3; ++c) {
        for (std::int64_t i = 0; i < plane; ++i) {
            float& v = out.raw()[c * plane + i];
            v = std::clamp(static_cast<float>(v * gains[c] + noise(rng)), 0.0f, 1.0f);
        }
    }
    return out;
}

} // namespace

DatasetIndex make_desk_dataset(const fs::path& root, std::uint64_t seed)
{
    const char* sources[] = {"astronaut", "chelsea", "coffee", "rocket", "motorcycle_left", "retina"};
    std::mt19937_64 rng(seed);
    for (const char* name : sources) {
        const Tensor<float> full = load_image(fs::path(DGNET_TEST_DATA_DIR) / "natural" / (std::string(name) + ".png"));
        for (int q = 0; q < 4; ++q) {
            const std::int64_t y0 = (q / 2) * 96;
            const std::int64_t x0 = (q % 2) * 96;
            Tensor<float> crop(Shape{1, 3, 96, 96});
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < 96; ++y) {
                    for (int x = 0; x < 96; ++x) crop.at(0, c, y, x) = full.at(0, c, y0 + y, x0 + x);
                }
            }
            const std::string file = std::string(name) + "_" + std::to_string(q) + ".png";
            save_image(root / "reference" / file, crop);
            save_image(root / "raw" / file, degrade(crop, rng));
        }
    }
    return DatasetIndex::scan(root);
}

DatasetIndex make_tiny_dataset(const fs::path& root, int count, int size, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < count; ++k) {
        Tensor<float> ref(Shape{1, 3, size, size});
        const double fx = 1.0 + 3.0 * u(rng);
        const double fy = 1.0 + 3.0 * u(rng);
        for (int c = 0; c < 3; ++c) {
            const double phase = 6.283 * u(rng);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    ref.at(0, c, y, x) = static_cast<float>(
                        0.5 + 0.4 * std::sin(fx * x / size * 6.283 + phase) * std::cos(fy * y / size * 6.283));
                }
            }
        }
        const std::string file = "img" + std::to_string(k) + ".png";
        save_image(root / "reference" / file, ref);
        save_image(root / "raw" / file, degrade(ref, rng));
    }
    return DatasetIndex::scan(root);
}

} // namespace dgnet::testing
