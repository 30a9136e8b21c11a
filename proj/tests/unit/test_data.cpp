#include <catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "dgnet/dataset.hpp"
#include "dgnet/image_io.hpp"
#include "support/desk_data.hpp"

using namespace dgnet;
namespace fs = std::filesystem;

namespace {

// In-memory paired index; nothing is read until a batch is loaded.
DatasetIndex fake_index(int count)
{
    std::vector<DatasetEntry> entries;
    for (int i = 0; i < count; ++i) {
        const std::string id = "img" + std::to_string(i) + ".png";
        entries.push_back({id, fs::path("raw") / id, fs::path("reference") / id});
    }
    return DatasetIndex(DatasetKind::Paired, entries);
}

std::set<std::string> ids_of(const DatasetIndex& index)
{
    std::set<std::string> out;
    for (const auto& e : index.entries()) out.insert(e.id);
    return out;
}

} // namespace

TEST_CASE("image save and load round-trip")
{
    const fs::path dir = dgnet::testing::scratch_dir("dgnet_test_image_io");
    Tensor<float> img(Shape{1, 3, 5, 7});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    save_image(dir / "nested" / "a.png", img);
    const auto back = load_image(dir / "nested" / "a.png");
    CHECK(back.shape() == img.shape());
    CHECK(std::equal(back.data().begin(), back.data().end(), img.data().begin()));

    save_image(dir / "white.png", Tensor<float>(Shape{1, 3, 4, 4}, 1.0f));
    const auto white = load_image(dir / "white.png");
    for (const float v : white.data()) CHECK(v == 1.0f);
    save_image(dir / "mid.png", Tensor<float>(Shape{1, 3, 4, 4}, 128.0f / 255.0f));
    const auto mid = load_image(dir / "mid.png");
    for (const float v : mid.data()) CHECK(v == Catch::Approx(0.50196).epsilon(1e-5));

    // Out-of-range values are clamped before quantization.
    save_image(dir / "clamp.png", Tensor<float>(Shape{1, 3, 4, 4}, 1.7f));
    const auto clamped = load_image(dir / "clamp.png");
    for (const float v : clamped.data()) CHECK(v == 1.0f);

    CHECK_THROWS_AS(load_image(dir / "missing.png"), IoError);
    std::ofstream(dir / "junk.png") << "not an image";
    CHECK_THROWS_AS(load_image(dir / "junk.png"), IoError);
}

TEST_CASE("bilinear resize")
{
    // 2x2 -> 4x4 with aligned corners samples at 0, 1/3, 2/3, 1.
    const Tensor<double> src(Shape{1, 1, 2, 2}, std::vector<double>{0.0, 3.0, 6.0, 9.0});
    const auto up = resize_bilinear(src, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(up.at(0, 0, y, x) == Catch::Approx(2.0 * y + x).margin(1e-12));

    Tensor<double> img(Shape{1, 3, 9, 13});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = std::fmod(i * 0.618, 1.0);
    const auto same = resize_bilinear(img, 9, 13);
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(std::abs(same.data()[i] - img.data()[i]) <= 1e-6);

    const auto flat = resize_bilinear(Tensor<double>(Shape{1, 3, 10, 10}, 0.25), 17);
    for (const double v : flat.data()) CHECK(v == Catch::Approx(0.25));

    const auto down = resize_bilinear(img, 8, 24);
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    for (const double v : down.data()) {
        CHECK(v >= *lo);
        CHECK(v <= *hi);
    }
    CHECK_THROWS_AS(resize_bilinear(img, 0, 16), ConfigError);
}

TEST_CASE("padding and cropping helpers")
{
    Tensor<float> img(Shape{1, 3, 10, 13});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<float>(i % 97) / 97.0f;
    const auto padded = pad_to_multiple(img, 8);
    CHECK(padded.shape() == Shape{1, 3, 16, 16});
    CHECK(padded.at(0, 2, 15, 15) == img.at(0, 2, 9, 12));
    CHECK(padded.at(0, 1, 3, 14) == img.at(0, 1, 3, 12));
    const auto back = crop_top_left(padded, 10, 13);
    CHECK(std::equal(back.data().begin(), back.data().end(), img.data().begin()));
    const auto center = center_crop(img, 8, 8);
    CHECK(center.at(0, 0, 0, 0) == img.at(0, 0, 1, 2));

    const auto batch = stack_batch<float>({img, back});
    CHECK(batch.shape() == Shape{2, 3, 10, 13});
    const auto second = batch_item(batch, 1);
    CHECK(std::equal(second.data().begin(), second.data().end(), img.data().begin()));
}

TEST_CASE("dataset split")
{
    const auto index = fake_index(890);
    const auto [train, val] = split_dataset(index, SplitSpec{800, 90, 0});
    CHECK(train.size() == 800);
    CHECK(val.size() == 90);
    const auto train_ids = ids_of(train);
    for (const auto& e : val.entries()) CHECK(train_ids.count(e.id) == 0);

    const auto again = split_dataset(index, SplitSpec{800, 90, 0});
    CHECK(ids_of(again.second) == ids_of(val));
    const auto other = split_dataset(index, SplitSpec{800, 90, 1});
    CHECK(ids_of(other.second) != ids_of(val));

    CHECK_THROWS_AS(split_dataset(index, SplitSpec{800, 91, 0}), ConfigError);
    CHECK_THROWS_AS(split_dataset(DatasetIndex(DatasetKind::Unpaired, {}), SplitSpec{0, 0, 0}), UsageError);
}

TEST_CASE("dataset index invariants and manifests")
{
    std::vector<DatasetEntry> dup{{"a.png", "raw/a.png", fs::path("reference/a.png")},
                                  {"a.png", "raw/a.png", fs::path("reference/a.png")}};
    CHECK_THROWS_AS(DatasetIndex(DatasetKind::Paired, dup), ConfigError);
    CHECK_THROWS_AS(DatasetIndex(DatasetKind::Paired, {{"b.png", "raw/b.png", std::nullopt}}), ConfigError);

    const fs::path root = dgnet::testing::scratch_dir("dgnet_test_manifest");
    const auto index = dgnet::testing::make_tiny_dataset(root, 5, 24);
    CHECK(index.size() == 5);
    CHECK(index.kind() == DatasetKind::Paired);
    index.write_manifest(root / "list.txt");
    const auto listed = DatasetIndex::from_manifest(root, root / "list.txt");
    CHECK(ids_of(listed) == ids_of(index));

    std::ofstream(root / "partial.txt") << index.entries()[0].id << "\n" << index.entries()[2].id << "\n";
    CHECK(DatasetIndex::from_manifest(root, root / "partial.txt").size() == 2);
    std::ofstream(root / "bad.txt") << "nope.png\n";
    CHECK_THROWS_AS(DatasetIndex::from_manifest(root, root / "bad.txt"), IoError);

    fs::remove(root / "reference" / index.entries()[1].id);
    CHECK_THROWS_AS(DatasetIndex::scan(root), IoError);
    CHECK(DatasetIndex::from_directory(root / "raw").kind() == DatasetKind::Unpaired);
    CHECK_THROWS_AS(DatasetIndex::scan(root / "nowhere"), IoError);
}

TEST_CASE("progressive resize schedule")
{
    const ResizeSchedule schedule;
    std::vector<int> sizes;
    for (int e = 0; e < 20; ++e) sizes.push_back(progressive_size(e, 20, schedule));
    CHECK(sizes.front() == 256);
    CHECK(sizes.back() == 400);
    CHECK(std::set<int>(sizes.begin(), sizes.end()) == std::set<int>{256, 304, 352, 400});
    CHECK(std::is_sorted(sizes.begin(), sizes.end()));
    for (const int s : sizes) CHECK(s % 8 == 0);
    CHECK(progressive_size(4, 20, schedule) == 256);
    CHECK(progressive_size(5, 20, schedule) == 304);

    // Fewer epochs than stages still starts at the start size and ends at the end size.
    CHECK(progressive_size(0, 2, schedule) == 256);
    CHECK(progressive_size(1, 2, schedule) == 400);
    CHECK(progressive_size(0, 1, schedule) == 256);
    CHECK_THROWS_AS(progressive_size(20, 20, schedule), ConfigError);
    CHECK_THROWS_AS((ResizeSchedule{256, 404, 4}.validate()), ConfigError);
}

TEST_CASE("batch iterator order")
{
    const auto index = fake_index(800);
    BatchIterator it(index, 5, 256, 0, 0);
    CHECK(it.batch_count() == 160);
    CHECK(BatchIterator(index, 5, 256, 0, 0).order() == it.order());
    CHECK(BatchIterator(index, 5, 256, 0, 1).order() != it.order());
    CHECK(BatchIterator(index, 5, 256, 1, 0).order() != it.order());
    CHECK(BatchIterator(fake_index(7), 5, 256, 0, 0).batch_count() == 2);
    CHECK_THROWS_AS(BatchIterator(DatasetIndex(DatasetKind::Paired, {}), 5, 256, 0, 0), ConfigError);
    CHECK_THROWS_AS(BatchIterator(index, 5, 100, 0, 0), ConfigError);
}

TEST_CASE("batch iterator loads every image once per epoch")
{
    const fs::path root = dgnet::testing::scratch_dir("dgnet_test_batches");
    const auto index = dgnet::testing::make_tiny_dataset(root, 7, 24);
    BatchIterator it(index, 3, 16, 5, 2);
    Batch batch;
    std::multiset<std::string> seen;
    std::vector<std::int64_t> sizes;
    while (it.next(batch)) {
        sizes.push_back(batch.raw.shape().n);
        CHECK(batch.raw.shape().h == 16);
        CHECK(batch.reference.shape() == batch.raw.shape());
        for (const float v : batch.raw.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        seen.insert(batch.ids.begin(), batch.ids.end());
    }
    CHECK(sizes == std::vector<std::int64_t>{3, 3, 1});
    CHECK(std::set<std::string>(seen.begin(), seen.end()) == ids_of(index));
    CHECK(seen.size() == 7);

    BatchIterator skipped(index, 3, 16, 5, 2);
    skipped.skip(2);
    REQUIRE(skipped.next(batch));
    CHECK(batch.ids.size() == 1);
    CHECK_FALSE(skipped.next(batch));
}
