#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "dgnet/metrics.hpp"
#include "support/metric_fixtures.hpp"

using namespace dgnet;
using namespace dgnet::testing;

TEST_CASE("UIQM and UCIQE match the pinned reference oracle")
{
    const auto& cases = testing::pinned_metric_cases();
    for (const Pinned& p : cases) {
        INFO(p.name);
        const UiqmTerms q = uiqm_terms(p.image);
        CHECK(q.uicm == Catch::Approx(p.uiqm[0]).margin(1e-6));
        CHECK(q.uism == Catch::Approx(p.uiqm[1]).margin(1e-6));
        CHECK(q.uiconm == Catch::Approx(p.uiqm[2]).margin(1e-6));
        CHECK(q.value == Catch::Approx(p.uiqm[3]).margin(1e-6));
        const UciqeTerms u = uciqe_terms(p.image);
        CHECK(u.chroma_std == Catch::Approx(p.uciqe[0]).margin(1e-6));
        CHECK(u.luminance_contrast == Catch::Approx(p.uciqe[1]).margin(1e-6));
        CHECK(u.saturation_mean == Catch::Approx(p.uciqe[2]).margin(1e-6));
        CHECK(u.value == Catch::Approx(p.uciqe[3]).margin(1e-6));
    }
}

TEST_CASE("achromatic images have no colorfulness or saturation")
{
    Tensor<double> gray = lcg_image(7, 16, 16);
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) gray.at(0, 1, y, x) = gray.at(0, 2, y, x) = gray.at(0, 0, y, x);
    CHECK(uiqm_terms(gray).uicm == 0.0);
    CHECK(uciqe_terms(gray).saturation_mean == Catch::Approx(0.0).margin(1e-9));

    // A constant gray image zeroes every UCIQE term.
    const Tensor<double> flat(Shape{1, 3, 16, 16}, 0.4);
    const UciqeTerms u = uciqe_terms(flat);
    CHECK(u.value == Catch::Approx(0.0).margin(1e-9));
    CHECK(u.chroma_std == Catch::Approx(0.0).margin(1e-9));
    CHECK(u.luminance_contrast == 0.0);
}

TEST_CASE("full-reference metric identities")
{
    const Tensor<double> x = lcg_image(3, 24, 24);
    CHECK(ssim_metric(x, x) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(psnr(x, x) == kInfinitePsnr);
    CHECK(rmse(x, x) == 0.0);

    // Constant offset 0.1: RMSE 0.1, PSNR 20 dB.
    const Tensor<double> a(Shape{1, 3, 16, 16}, 0.3);
    const Tensor<double> b(Shape{1, 3, 16, 16}, 0.4);
    CHECK(rmse(a, b) == Catch::Approx(0.1).epsilon(1e-12));
    CHECK(psnr(a, b) == Catch::Approx(20.0).epsilon(1e-12));

    // PSNR decreases as RMSE grows.
    double previous_psnr = kInfinitePsnr;
    double previous_rmse = 0.0;
    for (int k = 1; k <= 10; ++k) {
        Tensor<double> noisy = x.clone();
        const Tensor<double> noise = lcg_image(100 + k, 24, 24);
        for (std::size_t i = 0; i < noisy.numel(); ++i) noisy.data()[i] += 0.02 * k * (noise.data()[i] - 0.5);
        const double p = psnr(noisy, x);
        const double r = rmse(noisy, x);
        CHECK(r > previous_rmse);
        CHECK(p < previous_psnr);
        CHECK(p == Catch::Approx(-20.0 * std::log10(r)).epsilon(1e-12));
        previous_psnr = p;
        previous_rmse = r;
    }
    CHECK_THROWS_AS(psnr(a, Tensor<double>(Shape{1, 3, 16, 8})), DimensionError);
}

TEST_CASE("grayworld score")
{
    Tensor<double> red(Shape{1, 3, 8, 8}, 0.0);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) red.at(0, 0, y, x) = 1.0;
    CHECK(std::abs(grayworld_score(red) - std::sqrt(2.0) / 3.0) <= 1e-9);
    CHECK(grayworld_score(Tensor<double>(Shape{1, 3, 8, 8}, 0.7)) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("metric input validation")
{
    CHECK_THROWS_AS(uiqm(Tensor<double>(Shape{1, 3, 4, 16}, 0.5)), DimensionError);
    CHECK_THROWS_AS(uciqe(Tensor<double>(Shape{2, 3, 16, 16}, 0.5)), DimensionError);
    CHECK_THROWS_AS(grayworld_score(Tensor<double>(Shape{1, 1, 16, 16}, 0.5)), DimensionError);
}

TEST_CASE("metric report CSV")
{
    MetricReport report;
    report.add(evaluate_pair<double>("b.png", Tensor<double>(Shape{1, 3, 16, 16}, 0.3),
                                     Tensor<double>(Shape{1, 3, 16, 16}, 0.4)));
    report.add(evaluate_pair<double>("a.png", Tensor<double>(Shape{1, 3, 16, 16}, 0.5),
                                     Tensor<double>(Shape{1, 3, 16, 16}, 0.5)));
    CHECK_THROWS_AS(report.add(evaluate_single<double>("c.png", Tensor<double>(Shape{1, 3, 16, 16}, 0.5))),
                    UsageError);
    std::ostringstream csv;
    report.write_csv(csv);
    std::istringstream lines(csv.str());
    std::string header, first, second, mean;
    std::getline(lines, header);
    std::getline(lines, first);
    std::getline(lines, second);
    std::getline(lines, mean);
    CHECK(header == "image,psnr,rmse,ssim,uiqm,uciqe,grayworld");
    CHECK(first.rfind("a.png,inf,0.000000,1.000000,", 0) == 0);
    CHECK(second.rfind("b.png,20.000000,0.100000,", 0) == 0);
    CHECK(mean.rfind("mean,inf,0.050000,", 0) == 0);

    MetricReport raw(false);
    raw.add(evaluate_single<double>("x.png", checkerboard(16, 16)));
    std::ostringstream raw_csv;
    raw.write_csv(raw_csv);
    CHECK(raw_csv.str().rfind("image,uiqm,uciqe,grayworld\nx.png,", 0) == 0);
    CHECK(raw.mean().uiqm == raw.records()[0].uiqm);
}
