#pragma once

#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dgnet/tensor.hpp"

namespace dgnet {

/// PSNR reported for identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

template <class T>
double mse(const Tensor<T>& pred, const Tensor<T>& ref);

/// 10 log10(1 / MSE) for images in [0, 1]; kInfinitePsnr when MSE is 0.
template <class T>
double psnr(const Tensor<T>& pred, const Tensor<T>& ref);

template <class T>
double rmse(const Tensor<T>& pred, const Tensor<T>& ref);

/// Mean SSIM over channels (11x11 Gaussian window, sigma 1.5), no tape.
template <class T>
double ssim_metric(const Tensor<T>& pred, const Tensor<T>& ref);

/// UIQM = 0.0282 UICM + 0.2953 UISM + 3.5753 UIConM, evaluated on pixels
/// scaled to [0, 255].
///
/// UICM: RG = R - G and YB = (R + G) / 2 - B; means are asymmetric alpha-trimmed
/// (alpha 0.1 per side: ceil(0.1 K) smallest and floor(0.1 K) largest samples
/// dropped), variances are taken about that mean over all K samples.
/// UICM = -0.0268 sqrt(mu_RG^2 + mu_YB^2) + 0.1586 sqrt(var_RG + var_YB).
/// UISM: per channel, EME of |Sobel(channel)| * channel (replicate border),
/// weighted 0.299 / 0.587 / 0.114. EME over 8x8 blocks (partial blocks
/// dropped): 2 / (k1 k2) * sum ln(max / min), blocks with min or max <= 0 add 0.
/// UIConM: logAMEE of the luma 0.299 R + 0.587 G + 0.114 B over 8x8 blocks:
/// -1 / (k1 k2) * sum r ln r with r = (max - min) / (max + min); blocks with
/// r = 0 or max + min = 0 add 0.
struct UiqmTerms {
    double uicm = 0.0;
    double uism = 0.0;
    double uiconm = 0.0;
    double value = 0.0;
};

/// image: (1, 3, H, W), H and W >= 8.
template <class T>
UiqmTerms uiqm_terms(const Tensor<T>& image);
template <class T>
double uiqm(const Tensor<T>& image);

/// UCIQE = 0.4680 sigma_c + 0.2745 con_l + 0.2576 mu_s on CIELab (sRGB, D65,
/// white point taken as the conversion matrix's row sums).
/// sigma_c: standard deviation of chroma sqrt(a^2 + b^2), divided by 100.
/// con_l: mean of the top 1% minus the bottom 1% of L / 100 (at least one
/// pixel each). mu_s: mean of chroma / L, 0 where L is 0.
struct UciqeTerms {
    double chroma_std = 0.0;
    double luminance_contrast = 0.0;
    double saturation_mean = 0.0;
    double value = 0.0;
};

template <class T>
UciqeTerms uciqe_terms(const Tensor<T>& image);
template <class T>
double uciqe(const Tensor<T>& image);

/// sqrt(mean over channels of (channel mean - overall mean)^2).
template <class T>
double grayworld_score(const Tensor<T>& image);

struct MetricRecord {
    std::string image;
    std::optional<double> psnr; ///< full-reference columns are empty in raw-only mode
    std::optional<double> rmse;
    std::optional<double> ssim;
    double uiqm = 0.0;
    double uciqe = 0.0;
    double grayworld = 0.0;
};

/// Per-image metric rows plus their column means.
class MetricReport {
public:
    explicit MetricReport(bool full_reference = true) : full_reference_(full_reference) {}

    /// Throws UsageError when the record's full-reference columns do not match
    /// the report kind.
    void add(MetricRecord record);

    bool full_reference() const { return full_reference_; }
    const std::vector<MetricRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    /// Column means over all records (0 records: all zero).
    MetricRecord mean() const;

    /// Header, one row per record sorted by image name, final "mean" row.
    void write_csv(std::ostream& out) const;

private:
    bool full_reference_;
    std::vector<MetricRecord> records_;
};

template <class T>
MetricRecord evaluate_pair(const std::string& name, const Tensor<T>& pred, const Tensor<T>& ref);
template <class T>
MetricRecord evaluate_single(const std::string& name, const Tensor<T>& image);

} // namespace dgnet
