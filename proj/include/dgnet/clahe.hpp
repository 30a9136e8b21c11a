#pragma once

#include <span>
#include <vector>

#include "dgnet/tensor.hpp"

namespace dgnet {

enum class ClaheBlend {
    Bilinear, ///< standard CLAHE: blend the four nearest tile mappings
    None,     ///< each pixel uses its own tile's mapping (split / equalize / concat / clip)
};

struct ClaheConfig {
    int tiles = 8;           ///< tiles per axis
    int bins = 256;          ///< histogram bins over [0, 1]
    double clip_limit = 2.0; ///< multiple of the mean bin height
    ClaheBlend blend = ClaheBlend::Bilinear;

    void validate() const;
};

/// Equalization lookup of one tile.
///
/// Pixels are binned linearly: a value between two bin centers splits its unit
/// count between them. The clipped excess is spread uniformly over all bins and
/// bin k maps to the mid-rank (CDF(k-1) + CDF(k)) / 2. Lookups interpolate
/// between bin centers the same way.
///
/// Equalizing a tile whose pixels all share one value would send that value to
/// rank 0.5 (or, after clipping, close to it). Such a tile gets the identity
/// mapping instead, so constant images are fixed points.
class TileMapping {
public:
    TileMapping(std::span<const double> values, const ClaheConfig& config);

    double operator()(double value) const;
    std::span<const double> table() const { return table_; }
    bool identity() const { return identity_; }

private:
    std::vector<double> table_;
    bool identity_ = false;
};

/// Row (or column) extent of tile i out of count along an axis of length size.
struct TileSpan {
    int begin = 0;
    int end = 0;
    double center() const { return 0.5 * (begin + end - 1); }
};
TileSpan tile_span(int size, int count, int index);

/// Contrast-limited adaptive histogram equalization of every (image, channel)
/// plane independently. Inputs are clamped to [0, 1]; the result is in [0, 1]
/// and never participates in autodiff. NaN or infinite inputs raise
/// ValidationError.
template <class T>
Tensor<T> clahe(const Tensor<T>& image, const ClaheConfig& config);

/// CLAHE target built from a prediction. The prediction must already be
/// detached; a tape-attached tensor is rejected with UsageError.
template <class T>
Tensor<T> make_pseudo_label(const Tensor<T>& prediction, const ClaheConfig& config);

} // namespace dgnet
