#pragma once

#include <filesystem>
#include <vector>

#include "dgnet/tensor.hpp"

namespace dgnet {

/// 8-bit RGB PNG or JPEG as (1, 3, H, W) with values byte / 255.
/// Throws IoError naming the path when the file is missing or unreadable.
Tensor<float> load_image(const std::filesystem::path& path);

/// Writes (1, 3, H, W) clamped to [0, 1] and rounded to 8 bits. The format
/// follows the extension.
void save_image(const std::filesystem::path& path, const Tensor<float>& image);

/// Bilinear resampling with aligned corners: output pixel i samples input
/// coordinate i * (in - 1) / (out - 1). Each output is a convex combination of
/// inputs. Throws ConfigError for a non-positive target side.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, int height, int width);
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, int size)
{
    return resize_bilinear(image, size, size);
}

/// Central height x width window.
template <class T>
Tensor<T> center_crop(const Tensor<T>& image, std::int64_t height, std::int64_t width);

/// Replicate-pads the bottom and right edges up to the next multiple of `multiple`.
template <class T>
Tensor<T> pad_to_multiple(const Tensor<T>& image, int multiple);

/// Top-left height x width window.
template <class T>
Tensor<T> crop_top_left(const Tensor<T>& image, std::int64_t height, std::int64_t width);

/// Concatenates single images of equal shape along the batch axis.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& images);

/// Image n of a batch.
template <class T>
Tensor<T> batch_item(const Tensor<T>& batch, std::int64_t n);

} // namespace dgnet
