#pragma once

#include <string>

#include "glfeat/tensor.hpp"

namespace glfeat {

// RGB image as a 3-channel feature map with values in [0, 1].
using Image = FeatureMap<float>;

Image make_image(int height, int width);

// 8-bit PNG/JPEG/... through OpenCV; throws DataError when unreadable.
Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& image);

// Rounds every value to the nearest 8-bit level, clamped to [0, 1].
void quantize_8bit(Image& image);

// Bilinear sample at continuous pixel coordinates (pixel centres at
// integers) with mirrored borders.
void sample_bilinear(const Image& image, double x, double y, float rgb[3]);

struct PaddedImage {
  Image image;
  int offset_x = 0;  // original (0, 0) lands at (offset_x, offset_y)
  int offset_y = 0;
  int original_width = 0;
  int original_height = 0;
};

// Symmetric zero padding up to the next multiple of `multiple`; any odd
// remainder goes to the right/bottom.
PaddedImage pad_to_multiple(const Image& image, int multiple);

}  // namespace glfeat
