#include "glfeat/image.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "glfeat/errors.hpp"

namespace glfeat {

Image make_image(int height, int width) { return Image(3, height, width); }

Image load_image(const std::string& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DataError(fmt::format("cannot read image {}: {}", path, e.what()));
  }
  if (bgr.empty()) throw DataError(fmt::format("cannot read image {}", path));
  Image img = make_image(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;
    }
  }
  return img;
}

void save_png(const std::string& path, const Image& image) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path, bgr);
  } catch (const cv::Exception& e) {
    throw DataError(fmt::format("cannot write image {}: {}", path, e.what()));
  }
  if (!ok) throw DataError(fmt::format("cannot write image {}", path));
}

void quantize_8bit(Image& image) {
  image.data = image.data.unaryExpr([](float v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  });
}

namespace {

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

void sample_bilinear(const Image& image, double x, double y, float rgb[3]) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double ax = x - fx;
  const double ay = y - fy;
  const int x0 = mirror(static_cast<int>(fx), image.width);
  const int x1 = mirror(static_cast<int>(fx) + 1, image.width);
  const int y0 = mirror(static_cast<int>(fy), image.height);
  const int y1 = mirror(static_cast<int>(fy) + 1, image.height);
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - ax) * image.at(c, y0, x0) + ax * image.at(c, y0, x1);
    const double bot = (1 - ax) * image.at(c, y1, x0) + ax * image.at(c, y1, x1);
    rgb[c] = static_cast<float>((1 - ay) * top + ay * bot);
  }
}

PaddedImage pad_to_multiple(const Image& image, int multiple) {
  const int h = (image.height + multiple - 1) / multiple * multiple;
  const int w = (image.width + multiple - 1) / multiple * multiple;
  PaddedImage out;
  out.original_width = image.width;
  out.original_height = image.height;
  out.offset_x = (w - image.width) / 2;
  out.offset_y = (h - image.height) / 2;
  out.image = make_image(h, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        out.image.at(c, y + out.offset_y, x + out.offset_x) = image.at(c, y, x);
      }
    }
  }
  return out;
}

}  // namespace glfeat
