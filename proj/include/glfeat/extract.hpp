#pragma once

#include "glfeat/image.hpp"
#include "glfeat/model.hpp"
#include "glfeat/sampling.hpp"

namespace glfeat {

struct ExtractStats {
  int padded_width = 0;
  int padded_height = 0;
  int dropped_padding = 0;    // NMS survivors inside the zero padding
  int dropped_zero_norm = 0;  // keypoints whose descriptor could not be normalized
};

// Pads the image to multiples of 32, runs the network, keeps NMS maxima that
// fall inside the original frame, and reports them in original coordinates.
sampling::FeatureSet extract_features(const model::GLFeatNet& net,
                                      const ParameterStore<float>& params, const Image& image,
                                      const sampling::NmsOptions& nms,
                                      ExtractStats* stats = nullptr);

}  // namespace glfeat
