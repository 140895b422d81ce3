#include "glfeat/extract.hpp"

#include <vector>

namespace glfeat {

sampling::FeatureSet extract_features(const model::GLFeatNet& net,
                                      const ParameterStore<float>& params, const Image& image,
                                      const sampling::NmsOptions& nms, ExtractStats* stats) {
  const PaddedImage padded = pad_to_multiple(image, 32);
  const auto out = net.forward(padded.image, params);
  const auto score = sampling::to_score_map(out.score);

  sampling::NmsOptions all = nms;
  all.max_keypoints = -1;
  const auto candidates = sampling::nms_detect(score, all);

  ExtractStats st;
  st.padded_width = padded.image.width;
  st.padded_height = padded.image.height;
  std::vector<sampling::Pixel> kept;
  for (const auto& p : candidates) {
    const int x = p.x - padded.offset_x;
    const int y = p.y - padded.offset_y;
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) {
      ++st.dropped_padding;
      continue;
    }
    if (!(out.raw_norm.at(0, p.y, p.x) > 0.0f)) {
      ++st.dropped_zero_norm;
      continue;
    }
    if (nms.max_keypoints >= 0 && static_cast<int>(kept.size()) >= nms.max_keypoints) break;
    kept.push_back(p);
  }
  sampling::FeatureSet fs = sampling::gather_features(out, kept);
  for (Eigen::Index i = 0; i < fs.keypoints.rows(); ++i) {
    fs.keypoints(i, 0) -= static_cast<float>(padded.offset_x);
    fs.keypoints(i, 1) -= static_cast<float>(padded.offset_y);
  }
  if (stats) *stats = st;
  return fs;
}

}  // namespace glfeat
