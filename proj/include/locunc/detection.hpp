#pragma once

#include <array>
#include <optional>
#include <string>

#include "locunc/box.hpp"

namespace locunc {

/// One post-NMS detection in image space.
struct Detection {
  std::string image_id;
  int class_id = 0;
  DecodedBox box;
  std::optional<double> score;
  std::optional<double> quality;  // precomputed per-detection image-quality score
};

struct GroundTruth {
  std::string image_id;
  int class_id = 0;
  Corners corners;
  int occlusion = 0;
  double truncation = 0;

  double area() const { return corners.area(); }
};

/// Detection joined to its ground truth. residual = |y* - mu| per coordinate
/// in (y, x, h, w) space.
struct MatchedPair {
  Detection detection;
  GroundTruth truth;
  std::array<double, 4> residual{};
  double iou = 0;

  /// y* - mu, keeping the sign.
  std::array<double, 4> signed_error() const {
    const auto t = truth.corners.center_size();
    std::array<double, 4> e{};
    for (int i = 0; i < 4; ++i) e[i] = t[i] - detection.box.coords[i].mean;
    return e;
  }
};

}  // namespace locunc
