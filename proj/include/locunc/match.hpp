#pragma once

#include <span>
#include <vector>

#include "locunc/detection.hpp"

namespace locunc {

double iou(const Corners& a, const Corners& b);

/// Mean squared error between the detection means and the ground truth,
/// both in (y, x, h, w) center/size space.
double box_mse(const Detection& det, const GroundTruth& gt);

MatchedPair make_pair(const Detection& det, const GroundTruth& gt);

struct MatchResult {
  std::vector<MatchedPair> pairs;
  std::vector<Detection> unmatched_detections;
  std::vector<GroundTruth> unmatched_truths;
};

/// Proximity-based allocation. Within each image, all (detection, truth)
/// candidates are visited in ascending MSE and accepted when both sides are
/// still free. Ties go to the lower detection index, then the lower truth
/// index (indices are positions in the input sequences). No score threshold
/// is applied. Pairs are returned grouped by image id (lexicographic), in
/// acceptance order within an image.
MatchResult match_by_mse(std::span<const Detection> detections, std::span<const GroundTruth> truths);

struct IouSplit {
  std::vector<MatchedPair> misdetections;  // iou <= threshold
  std::vector<MatchedPair> correct;        // iou >  threshold
};

IouSplit split_by_iou_threshold(std::span<const MatchedPair> pairs, double threshold);

}  // namespace locunc
