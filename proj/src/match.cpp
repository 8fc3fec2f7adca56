#include "locunc/match.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>

#include "locunc/error.hpp"

namespace locunc {

double iou(const Corners& a, const Corners& b) {
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  if (ih <= 0 || iw <= 0) return 0.0;
  const double inter = ih * iw;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double box_mse(const Detection& det, const GroundTruth& gt) {
  const auto t = gt.corners.center_size();
  double s = 0;
  for (int i = 0; i < 4; ++i) {
    const double d = t[i] - det.box.coords[i].mean;
    s += d * d;
  }
  return s / 4.0;
}

MatchedPair make_pair(const Detection& det, const GroundTruth& gt) {
  MatchedPair p{det, gt, {}, 0.0};
  const auto e = p.signed_error();
  for (int i = 0; i < 4; ++i) p.residual[i] = std::abs(e[i]);
  p.iou = iou(det.box.corners(), gt.corners);
  return p;
}

MatchResult match_by_mse(std::span<const Detection> detections, std::span<const GroundTruth> truths) {
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> images;
  for (std::size_t i = 0; i < detections.size(); ++i) images[detections[i].image_id].first.push_back(i);
  for (std::size_t j = 0; j < truths.size(); ++j) images[truths[j].image_id].second.push_back(j);

  MatchResult result;
  for (const auto& [image, members] : images) {
    const auto& [dets, gts] = members;
    // candidates carry input indices so ties resolve by detection, then truth, position
    std::vector<std::tuple<double, std::size_t, std::size_t, std::size_t, std::size_t>> candidates;
    candidates.reserve(dets.size() * gts.size());
    for (std::size_t a = 0; a < dets.size(); ++a) {
      for (std::size_t b = 0; b < gts.size(); ++b) {
        candidates.emplace_back(box_mse(detections[dets[a]], truths[gts[b]]), dets[a], gts[b], a, b);
      }
    }
    std::sort(candidates.begin(), candidates.end());

    std::vector<bool> det_used(dets.size(), false);
    std::vector<bool> gt_used(gts.size(), false);
    std::size_t remaining = std::min(dets.size(), gts.size());
    for (const auto& [mse, d, g, a, b] : candidates) {
      if (remaining == 0) break;
      if (det_used[a] || gt_used[b]) continue;
      det_used[a] = gt_used[b] = true;
      result.pairs.push_back(make_pair(detections[d], truths[g]));
      --remaining;
    }
    for (std::size_t a = 0; a < dets.size(); ++a) {
      if (!det_used[a]) result.unmatched_detections.push_back(detections[dets[a]]);
    }
    for (std::size_t b = 0; b < gts.size(); ++b) {
      if (!gt_used[b]) result.unmatched_truths.push_back(truths[gts[b]]);
    }
  }
  return result;
}

IouSplit split_by_iou_threshold(std::span<const MatchedPair> pairs, double threshold) {
  if (!(threshold >= 0 && threshold <= 1)) throw DomainError("IoU threshold must lie in [0, 1]");
  IouSplit out;
  for (const auto& p : pairs) (p.iou <= threshold ? out.misdetections : out.correct).push_back(p);
  return out;
}

}  // namespace locunc
