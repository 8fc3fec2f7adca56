#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "locunc/detection.hpp"

namespace locunc {

// ---------------------------------------------------------------------------
// Ground truth: KITTI-style whitespace-separated records,
//   [image_id] class truncation occlusion xmin ymin xmax ymax [ignored...]
// image_id is present in a single indexed file and absent in per-image files
// (the file stem is the id). Profiles fix the class vocabulary and the valid
// occlusion levels.

struct GtProfile {
  std::string name;
  int max_occlusion = 2;
  std::vector<std::string> class_names;     // token -> index; integers are always accepted
  std::vector<std::string> ignored_classes; // records silently skipped
  bool alpha_column = false;                // raw KITTI: observation angle before the box
};

GtProfile kitti_profile();
GtProfile bdd_profile();
GtProfile generic_profile();
GtProfile profile_by_name(std::string_view name);  // kitti, kitti-raw, bdd, generic

struct Diagnostic {
  std::string file;
  int line = 0;
  std::string message;
};

struct GtReadResult {
  std::vector<GroundTruth> records;
  std::vector<Diagnostic> diagnostics;  // malformed lines (skipped) and profile warnings (kept)
};

/// `path` may be a single indexed file or a directory of per-image *.txt files.
GtReadResult read_ground_truth(const std::filesystem::path& path, const GtProfile& profile);
GtReadResult parse_ground_truth(std::istream& in, const GtProfile& profile,
                                const std::optional<std::string>& image_id = std::nullopt,
                                const std::string& file_label = "<stream>");
/// Indexed layout, integer class tokens.
void write_ground_truth(std::ostream& out, std::span<const GroundTruth> truths);

// ---------------------------------------------------------------------------
// Detections. First line:
//   # locunc-detections v1 space=<image|anchor> quality=<0|1>
// image space : image_id class_id score y x h w sd_y sd_x sd_h sd_w [quality]
// anchor space: image_id class_id score anchor mu_y mu_x mu_h mu_w sd_y sd_x sd_h sd_w [quality]
// score '-' when absent.

enum class CoordinateSpace { kImage, kAnchor };
std::string_view to_string(CoordinateSpace s);

struct AnchorDetection {
  std::string image_id;
  int class_id = 0;
  std::optional<double> score;
  std::size_t anchor_index = 0;
  GaussianBox4 offsets;
  std::optional<double> quality;
};

struct DetectionsFile {
  CoordinateSpace space = CoordinateSpace::kImage;
  bool has_quality = false;
  std::vector<Detection> detections;               // space == kImage
  std::vector<AnchorDetection> anchor_detections;  // space == kAnchor
};

void write_detections(std::ostream& out, std::span<const Detection> detections);
void write_anchor_detections(std::ostream& out, std::span<const AnchorDetection> detections);
DetectionsFile parse_detections(std::istream& in);
DetectionsFile read_detections_file(const std::filesystem::path& path);

/// FormatError when the header declares a different coordinate space.
std::vector<Detection> read_detections(const std::filesystem::path& path);
std::vector<AnchorDetection> read_anchor_detections(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Matched pairs (match output, calibrate / evaluate input). First line:
//   # locunc-pairs v1 quality=<0|1>
// columns: image_id class_id score y x h w sd_y sd_x sd_h sd_w [quality]
//          gt_class occlusion truncation ymin xmin ymax xmax
// Residuals and IoU are recomputed on read.

void write_pairs(std::ostream& out, std::span<const MatchedPair> pairs);
std::vector<MatchedPair> parse_pairs(std::istream& in);
std::vector<MatchedPair> read_pairs(const std::filesystem::path& path);

/// Surplus detections and missed ground truths:
///   # locunc-unmatched v1
///   det <image-space detection columns, quality '-' when absent>
///   gt  image_id class truncation occlusion xmin ymin xmax ymax
void write_unmatched(std::ostream& out, std::span<const Detection> detections,
                     std::span<const GroundTruth> truths);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace locunc
