#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "locunc/anchor.hpp"
#include "locunc/detection.hpp"
#include "locunc/io.hpp"

namespace locunc {

/// Synthetic scenario with known per-object noise.
///
/// For an object of class c, size (h, w) and occlusion level o, the true SD of
/// coordinate j is
///   base_sigma[j] * dim_j * exp(jitter * N(0,1)) * (area / reference_area)^-area_exponent
///     * occlusion_multiplier^o * (1 + quality_coupling * q)
/// where dim_j is the object height (y, h) or width (x, w) when
/// `relative_sigma` is set and 1 otherwise, and q ~ U(0, 1) is the emitted
/// quality score. The detection is GT + N(0, sd_true^2) per coordinate.
///
/// Reported SDs are sd_true / k, with k per class when `class_k` is non-empty.
/// With miscalibration_power p != 1 the relative reported SD is additionally
/// distorted as r_ref * (r / r_ref)^p, which ties the miscalibration to the
/// relative noise level instead of the pixel one.
struct SynthConfig {
  std::uint64_t seed = 1;
  int n_images = 100;
  int objects_per_image = 10;
  std::vector<double> class_frequencies{1.0};  // relative, normalised internally
  int image_height = 512;
  int image_width = 1024;

  // Object sizes: side sqrt(h * w) log-uniform in [min_size, max_size],
  // aspect w / h log-uniform in [1 / max_aspect, max_aspect].
  double min_size = 12;
  double max_size = 256;
  double max_aspect = 2;

  std::array<double, 4> base_sigma{0.05, 0.05, 0.05, 0.05};
  bool relative_sigma = true;
  double jitter = 0.3;
  double area_exponent = 0;
  double reference_area = 96.0 * 96.0;
  std::vector<double> occlusion_probs{1.0};  // P(level = 0, 1, ...), must sum to 1
  double occlusion_multiplier = 1;
  double quality_coupling = 0;
  bool emit_quality = true;

  double k = 1;
  std::vector<double> class_k;
  double miscalibration_power = 1;
  double miscalibration_reference = 0.05;

  double surplus_rate = 0;  // P(an object spawns an extra unmatched detection)
  double missed_rate = 0;   // P(an object gets no detection)

  int class_count() const { return static_cast<int>(class_frequencies.size()); }
  void validate() const;
};

struct TruthNoise {
  std::string image_id;
  std::size_t detection_index = 0;  // row in the detections file
  std::array<double, 4> sd_true{};
};

struct SynthData {
  std::vector<GroundTruth> truths;
  std::vector<Detection> detections;
  std::vector<TruthNoise> noise;  // one per detection, same order
};

/// Deterministic in config.seed. ConfigError on an invalid or infeasible
/// configuration (objects that cannot fit in the image).
SynthData generate(const SynthConfig& config);

/// # locunc-truth-noise v1
/// image_id detection_index sd_y sd_x sd_h sd_w
void write_truth_noise(std::ostream& out, const std::vector<TruthNoise>& noise);
std::vector<TruthNoise> parse_truth_noise(std::istream& in);

/// Anchor-space view of image-space detections: each detection is attached to
/// best_anchor_index() and its moments encoded with encode_moments().
std::vector<AnchorDetection> to_anchor_space(const std::vector<Detection>& detections,
                                             const AnchorGridConfig& grid);

/// Writes gt.txt, detections.txt and truth_noise.txt into `dir`; with a grid
/// also detections_anchor.txt and anchors.cfg.
void write_synth(const std::filesystem::path& dir, const SynthData& data,
                 const std::optional<AnchorGridConfig>& grid = std::nullopt);

}  // namespace locunc
