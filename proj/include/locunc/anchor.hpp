#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "locunc/box.hpp"

namespace locunc {

struct Anchor {
  double y = 0;  // center, px
  double x = 0;
  double h = 1;  // size, px, > 0
  double w = 1;

  void validate() const;
};

/// Multi-level anchor grid. Every stride must divide both image dimensions.
struct AnchorGridConfig {
  int image_height = 512;
  int image_width = 1024;
  std::vector<int> strides{8, 16, 32, 64, 128};
  int scales_per_cell = 3;
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};  // width / height
  double base_scale = 4.0;

  int anchors_per_cell() const { return scales_per_cell * static_cast<int>(aspect_ratios.size()); }
  std::size_t anchor_count() const;
  void validate() const;
};

/// Key = value text, keys named exactly as the struct fields; lists are
/// comma separated. Unknown keys are a ConfigError.
AnchorGridConfig parse_anchor_config(std::string_view text);
AnchorGridConfig read_anchor_config(const std::filesystem::path& path);
std::string to_text(const AnchorGridConfig& config);

/// Level-major, then row-major over cells, then scale-major / ratio-minor
/// within a cell.
std::vector<Anchor> build_anchor_grid(const AnchorGridConfig& config);

/// Anchor-relative offsets of a ground-truth box (means only, zero variance).
GaussianBox4 encode(const Corners& gt, const Anchor& anchor);

/// Offset distribution whose log-normal decode reproduces `box` exactly
/// (moment matching in log space for the sizes). Inverse of decode with
/// DecodeVariant::log_normal() and no train correction.
GaussianBox4 encode_moments(const DecodedBox& box, const Anchor& anchor);

/// Index into build_anchor_grid(config) of the anchor in the cell containing
/// the box center whose size best matches the box (L1 distance of log sizes).
std::size_t best_anchor_index(const AnchorGridConfig& config, const Corners& box);

/// Anchor at a grid index without materialising the grid.
Anchor anchor_at(const AnchorGridConfig& config, std::size_t index);

enum class DecodeKind { kBaseline, kLogNormal, kChain, kSampling, kFalseDecoding };

struct DecodeVariant {
  DecodeKind kind = DecodeKind::kLogNormal;
  long long samples = 0;  // kSampling only
  std::uint64_t seed = 0;  // kSampling only

  static DecodeVariant baseline() { return {DecodeKind::kBaseline}; }
  static DecodeVariant log_normal() { return {DecodeKind::kLogNormal}; }
  static DecodeVariant chain() { return {DecodeKind::kChain}; }
  static DecodeVariant sampling(long long k, std::uint64_t seed) { return {DecodeKind::kSampling, k, seed}; }
  static DecodeVariant false_decoding() { return {DecodeKind::kFalseDecoding}; }

  /// Parses "baseline", "lnorm", "chain", "samp:K", "falsedec".
  static DecodeVariant parse(std::string_view name, std::uint64_t seed = 0);
  std::string name() const;
  void validate() const;
};

/// Offsets -> image-space moments.
///
/// Centers are linear in the offsets, so every uncertainty-aware variant gives
/// mean = mu * a + c and sd = sigma * a. Sizes go through exp(.) * a:
///   kLogNormal     log-normal mean / SD
///   kChain         the [Exp, Affine(a, 0)] transform chain engine
///   kSampling      Monte Carlo with `samples` draws
///   kFalseDecoding sigma decoded like a mean: sd = exp(sigma) * a
///   kBaseline      sigma ignored, sd = 0
/// With `train_correction`, size means are shifted by -sigma^2 / 2 before Exp,
/// which cancels the log-normal enlargement of the mean.
DecodedBox decode(const GaussianBox4& offsets, const Anchor& anchor, const DecodeVariant& variant,
                  bool train_correction = false);

/// Batch decode. Sampling seeds are derived per item from variant.seed.
std::vector<DecodedBox> decode_batch(std::span<const GaussianBox4> offsets, std::span<const Anchor> anchors,
                                     const DecodeVariant& variant, bool train_correction = false);

/// Linear rescale from the network input size to the original image size.
DecodedBox rescale(const DecodedBox& box, double from_height, double from_width, double to_height,
                   double to_width);

struct LossItem {
  GaussianBox4 prediction;
  std::array<double, 4> target{};
  bool foreground = false;
};

/// Loss-attenuation objective over a batch of anchors:
///   1 / (8 N_pos) * sum_i m_i sum_j [ (y*_ij - mu_ij)^2 / var_ij + log var_ij ]
/// With train_correction the size means become mu + var / 2.
double nll_loss(std::span<const LossItem> batch, bool train_correction = false);

}  // namespace locunc
