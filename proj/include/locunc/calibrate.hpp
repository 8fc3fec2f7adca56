#pragma once

#include <cmath>
#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "locunc/detection.hpp"

namespace locunc {

/// Monotone piecewise-linear map. Breakpoints strictly ascending, values
/// non-decreasing; evaluation interpolates linearly and clamps at both ends.
class IsotonicMap {
 public:
  IsotonicMap() = default;
  IsotonicMap(std::vector<double> breakpoints, std::vector<double> values);

  /// y = x on [lo, hi], clamped outside.
  static IsotonicMap identity(double lo, double hi);

  double operator()(double x) const;

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& values() const { return values_; }
  bool empty() const { return breakpoints_.empty(); }

  friend bool operator==(const IsotonicMap&, const IsotonicMap&) = default;

 private:
  std::vector<double> breakpoints_;
  std::vector<double> values_;
};

/// Pool-adjacent-violators on a sequence already ordered by the regressor.
/// Returns the non-decreasing fit minimising sum w_i (y_i - p_i)^2.
std::vector<double> pava(std::span<const double> y, std::span<const double> w);

/// Isotonic regression of y on x. Points sharing an x are pooled by weighted
/// mean first. Each pooled block becomes one breakpoint at its weighted mean
/// x carrying the block value; the map interpolates linearly between block
/// centers and is flat beyond the outermost ones.
IsotonicMap pava_fit(std::span<const double> x, std::span<const double> y, std::span<const double> w);

enum class CalibrationScheme { kIR, kIRPerCoord, kIRPerClass, kIRPerCoordClass, kFactor };
enum class CalibrationMode { kAbsolute, kRelative };
// Which box size normalises sigma and the residual in relative mode.
enum class SizeReference { kPredicted, kGroundTruth };
enum class FactorLoss { kNLL, kRMSUE, kMAUE };
enum class FactorOptimizer {
  kResilient,  // sign-based steps on log s, step grows x1.2 / halves on a sign flip
  kPlain,      // s <- s - lr * dL/ds on the raw loss
};
// Where per-class schemes take the class of a detection from.
enum class ClassSource { kGroundTruth, kPredicted };

std::string_view to_string(CalibrationScheme s);
std::string_view to_string(CalibrationMode m);
std::string_view to_string(FactorLoss l);
std::string_view to_string(SizeReference r);
CalibrationScheme parse_scheme(std::string_view s);  // ir, ir-pco, ir-cl, ir-pco-cl, fs
CalibrationMode parse_mode(std::string_view s);      // abs, rel
FactorLoss parse_loss(std::string_view s);           // nll, rmsue, maue

inline constexpr int kAnyCoord = -1;
inline constexpr int kAnyClass = -1;

struct GroupKey {
  int coord = kAnyCoord;
  int class_id = kAnyClass;
  auto operator<=>(const GroupKey&) const = default;
};

// E|X| = sigma * sqrt(2 / pi) for X ~ N(0, sigma^2); scaling |residual| by the
// reciprocal makes the identity map the fixed point of a calibrated model.
inline const double kGaussianAbsScale = std::sqrt(std::numbers::pi / 2.0);

struct CalibrationModel {
  CalibrationScheme scheme = CalibrationScheme::kIR;
  CalibrationMode mode = CalibrationMode::kAbsolute;
  SizeReference reference = SizeReference::kPredicted;
  double target_scale = kGaussianAbsScale;

  // Isotonic schemes. The global map {kAnyCoord, kAnyClass} is always present
  // and serves groups listed in `fallbacks` and classes unseen during fitting.
  std::map<GroupKey, IsotonicMap> maps;
  std::vector<GroupKey> fallbacks;

  // Factor scaling.
  double factor = 1.0;
  std::optional<FactorLoss> loss;

  /// Map used for (coordinate, class); `fell_back` is set when the scheme's
  /// own group is missing and the global map is used instead.
  const IsotonicMap& map_for(Coord c, int class_id, bool& fell_back) const;

  friend bool operator==(const CalibrationModel&, const CalibrationModel&) = default;
};

struct IsotonicOptions {
  double target_scale = kGaussianAbsScale;
  SizeReference reference = SizeReference::kPredicted;
  std::size_t min_group_size = 2;
};

CalibrationModel fit_isotonic(std::span<const MatchedPair> pairs, CalibrationScheme scheme, CalibrationMode mode,
                              const IsotonicOptions& options = {});

struct FactorOptions {
  int epochs = 100;
  double learning_rate = 0.1;
  FactorOptimizer optimizer = FactorOptimizer::kResilient;
  SizeReference reference = SizeReference::kPredicted;
};

/// Single scale s applied to every sigma, all four coordinates pooled.
CalibrationModel fit_factor(std::span<const MatchedPair> pairs, FactorLoss loss, CalibrationMode mode,
                            const FactorOptions& options = {});

/// Loss of scale s on (residual, sigma) items; NLL omits the log(2 pi) constant.
double factor_loss(std::span<const double> residuals, std::span<const double> sigmas, FactorLoss loss, double s);

struct ApplyResult {
  std::vector<Detection> detections;
  std::vector<bool> used_fallback;  // per detection
};

/// Replace every coordinate SD by its calibrated value; means are untouched.
/// `class_ids` supplies the class per detection for per-class schemes
/// (ground-truth classes at evaluation time, predicted classes otherwise).
ApplyResult apply(const CalibrationModel& model, std::span<const Detection> detections,
                  std::span<const int> class_ids);

/// Convenience: detections taken from pairs; classes from the truth
/// (kGroundTruth) or from the detection (kPredicted). Residuals and IoU are
/// unchanged because the means are.
std::vector<MatchedPair> apply_to_pairs(const CalibrationModel& model, std::span<const MatchedPair> pairs,
                                        ClassSource source = ClassSource::kGroundTruth);

/// Versioned text format; doubles are written shortest-round-trip so that
/// read(write(m)) == m bit for bit.
void write_model(std::ostream& out, const CalibrationModel& model);
CalibrationModel read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const CalibrationModel& model);
CalibrationModel load_model(const std::filesystem::path& path);

}  // namespace locunc
