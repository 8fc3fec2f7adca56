#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "locunc/detection.hpp"

namespace locunc {

// All uncertainty metrics pool the four coordinates of every pair into 4N
// (residual, sigma) items. mIoU is averaged over pairs.

enum class EceVariant {
  // Level p counts items inside the central p-interval of N(mu, sigma^2),
  // i.e. 2 * Phi(|z|) - 1 <= p.
  kCentralInterval,
  // Level p counts items with Phi(z) <= p.
  kOneSidedCdf,
};

struct EceOptions {
  int levels = 10;
  EceVariant variant = EceVariant::kCentralInterval;
};

std::string_view to_string(EceVariant v);

/// (1 / L) * sum_j |p_j - phat_j| over p_j = j / L, j = 1..L.
double ece(std::span<const MatchedPair> pairs, const EceOptions& options = {});

/// Mean over items of [Delta^2 / sigma^2 + log sigma^2 + log 2 pi] / 2.
double nll(std::span<const MatchedPair> pairs);
double rmsue(std::span<const MatchedPair> pairs);
double maue(std::span<const MatchedPair> pairs);
/// Mean predicted variance.
double sharpness(std::span<const MatchedPair> pairs);
double rmse(std::span<const MatchedPair> pairs);
double mean_iou(std::span<const MatchedPair> pairs);
/// Fraction of items with |Delta| <= k * sigma.
double coverage(std::span<const MatchedPair> pairs, double k = 1.0);

struct MetricReport {
  double rmse = 0;
  double miou = 0;
  double nll = 0;
  double rmsue = 0;
  double maue = 0;
  double ece = 0;
  double sharpness = 0;
  double coverage_1sigma = 0;
  std::size_t pairs = 0;
  std::size_t items = 0;
  EceOptions ece_options;
};

MetricReport evaluate(std::span<const MatchedPair> pairs, const EceOptions& ece_options = {});

/// Average of the four coordinate SDs of a detection.
double sigma_obj(const Detection& d);

enum class Conditioning { kArea, kOcclusion, kQuality, kIou, kRmsePerObject };
std::string_view to_string(Conditioning c);
Conditioning parse_conditioning(std::string_view s);  // area, occlusion, quality, iou, rmse

struct CorrelationBin {
  double lo = 0;      // smallest conditioning value in the bin
  double hi = 0;      // largest
  double center = 0;  // mean conditioning value
  std::size_t count = 0;
  double mean = 0;  // of sigma_obj
  double sd = 0;
  double normalized_mean = 0;  // mean / largest bin mean
};

struct BinnedCorrelation {
  Conditioning by = Conditioning::kArea;
  std::vector<CorrelationBin> bins;
  double normalizer = 0;
};

/// Quantile (equal-count, rank based) bins of the conditioning variable;
/// occlusion bins by discrete level. Ties at a quantile boundary are split
/// by input order.
BinnedCorrelation correlate(std::span<const MatchedPair> pairs, Conditioning by, int bins);

struct GroupStats {
  std::size_t count = 0;
  double mean = 0;
  double sd = 0;
};

/// Sample mean and SD (n - 1); std::nullopt when empty.
std::optional<GroupStats> sigma_obj_stats(std::span<const MatchedPair> pairs);

struct MdCdRow {
  double threshold = 0;
  std::optional<GroupStats> misdetections;  // iou <= threshold
  std::optional<GroupStats> correct;
};

std::vector<MdCdRow> md_cd_uncertainty(std::span<const MatchedPair> pairs, std::span<const double> thresholds);

// Area buckets: small < 32^2, medium < 96^2, large otherwise (ground-truth area).
enum class SizeBucket { kSmall = 0, kMedium = 1, kLarge = 2 };
SizeBucket size_bucket(double area);
std::string_view to_string(SizeBucket b);
std::array<std::vector<MatchedPair>, 3> split_by_size(std::span<const MatchedPair> pairs);

std::string to_json(const MetricReport& report);
std::string to_text(const MetricReport& report);
std::string to_json(const BinnedCorrelation& corr);
/// bin_center,mean,sd,normalized_mean
std::string to_csv(const BinnedCorrelation& corr);
std::string to_json(std::span<const MdCdRow> rows);
std::string to_csv(std::span<const MdCdRow> rows);

}  // namespace locunc
