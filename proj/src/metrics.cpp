#include "locunc/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "locunc/match.hpp"
#include "locunc/numeric.hpp"

namespace locunc {

namespace {

void require_pairs(std::span<const MatchedPair> pairs, const char* what) {
  if (pairs.empty()) throw DomainError(std::string(what) + ": no pairs");
}

double positive_sigma(const MatchedPair& p, int c, const char* what) {
  const double s = p.detection.box.coords[c].sd;
  if (!(s > 0)) throw DomainError(std::string(what) + ": zero sigma");
  return s;
}

template <typename F>
double item_mean(std::span<const MatchedPair> pairs, F&& f) {
  CompensatedSum acc;
  for (const auto& p : pairs) {
    for (int c = 0; c < kNumCoords; ++c) acc += f(p, c);
  }
  return acc.value() / (4.0 * static_cast<double>(pairs.size()));
}

}  // namespace

std::string_view to_string(EceVariant v) {
  return v == EceVariant::kCentralInterval ? "central-interval" : "one-sided-cdf";
}

double ece(std::span<const MatchedPair> pairs, const EceOptions& options) {
  require_pairs(pairs, "ece");
  if (options.levels < 1) throw DomainError("ece: need at least one level");
  std::vector<double> u;
  u.reserve(pairs.size() * 4);
  for (const auto& p : pairs) {
    const auto err = p.signed_error();
    for (int c = 0; c < kNumCoords; ++c) {
      const double z = err[c] / positive_sigma(p, c, "ece");
      u.push_back(options.variant == EceVariant::kCentralInterval ? std::erf(std::abs(z) / std::numbers::sqrt2)
                                                                  : 0.5 * std::erfc(-z / std::numbers::sqrt2));
    }
  }
  std::sort(u.begin(), u.end());
  CompensatedSum acc;
  for (int j = 1; j <= options.levels; ++j) {
    const double level = static_cast<double>(j) / options.levels;
    const auto below = std::upper_bound(u.begin(), u.end(), level) - u.begin();
    acc += std::abs(level - static_cast<double>(below) / static_cast<double>(u.size()));
  }
  return acc.value() / options.levels;
}

double nll(std::span<const MatchedPair> pairs) {
  require_pairs(pairs, "nll");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  return item_mean(pairs, [&](const MatchedPair& p, int c) {
    const double s = positive_sigma(p, c, "nll");
    const double d = p.residual[c];
    return 0.5 * (d * d / (s * s) + std::log(s * s) + log2pi);
  });
}

double rmsue(std::span<const MatchedPair> pairs) {
  require_pairs(pairs, "rmsue");
  return std::sqrt(item_mean(pairs, [](const MatchedPair& p, int c) {
    const double d = p.residual[c] - p.detection.box.coords[c].sd;
    return d * d;
  }));
}

double maue(std::span<const MatchedPair> pairs) {
  require_pairs(pairs, "maue");
  return item_mean(pairs,
                   [](const MatchedPair& p, int c) { return std::abs(p.residual[c] - p.detection.box.coords[c].sd); });
}

double sharpness(std::span<const MatchedPair> pairs) {
  require_pairs(pairs, "sharpness");
  return item_mean(pairs, [](const MatchedPair& p, int c) {
    const double s = p.detection.box.coords[c].sd;
    return s * s;
  });
}

double rmse(std::span<const MatchedPair> pairs) {
  require_pairs(pairs, "rmse");
  return std::sqrt(item_mean(pairs, [](const MatchedPair& p, int c) { return p.residual[c] * p.residual[c]; }));
}

double mean_iou(std::span<const MatchedPair> pairs) {
  require_pairs(pairs, "mean_iou");
  CompensatedSum acc;
  for (const auto& p : pairs) acc += p.iou;
  return acc.value() / static_cast<double>(pairs.size());
}

double coverage(std::span<const MatchedPair> pairs, double k) {
  require_pairs(pairs, "coverage");
  std::size_t inside = 0;
  for (const auto& p : pairs) {
    for (int c = 0; c < kNumCoords; ++c) inside += p.residual[c] <= k * p.detection.box.coords[c].sd;
  }
  return static_cast<double>(inside) / (4.0 * static_cast<double>(pairs.size()));
}

MetricReport evaluate(std::span<const MatchedPair> pairs, const EceOptions& ece_options) {
  MetricReport r;
  r.pairs = pairs.size();
  r.items = 4 * pairs.size();
  r.ece_options = ece_options;
  r.rmse = rmse(pairs);
  r.miou = mean_iou(pairs);
  r.nll = nll(pairs);
  r.rmsue = rmsue(pairs);
  r.maue = maue(pairs);
  r.ece = ece(pairs, ece_options);
  r.sharpness = sharpness(pairs);
  r.coverage_1sigma = coverage(pairs, 1.0);
  return r;
}

double sigma_obj(const Detection& d) {
  const auto& b = d.box.coords;
  return (b[0].sd + b[1].sd + b[2].sd + b[3].sd) / 4.0;
}

std::string_view to_string(Conditioning c) {
  switch (c) {
    case Conditioning::kArea: return "area";
    case Conditioning::kOcclusion: return "occlusion";
    case Conditioning::kQuality: return "quality";
    case Conditioning::kIou: return "iou";
    case Conditioning::kRmsePerObject: return "rmse";
  }
  return "?";
}

Conditioning parse_conditioning(std::string_view s) {
  for (auto c : {Conditioning::kArea, Conditioning::kOcclusion, Conditioning::kQuality, Conditioning::kIou,
                 Conditioning::kRmsePerObject}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown conditioning variable '" + std::string(s) + "'");
}

namespace {

double conditioning_value(const MatchedPair& p, Conditioning by) {
  switch (by) {
    case Conditioning::kArea: return p.truth.area();
    case Conditioning::kOcclusion: return p.truth.occlusion;
    case Conditioning::kQuality:
      if (!p.detection.quality) throw Error("correlate: detections carry no quality column");
      return *p.detection.quality;
    case Conditioning::kIou: return p.iou;
    case Conditioning::kRmsePerObject: {
      double s = 0;
      for (double r : p.residual) s += r * r;
      return std::sqrt(s / 4.0);
    }
  }
  return 0;
}

GroupStats stats_of(std::span<const double> v) {
  GroupStats g;
  g.count = v.size();
  CompensatedSum sum;
  for (double x : v) sum += x;
  g.mean = sum.value() / static_cast<double>(v.size());
  if (v.size() > 1) {
    CompensatedSum sq;
    for (double x : v) sq += (x - g.mean) * (x - g.mean);
    g.sd = std::sqrt(sq.value() / static_cast<double>(v.size() - 1));
  }
  return g;
}

}  // namespace

BinnedCorrelation correlate(std::span<const MatchedPair> pairs, Conditioning by, int bins) {
  require_pairs(pairs, "correlate");
  if (bins < 1) throw DomainError("correlate: need at least one bin");
  BinnedCorrelation out;
  out.by = by;

  std::vector<double> value(pairs.size()), sig(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    value[i] = conditioning_value(pairs[i], by);
    sig[i] = sigma_obj(pairs[i].detection);
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });

  std::vector<std::vector<std::size_t>> members;
  if (by == Conditioning::kOcclusion) {
    std::map<double, std::vector<std::size_t>> levels;
    for (std::size_t i : order) levels[value[i]].push_back(i);
    for (auto& [lvl, idx] : levels) members.push_back(std::move(idx));
  } else {
    const std::size_t n = order.size();
    const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(bins), n);
    members.resize(b);
    for (std::size_t r = 0; r < n; ++r) members[r * b / n].push_back(order[r]);
  }

  for (const auto& idx : members) {
    std::vector<double> s, v;
    for (std::size_t i : idx) {
      s.push_back(sig[i]);
      v.push_back(value[i]);
    }
    const auto st = stats_of(s);
    CorrelationBin bin;
    bin.lo = *std::min_element(v.begin(), v.end());
    bin.hi = *std::max_element(v.begin(), v.end());
    bin.center = stats_of(v).mean;
    bin.count = st.count;
    bin.mean = st.mean;
    bin.sd = st.sd;
    out.bins.push_back(bin);
  }
  for (const auto& b : out.bins) out.normalizer = std::max(out.normalizer, b.mean);
  for (auto& b : out.bins) b.normalized_mean = out.normalizer > 0 ? b.mean / out.normalizer : 0.0;
  return out;
}

std::optional<GroupStats> sigma_obj_stats(std::span<const MatchedPair> pairs) {
  if (pairs.empty()) return std::nullopt;
  std::vector<double> s;
  s.reserve(pairs.size());
  for (const auto& p : pairs) s.push_back(sigma_obj(p.detection));
  return stats_of(s);
}

std::vector<MdCdRow> md_cd_uncertainty(std::span<const MatchedPair> pairs, std::span<const double> thresholds) {
  std::vector<MdCdRow> rows;
  for (double t : thresholds) {
    const auto split = split_by_iou_threshold(pairs, t);
    rows.push_back({t, sigma_obj_stats(split.misdetections), sigma_obj_stats(split.correct)});
  }
  return rows;
}

SizeBucket size_bucket(double area) {
  if (area < 32.0 * 32.0) return SizeBucket::kSmall;
  if (area < 96.0 * 96.0) return SizeBucket::kMedium;
  return SizeBucket::kLarge;
}

std::string_view to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::kSmall: return "small";
    case SizeBucket::kMedium: return "medium";
    case SizeBucket::kLarge: return "large";
  }
  return "?";
}

std::array<std::vector<MatchedPair>, 3> split_by_size(std::span<const MatchedPair> pairs) {
  std::array<std::vector<MatchedPair>, 3> out;
  for (const auto& p : pairs) out[static_cast<int>(size_bucket(p.truth.area()))].push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// reports

namespace {

using nlohmann::ordered_json;

ordered_json stats_json(const std::optional<GroupStats>& g) {
  if (!g) return nullptr;
  return {{"count", g->count}, {"mean", g->mean}, {"sd", g->sd}};
}

}  // namespace

std::string to_json(const MetricReport& r) {
  ordered_json j;
  j["ece_variant"] = to_string(r.ece_options.variant);
  j["ece_levels"] = r.ece_options.levels;
  j["nll_includes_log_2pi"] = true;
  j["pairs"] = r.pairs;
  j["items"] = r.items;
  j["rmse"] = r.rmse;
  j["miou"] = r.miou;
  j["nll"] = r.nll;
  j["rmsue"] = r.rmsue;
  j["maue"] = r.maue;
  j["ece"] = r.ece;
  j["sharpness"] = r.sharpness;
  j["coverage_1sigma"] = r.coverage_1sigma;
  return j.dump(2) + "\n";
}

std::string to_text(const MetricReport& r) {
  std::ostringstream out;
  out << "# ece: " << to_string(r.ece_options.variant) << ", " << r.ece_options.levels
      << " levels; nll includes log(2 pi)\n";
  out << "# pairs " << r.pairs << ", items " << r.items << "\n";
  const std::pair<const char*, double> rows[] = {
      {"rmse", r.rmse},   {"miou", r.miou}, {"nll", r.nll},           {"rmsue", r.rmsue},
      {"maue", r.maue},   {"ece", r.ece},   {"sharpness", r.sharpness}, {"coverage_1sigma", r.coverage_1sigma}};
  for (const auto& [name, v] : rows) out << std::left << std::setw(18) << name << std::setprecision(6) << v << "\n";
  return out.str();
}

std::string to_json(const BinnedCorrelation& c) {
  ordered_json j;
  j["by"] = to_string(c.by);
  j["normalizer"] = c.normalizer;
  j["bins"] = ordered_json::array();
  for (const auto& b : c.bins) {
    j["bins"].push_back({{"lo", b.lo},
                         {"hi", b.hi},
                         {"center", b.center},
                         {"count", b.count},
                         {"mean", b.mean},
                         {"sd", b.sd},
                         {"normalized_mean", b.normalized_mean}});
  }
  return j.dump(2) + "\n";
}

std::string to_csv(const BinnedCorrelation& c) {
  std::ostringstream out;
  out << "bin_center,mean,sd,normalized_mean\n";
  for (const auto& b : c.bins) {
    out << format_double(b.center) << "," << format_double(b.mean) << "," << format_double(b.sd) << ","
        << format_double(b.normalized_mean) << "\n";
  }
  return out.str();
}

std::string to_json(std::span<const MdCdRow> rows) {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    j.push_back({{"threshold", r.threshold},
                 {"misdetections", stats_json(r.misdetections)},
                 {"correct", stats_json(r.correct)}});
  }
  return j.dump(2) + "\n";
}

std::string to_csv(std::span<const MdCdRow> rows) {
  std::ostringstream out;
  out << "threshold,md_count,md_mean,md_sd,cd_count,cd_mean,cd_sd\n";
  auto cell = [&](const std::optional<GroupStats>& g) {
    if (g) {
      out << g->count << "," << format_double(g->mean) << "," << format_double(g->sd);
    } else {
      out << "0,,";
    }
  };
  for (const auto& r : rows) {
    out << format_double(r.threshold) << ",";
    cell(r.misdetections);
    out << ",";
    cell(r.correct);
    out << "\n";
  }
  return out.str();
}

}  // namespace locunc
