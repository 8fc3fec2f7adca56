#include "locunc/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "locunc/numeric.hpp"

namespace locunc {

// ---------------------------------------------------------------------------
// IsotonicMap / PAVA

IsotonicMap::IsotonicMap(std::vector<double> breakpoints, std::vector<double> values)
    : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
  if (breakpoints_.size() != values_.size()) throw DomainError("IsotonicMap: size mismatch");
  if (breakpoints_.empty()) throw DomainError("IsotonicMap: no breakpoints");
  for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
    if (!(breakpoints_[i] > breakpoints_[i - 1])) throw DomainError("IsotonicMap: breakpoints not ascending");
    if (values_[i] < values_[i - 1]) throw DomainError("IsotonicMap: values decrease");
  }
}

IsotonicMap IsotonicMap::identity(double lo, double hi) { return IsotonicMap({lo, hi}, {lo, hi}); }

double IsotonicMap::operator()(double x) const {
  if (breakpoints_.empty()) throw DomainError("IsotonicMap: evaluating an empty map");
  if (x <= breakpoints_.front()) return values_.front();
  if (x >= breakpoints_.back()) return values_.back();
  const auto hi = static_cast<std::size_t>(
      std::upper_bound(breakpoints_.begin(), breakpoints_.end(), x) - breakpoints_.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - breakpoints_[lo]) / (breakpoints_[hi] - breakpoints_[lo]);
  return values_[lo] + t * (values_[hi] - values_[lo]);
}

namespace {

struct Block {
  double value;
  double weight;
  double plain_sum;  // for zero-weight pools
  std::size_t count;
};

double block_mean(double wsum, double wysum, double plain_sum, std::size_t count) {
  return wsum > 0 ? wysum / wsum : plain_sum / static_cast<double>(count);
}

// Core solver: returns the pooled blocks in order.
std::vector<Block> pava_blocks(std::span<const double> y, std::span<const double> w) {
  std::vector<Block> stack;
  stack.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    Block b{y[i], w[i], y[i], 1};
    while (!stack.empty() && stack.back().value > b.value) {
      const Block& top = stack.back();
      const double wsum = top.weight + b.weight;
      const double wysum = top.weight * top.value + b.weight * b.value;
      b = {block_mean(wsum, wysum, top.plain_sum + b.plain_sum, top.count + b.count), wsum,
           top.plain_sum + b.plain_sum, top.count + b.count};
      stack.pop_back();
    }
    stack.push_back(b);
  }
  return stack;
}

void check_weights(std::span<const double> w) {
  for (double v : w) {
    if (!(v >= 0) || !std::isfinite(v)) throw DomainError("isotonic regression: weights must be finite and >= 0");
  }
}

}  // namespace

std::vector<double> pava(std::span<const double> y, std::span<const double> w) {
  if (y.size() != w.size()) throw DomainError("pava: y and w differ in length");
  if (y.empty()) throw DomainError("pava: empty input");
  check_weights(w);
  std::vector<double> fit;
  fit.reserve(y.size());
  for (const auto& b : pava_blocks(y, w)) fit.insert(fit.end(), b.count, b.value);
  return fit;
}

IsotonicMap pava_fit(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
  if (x.size() != y.size() || x.size() != w.size()) throw DomainError("pava_fit: x, y, w differ in length");
  if (x.empty()) throw DomainError("pava_fit: empty input");
  check_weights(w);
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  // pool equal x
  std::vector<double> ux, uy, uw;
  for (std::size_t k = 0; k < order.size();) {
    const double xv = x[order[k]];
    double wsum = 0, wysum = 0, plain = 0;
    std::size_t n = 0;
    for (; k < order.size() && x[order[k]] == xv; ++k) {
      wsum += w[order[k]];
      wysum += w[order[k]] * y[order[k]];
      plain += y[order[k]];
      ++n;
    }
    ux.push_back(xv);
    uy.push_back(block_mean(wsum, wysum, plain, n));
    uw.push_back(wsum);
  }

  // One breakpoint per pooled block, at the block's weighted mean x.
  const auto blocks = pava_blocks(uy, uw);
  std::vector<double> bp, val;
  std::size_t start = 0;
  for (const auto& b : blocks) {
    double wsum = 0, wxsum = 0, plain = 0;
    for (std::size_t k = start; k < start + b.count; ++k) {
      wsum += uw[k];
      wxsum += uw[k] * ux[k];
      plain += ux[k];
    }
    start += b.count;
    const double center = std::clamp(block_mean(wsum, wxsum, plain, b.count), ux[start - b.count], ux[start - 1]);
    if (!bp.empty() && !(center > bp.back())) {
      // rounding can collapse neighbouring centers; keep the later block's value
      val.back() = b.value;
      continue;
    }
    bp.push_back(center);
    val.push_back(b.value);
  }
  return IsotonicMap(std::move(bp), std::move(val));
}

// ---------------------------------------------------------------------------
// names

std::string_view to_string(CalibrationScheme s) {
  switch (s) {
    case CalibrationScheme::kIR: return "ir";
    case CalibrationScheme::kIRPerCoord: return "ir-pco";
    case CalibrationScheme::kIRPerClass: return "ir-cl";
    case CalibrationScheme::kIRPerCoordClass: return "ir-pco-cl";
    case CalibrationScheme::kFactor: return "fs";
  }
  return "?";
}

std::string_view to_string(CalibrationMode m) { return m == CalibrationMode::kAbsolute ? "abs" : "rel"; }

std::string_view to_string(FactorLoss l) {
  switch (l) {
    case FactorLoss::kNLL: return "nll";
    case FactorLoss::kRMSUE: return "rmsue";
    case FactorLoss::kMAUE: return "maue";
  }
  return "?";
}

std::string_view to_string(SizeReference r) { return r == SizeReference::kPredicted ? "predicted" : "ground-truth"; }

CalibrationScheme parse_scheme(std::string_view s) {
  for (auto v : {CalibrationScheme::kIR, CalibrationScheme::kIRPerCoord, CalibrationScheme::kIRPerClass,
                 CalibrationScheme::kIRPerCoordClass, CalibrationScheme::kFactor}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown calibration scheme '" + std::string(s) + "'");
}

CalibrationMode parse_mode(std::string_view s) {
  if (s == "abs") return CalibrationMode::kAbsolute;
  if (s == "rel") return CalibrationMode::kRelative;
  throw ConfigError("unknown calibration mode '" + std::string(s) + "'");
}

FactorLoss parse_loss(std::string_view s) {
  for (auto v : {FactorLoss::kNLL, FactorLoss::kRMSUE, FactorLoss::kMAUE}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown factor loss '" + std::string(s) + "'");
}

namespace {

SizeReference parse_reference(std::string_view s) {
  if (s == "predicted") return SizeReference::kPredicted;
  if (s == "ground-truth") return SizeReference::kGroundTruth;
  throw ParseError("unknown size reference '" + std::string(s) + "'");
}

GroupKey scheme_key(CalibrationScheme scheme, Coord c, int class_id) {
  switch (scheme) {
    case CalibrationScheme::kIRPerCoord: return {index(c), kAnyClass};
    case CalibrationScheme::kIRPerClass: return {kAnyCoord, class_id};
    case CalibrationScheme::kIRPerCoordClass: return {index(c), class_id};
    default: return {};
  }
}

double predicted_size(const Detection& d, Coord c) { return is_vertical(c) ? d.box[Coord::kH].mean : d.box[Coord::kW].mean; }

double reference_size(const MatchedPair& p, Coord c, SizeReference ref) {
  if (ref == SizeReference::kPredicted) return predicted_size(p.detection, c);
  return is_vertical(c) ? p.truth.corners.height() : p.truth.corners.width();
}

double normaliser(const MatchedPair& p, Coord c, CalibrationMode mode, SizeReference ref) {
  if (mode == CalibrationMode::kAbsolute) return 1.0;
  const double n = reference_size(p, c, ref);
  if (!(n > 0)) throw DomainError("relative calibration: reference size must be positive");
  return n;
}

struct Items {
  std::vector<double> residual;
  std::vector<double> sigma;
};

}  // namespace

const IsotonicMap& CalibrationModel::map_for(Coord c, int class_id, bool& fell_back) const {
  fell_back = false;
  const GroupKey key = scheme_key(scheme, c, class_id);
  if (auto it = maps.find(key); it != maps.end()) return it->second;
  fell_back = true;
  if (auto it = maps.find(GroupKey{}); it != maps.end()) return it->second;
  throw DomainError("calibration model has no isotonic map");
}

// ---------------------------------------------------------------------------
// fitting

CalibrationModel fit_isotonic(std::span<const MatchedPair> pairs, CalibrationScheme scheme, CalibrationMode mode,
                              const IsotonicOptions& options) {
  if (scheme == CalibrationScheme::kFactor) throw ConfigError("fit_isotonic: factor scheme requested");
  if (pairs.empty()) throw DomainError("fit_isotonic: no pairs");
  CalibrationModel model;
  model.scheme = scheme;
  model.mode = mode;
  model.reference = options.reference;
  model.target_scale = options.target_scale;

  std::map<GroupKey, Items> groups;
  std::map<GroupKey, std::size_t> pair_counts;
  Items global;
  for (const auto& p : pairs) {
    std::map<GroupKey, bool> seen;
    for (Coord c : kAllCoords) {
      const double n = normaliser(p, c, mode, options.reference);
      const double x = p.detection.box[c].sd / n;
      const double y = p.residual[index(c)] / n * options.target_scale;
      global.sigma.push_back(x);
      global.residual.push_back(y);
      if (scheme != CalibrationScheme::kIR) {
        const GroupKey key = scheme_key(scheme, c, p.truth.class_id);
        groups[key].sigma.push_back(x);
        groups[key].residual.push_back(y);
        if (!seen[key]) {
          seen[key] = true;
          ++pair_counts[key];
        }
      }
    }
  }

  auto fit = [](const Items& items) {
    const std::vector<double> w(items.sigma.size(), 1.0);
    return pava_fit(items.sigma, items.residual, w);
  };
  model.maps[GroupKey{}] = fit(global);
  for (const auto& [key, items] : groups) {
    if (pair_counts[key] < options.min_group_size) {
      model.fallbacks.push_back(key);
    } else {
      model.maps[key] = fit(items);
    }
  }
  return model;
}

double factor_loss(std::span<const double> residuals, std::span<const double> sigmas, FactorLoss loss, double s) {
  if (residuals.size() != sigmas.size() || residuals.empty()) throw DomainError("factor_loss: bad input sizes");
  CompensatedSum acc;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double ss = s * sigmas[i];
    switch (loss) {
      case FactorLoss::kNLL:
        acc += 0.5 * (residuals[i] * residuals[i] / (ss * ss) + std::log(ss * ss));
        break;
      case FactorLoss::kRMSUE:
        acc += (residuals[i] - ss) * (residuals[i] - ss);
        break;
      case FactorLoss::kMAUE:
        acc += std::abs(residuals[i] - ss);
        break;
    }
  }
  const double mean = acc.value() / static_cast<double>(residuals.size());
  return loss == FactorLoss::kRMSUE ? std::sqrt(mean) : mean;
}

namespace {

// dL/ds of the chosen loss.
double factor_gradient(const Items& items, FactorLoss loss, double s) {
  CompensatedSum acc;
  const std::size_t n = items.sigma.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = items.residual[i];
    const double sg = items.sigma[i];
    switch (loss) {
      case FactorLoss::kNLL:
        acc += -d * d / (s * s * s * sg * sg) + 1.0 / s;
        break;
      case FactorLoss::kRMSUE:
        acc += -(d - s * sg) * sg;
        break;
      case FactorLoss::kMAUE: {
        const double r = d - s * sg;
        acc += r > 0 ? -sg : (r < 0 ? sg : 0.0);
        break;
      }
    }
  }
  double g = acc.value() / static_cast<double>(n);
  if (loss == FactorLoss::kRMSUE) {
    const double rmsue = factor_loss(items.residual, items.sigma, loss, s);
    g = rmsue > 0 ? g / rmsue : 0.0;
  }
  return g;
}

double optimise_factor(const Items& items, FactorLoss loss, const FactorOptions& opt) {
  if (opt.epochs < 0 || !(opt.learning_rate > 0)) throw ConfigError("fit_factor: bad optimiser settings");
  if (opt.optimizer == FactorOptimizer::kPlain) {
    double s = 1.0;
    for (int e = 0; e < opt.epochs; ++e) {
      s -= opt.learning_rate * factor_gradient(items, loss, s);
      s = std::max(s, 1e-12);
    }
    return s;
  }
  double log_s = 0.0;
  double step = opt.learning_rate;
  int prev_sign = 0;
  for (int e = 0; e < opt.epochs; ++e) {
    const double g = factor_gradient(items, loss, std::exp(log_s));
    const int sign = (g > 0) - (g < 0);
    if (sign == 0) break;
    if (prev_sign != 0) step *= sign == prev_sign ? 1.2 : 0.5;
    step = std::min(step, 10.0);
    log_s -= sign * step;
    prev_sign = sign;
  }
  return std::exp(log_s);
}

}  // namespace

CalibrationModel fit_factor(std::span<const MatchedPair> pairs, FactorLoss loss, CalibrationMode mode,
                            const FactorOptions& options) {
  if (pairs.empty()) throw DomainError("fit_factor: no pairs");
  Items items;
  for (const auto& p : pairs) {
    for (Coord c : kAllCoords) {
      const double sd = p.detection.box[c].sd;
      if (!(sd > 0)) throw DomainError("fit_factor: zero sigma");
      const double n = normaliser(p, c, mode, options.reference);
      items.sigma.push_back(sd / n);
      items.residual.push_back(p.residual[index(c)] / n);
    }
  }
  CalibrationModel model;
  model.scheme = CalibrationScheme::kFactor;
  model.mode = mode;
  model.reference = options.reference;
  model.loss = loss;
  model.factor = optimise_factor(items, loss, options);
  return model;
}

// ---------------------------------------------------------------------------
// application

namespace {

Detection calibrate_one(const CalibrationModel& model, const Detection& det, int class_id,
                        const std::array<double, 4>& norms, bool& fallback) {
  Detection out = det;
  for (Coord c : kAllCoords) {
    const double n = norms[index(c)];
    const double sd = det.box[c].sd;
    double calibrated = 0;
    if (model.scheme == CalibrationScheme::kFactor) {
      calibrated = model.mode == CalibrationMode::kRelative ? model.factor * (sd / n) * n : model.factor * sd;
    } else {
      bool fb = false;
      const auto& map = model.map_for(c, class_id, fb);
      fallback = fallback || fb;
      calibrated = model.mode == CalibrationMode::kRelative ? map(sd / n) * n : map(sd);
    }
    out.box[c].sd = std::max(calibrated, 0.0);
  }
  return out;
}

std::array<double, 4> predicted_norms(const CalibrationModel& model, const Detection& det) {
  std::array<double, 4> n{1, 1, 1, 1};
  if (model.mode == CalibrationMode::kRelative) {
    for (Coord c : kAllCoords) {
      n[index(c)] = predicted_size(det, c);
      if (!(n[index(c)] > 0)) throw DomainError("relative calibration: predicted size must be positive");
    }
  }
  return n;
}

}  // namespace

ApplyResult apply(const CalibrationModel& model, std::span<const Detection> detections,
                  std::span<const int> class_ids) {
  if (model.mode == CalibrationMode::kRelative && model.reference == SizeReference::kGroundTruth) {
    throw ConfigError("apply: ground-truth size reference needs matched pairs");
  }
  const bool per_class =
      model.scheme == CalibrationScheme::kIRPerClass || model.scheme == CalibrationScheme::kIRPerCoordClass;
  if (per_class && class_ids.size() != detections.size()) {
    throw DomainError("apply: per-class scheme needs one class per detection");
  }
  ApplyResult out;
  out.detections.reserve(detections.size());
  out.used_fallback.reserve(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    bool fallback = false;
    const int cls = per_class ? class_ids[i] : kAnyClass;
    out.detections.push_back(calibrate_one(model, detections[i], cls, predicted_norms(model, detections[i]), fallback));
    out.used_fallback.push_back(fallback);
  }
  return out;
}

std::vector<MatchedPair> apply_to_pairs(const CalibrationModel& model, std::span<const MatchedPair> pairs,
                                        ClassSource source) {
  std::vector<MatchedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::array<double, 4> norms{1, 1, 1, 1};
    for (Coord c : kAllCoords) norms[index(c)] = normaliser(p, c, model.mode, model.reference);
    const int cls = source == ClassSource::kGroundTruth ? p.truth.class_id : p.detection.class_id;
    bool fallback = false;
    MatchedPair q = p;
    q.detection = calibrate_one(model, p.detection, cls, norms, fallback);
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// serialisation

namespace {

constexpr std::string_view kModelMagic = "locunc-calibration";
constexpr int kModelVersion = 1;

std::string coord_token(int c) { return c == kAnyCoord ? "*" : std::string(coord_name(static_cast<Coord>(c))); }
std::string class_token(int k) { return k == kAnyClass ? "*" : std::to_string(k); }

int parse_coord_token(const std::string& s) {
  if (s == "*") return kAnyCoord;
  for (Coord c : kAllCoords) {
    if (coord_name(c) == s) return index(c);
  }
  throw ParseError("calibration model: bad coordinate '" + s + "'");
}

int parse_class_token(const std::string& s) { return s == "*" ? kAnyClass : static_cast<int>(parse_int(s)); }

std::string expect(std::istream& in, std::string_view keyword) {
  std::string key, value;
  if (!(in >> key) || key != keyword) throw ParseError("calibration model: expected '" + std::string(keyword) + "'");
  if (!(in >> value)) throw ParseError("calibration model: missing value for '" + std::string(keyword) + "'");
  return value;
}

}  // namespace

void write_model(std::ostream& out, const CalibrationModel& m) {
  out << kModelMagic << " v" << kModelVersion << "\n";
  out << "scheme " << to_string(m.scheme) << "\n";
  out << "mode " << to_string(m.mode) << "\n";
  out << "reference " << to_string(m.reference) << "\n";
  out << "target_scale " << format_double(m.target_scale) << "\n";
  out << "loss " << (m.loss ? to_string(*m.loss) : std::string_view("-")) << "\n";
  out << "factor " << format_double(m.factor) << "\n";
  out << "maps " << m.maps.size() << "\n";
  for (const auto& [key, map] : m.maps) {
    out << "map " << coord_token(key.coord) << " " << class_token(key.class_id) << " " << map.breakpoints().size()
        << "\n";
    for (std::size_t i = 0; i < map.breakpoints().size(); ++i) {
      out << format_double(map.breakpoints()[i]) << " " << format_double(map.values()[i]) << "\n";
    }
  }
  out << "fallbacks " << m.fallbacks.size() << "\n";
  for (const auto& key : m.fallbacks) out << "fallback " << coord_token(key.coord) << " " << class_token(key.class_id) << "\n";
  out << "end\n";
}

namespace {

CalibrationModel read_model_impl(std::istream& in) {
  std::string magic, version;
  if (!(in >> magic >> version) || magic != kModelMagic) throw FormatError("not a calibration model file");
  if (version != "v" + std::to_string(kModelVersion)) throw FormatError("unsupported calibration model " + version);
  CalibrationModel m;
  m.scheme = parse_scheme(expect(in, "scheme"));
  try {
    m.mode = parse_mode(expect(in, "mode"));
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  m.reference = parse_reference(expect(in, "reference"));
  m.target_scale = parse_double(expect(in, "target_scale"));
  const std::string loss = expect(in, "loss");
  if (loss != "-") m.loss = parse_loss(loss);
  m.factor = parse_double(expect(in, "factor"));
  const auto n_maps = parse_int(expect(in, "maps"));
  for (long long i = 0; i < n_maps; ++i) {
    std::string kw, coord, cls, count;
    if (!(in >> kw >> coord >> cls >> count) || kw != "map") throw ParseError("calibration model: bad map header");
    const auto n = parse_int(count);
    std::vector<double> bp, val;
    for (long long j = 0; j < n; ++j) {
      std::string a, b;
      if (!(in >> a >> b)) throw ParseError("calibration model: truncated map");
      bp.push_back(parse_double(a));
      val.push_back(parse_double(b));
    }
    m.maps[GroupKey{parse_coord_token(coord), parse_class_token(cls)}] = IsotonicMap(std::move(bp), std::move(val));
  }
  const auto n_fb = parse_int(expect(in, "fallbacks"));
  for (long long i = 0; i < n_fb; ++i) {
    std::string kw, coord, cls;
    if (!(in >> kw >> coord >> cls) || kw != "fallback") throw ParseError("calibration model: bad fallback line");
    m.fallbacks.push_back({parse_coord_token(coord), parse_class_token(cls)});
  }
  std::string end;
  if (!(in >> end) || end != "end") throw ParseError("calibration model: missing 'end'");
  if (m.scheme == CalibrationScheme::kFactor && !(m.factor > 0)) throw ParseError("calibration model: factor must be > 0");
  return m;
}

}  // namespace

CalibrationModel read_model(std::istream& in) {
  try {
    return read_model_impl(in);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("calibration model: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const CalibrationModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_model(out, model);
}

CalibrationModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_model(in);
}

}  // namespace locunc
