#include "locunc/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>

#include "locunc/numeric.hpp"

namespace locunc {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

int to_int(std::string_view key, std::string_view v) {
  auto parsed = try_parse_int(v);
  if (!parsed) throw ConfigError("anchor config: '" + std::string(key) + "' expects an integer, got '" +
                                 std::string(v) + "'");
  return static_cast<int>(*parsed);
}

double to_real(std::string_view key, std::string_view v) {
  auto parsed = try_parse_double(v);
  if (!parsed) throw ConfigError("anchor config: '" + std::string(key) + "' expects a number, got '" +
                                 std::string(v) + "'");
  return *parsed;
}

// Anchor size for scale index s of a level with the given stride.
double level_size(const AnchorGridConfig& cfg, int stride, int s) {
  return cfg.base_scale * stride * std::exp2(static_cast<double>(s) / cfg.scales_per_cell);
}

}  // namespace

void Anchor::validate() const {
  if (!(h > 0) || !(w > 0)) throw DomainError("anchor height and width must be positive");
  if (!std::isfinite(y) || !std::isfinite(x) || !std::isfinite(h) || !std::isfinite(w)) {
    throw DomainError("anchor has a non-finite coordinate");
  }
}

void AnchorGridConfig::validate() const {
  if (image_height <= 0 || image_width <= 0) throw ConfigError("anchor config: image size must be positive");
  if (strides.empty()) throw ConfigError("anchor config: no strides");
  for (int s : strides) {
    if (s <= 0) throw ConfigError("anchor config: stride must be positive");
    if (image_height % s != 0 || image_width % s != 0) {
      throw ConfigError("anchor config: stride " + std::to_string(s) + " does not divide the image size " +
                        std::to_string(image_height) + "x" + std::to_string(image_width));
    }
  }
  if (scales_per_cell <= 0 || aspect_ratios.empty()) throw ConfigError("anchor config: no anchors per cell");
  for (double r : aspect_ratios) {
    if (!(r > 0)) throw ConfigError("anchor config: aspect ratios must be positive");
  }
  if (!(base_scale > 0)) throw ConfigError("anchor config: base_scale must be positive");
}

std::size_t AnchorGridConfig::anchor_count() const {
  std::size_t cells = 0;
  for (int s : strides) {
    cells += static_cast<std::size_t>(image_height / s) * static_cast<std::size_t>(image_width / s);
  }
  return cells * static_cast<std::size_t>(anchors_per_cell());
}

AnchorGridConfig parse_anchor_config(std::string_view text) {
  AnchorGridConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("anchor config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(view.substr(0, eq));
    const auto value = trim(view.substr(eq + 1));
    if (key == "image_height") {
      cfg.image_height = to_int(key, value);
    } else if (key == "image_width") {
      cfg.image_width = to_int(key, value);
    } else if (key == "strides") {
      cfg.strides.clear();
      for (auto item : split_list(value)) cfg.strides.push_back(to_int(key, item));
    } else if (key == "scales_per_cell") {
      cfg.scales_per_cell = to_int(key, value);
    } else if (key == "aspect_ratios") {
      cfg.aspect_ratios.clear();
      for (auto item : split_list(value)) cfg.aspect_ratios.push_back(to_real(key, item));
    } else if (key == "base_scale") {
      cfg.base_scale = to_real(key, value);
    } else {
      throw ConfigError("anchor config line " + std::to_string(lineno) + ": unknown key '" + std::string(key) +
                        "'");
    }
  }
  cfg.validate();
  return cfg;
}

AnchorGridConfig read_anchor_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open anchor config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_anchor_config(buf.str());
}

std::string to_text(const AnchorGridConfig& cfg) {
  std::ostringstream out;
  out << "image_height = " << cfg.image_height << "\n";
  out << "image_width = " << cfg.image_width << "\n";
  out << "strides = ";
  for (std::size_t i = 0; i < cfg.strides.size(); ++i) out << (i ? "," : "") << cfg.strides[i];
  out << "\nscales_per_cell = " << cfg.scales_per_cell << "\n";
  out << "aspect_ratios = ";
  for (std::size_t i = 0; i < cfg.aspect_ratios.size(); ++i) {
    out << (i ? "," : "") << format_double(cfg.aspect_ratios[i]);
  }
  out << "\nbase_scale = " << format_double(cfg.base_scale) << "\n";
  return out.str();
}

std::vector<Anchor> build_anchor_grid(const AnchorGridConfig& cfg) {
  cfg.validate();
  std::vector<Anchor> anchors;
  anchors.reserve(cfg.anchor_count());
  for (int stride : cfg.strides) {
    const int rows = cfg.image_height / stride;
    const int cols = cfg.image_width / stride;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double cy = (r + 0.5) * stride;
        const double cx = (c + 0.5) * stride;
        for (int s = 0; s < cfg.scales_per_cell; ++s) {
          const double size = level_size(cfg, stride, s);
          for (double ratio : cfg.aspect_ratios) {
            const double root = std::sqrt(ratio);
            anchors.push_back({cy, cx, size / root, size * root});
          }
        }
      }
    }
  }
  return anchors;
}

GaussianBox4 encode(const Corners& gt, const Anchor& anchor) {
  anchor.validate();
  if (!gt.valid()) throw DomainError("encode: ground-truth box must have positive height and width");
  GaussianBox4 out;
  out[Coord::kY] = Gaussian1((gt.center_y() - anchor.y) / anchor.h, 0.0);
  out[Coord::kX] = Gaussian1((gt.center_x() - anchor.x) / anchor.w, 0.0);
  out[Coord::kH] = Gaussian1(std::log(gt.height() / anchor.h), 0.0);
  out[Coord::kW] = Gaussian1(std::log(gt.width() / anchor.w), 0.0);
  return out;
}

GaussianBox4 encode_moments(const DecodedBox& box, const Anchor& anchor) {
  anchor.validate();
  GaussianBox4 out;
  out[Coord::kY] = Gaussian1((box[Coord::kY].mean - anchor.y) / anchor.h, std::pow(box[Coord::kY].sd / anchor.h, 2));
  out[Coord::kX] = Gaussian1((box[Coord::kX].mean - anchor.x) / anchor.w, std::pow(box[Coord::kX].sd / anchor.w, 2));
  for (Coord c : {Coord::kH, Coord::kW}) {
    const double mean = box[c].mean;
    if (!(mean > 0)) throw DomainError("encode_moments: box size must be positive");
    const double a = c == Coord::kH ? anchor.h : anchor.w;
    const double var = std::log1p(std::pow(box[c].sd / mean, 2));
    out[c] = Gaussian1(std::log(mean / a) - var / 2, var);
  }
  return out;
}

namespace {

struct LevelLayout {
  int stride;
  int rows;
  int cols;
  std::size_t first;  // grid index of the level's first anchor
};

std::vector<LevelLayout> level_layout(const AnchorGridConfig& cfg) {
  std::vector<LevelLayout> out;
  std::size_t first = 0;
  const auto per_cell = static_cast<std::size_t>(cfg.anchors_per_cell());
  for (int s : cfg.strides) {
    LevelLayout l{s, cfg.image_height / s, cfg.image_width / s, first};
    out.push_back(l);
    first += static_cast<std::size_t>(l.rows) * static_cast<std::size_t>(l.cols) * per_cell;
  }
  return out;
}

}  // namespace

Anchor anchor_at(const AnchorGridConfig& cfg, std::size_t idx) {
  cfg.validate();
  const auto per_cell = static_cast<std::size_t>(cfg.anchors_per_cell());
  const auto ratios = cfg.aspect_ratios.size();
  for (const auto& l : level_layout(cfg)) {
    const std::size_t count = static_cast<std::size_t>(l.rows) * static_cast<std::size_t>(l.cols) * per_cell;
    if (idx >= l.first + count) continue;
    const std::size_t local = idx - l.first;
    const std::size_t cell = local / per_cell;
    const std::size_t within = local % per_cell;
    const int r = static_cast<int>(cell / static_cast<std::size_t>(l.cols));
    const int c = static_cast<int>(cell % static_cast<std::size_t>(l.cols));
    const double size = level_size(cfg, l.stride, static_cast<int>(within / ratios));
    const double root = std::sqrt(cfg.aspect_ratios[within % ratios]);
    return {(r + 0.5) * l.stride, (c + 0.5) * l.stride, size / root, size * root};
  }
  throw DomainError("anchor index " + std::to_string(idx) + " outside a grid of " +
                    std::to_string(cfg.anchor_count()));
}

std::size_t best_anchor_index(const AnchorGridConfig& cfg, const Corners& box) {
  cfg.validate();
  if (!box.valid()) throw DomainError("best_anchor_index: invalid box");
  const auto per_cell = static_cast<std::size_t>(cfg.anchors_per_cell());
  const auto ratios = cfg.aspect_ratios.size();
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = 0;
  for (const auto& l : level_layout(cfg)) {
    const int r = std::clamp(static_cast<int>(std::floor(box.center_y() / l.stride)), 0, l.rows - 1);
    const int c = std::clamp(static_cast<int>(std::floor(box.center_x() / l.stride)), 0, l.cols - 1);
    const std::size_t cell_first =
        l.first + (static_cast<std::size_t>(r) * static_cast<std::size_t>(l.cols) + static_cast<std::size_t>(c)) * per_cell;
    for (std::size_t k = 0; k < per_cell; ++k) {
      const double size = level_size(cfg, l.stride, static_cast<int>(k / ratios));
      const double root = std::sqrt(cfg.aspect_ratios[k % ratios]);
      const double d = std::abs(std::log(box.height() / (size / root))) + std::abs(std::log(box.width() / (size * root)));
      if (d < best) {
        best = d;
        best_idx = cell_first + k;
      }
    }
  }
  return best_idx;
}

DecodeVariant DecodeVariant::parse(std::string_view name, std::uint64_t seed) {
  DecodeVariant v;
  if (name == "baseline") {
    v = baseline();
  } else if (name == "lnorm") {
    v = log_normal();
  } else if (name == "chain") {
    v = chain();
  } else if (name == "falsedec") {
    v = false_decoding();
  } else if (name.starts_with("samp:")) {
    auto k = try_parse_int(name.substr(5));
    if (!k) throw ConfigError("decode variant '" + std::string(name) + "': sample count is not an integer");
    v = sampling(*k, seed);
  } else {
    throw ConfigError("unknown decode variant '" + std::string(name) + "'");
  }
  v.validate();
  return v;
}

std::string DecodeVariant::name() const {
  switch (kind) {
    case DecodeKind::kBaseline:
      return "baseline";
    case DecodeKind::kLogNormal:
      return "lnorm";
    case DecodeKind::kChain:
      return "chain";
    case DecodeKind::kSampling:
      return "samp:" + std::to_string(samples);
    case DecodeKind::kFalseDecoding:
      return "falsedec";
  }
  return "?";
}

void DecodeVariant::validate() const {
  if (kind == DecodeKind::kSampling && samples < 2) {
    throw ConfigError("sampling decode needs at least 2 samples");
  }
}

DecodedBox decode(const GaussianBox4& offsets, const Anchor& anchor, const DecodeVariant& variant,
                  bool train_correction) {
  anchor.validate();
  variant.validate();
  DecodedBox out;
  const bool with_sd = variant.kind != DecodeKind::kBaseline;

  // centers
  const std::array<std::pair<double, double>, 2> center_ref{{{anchor.h, anchor.y}, {anchor.w, anchor.x}}};
  for (Coord c : {Coord::kY, Coord::kX}) {
    const auto& g = offsets[c];
    const auto [a, origin] = center_ref[index(c)];
    out[c] = {a * g.mu() + origin, with_sd ? a * g.sd() : 0.0};
  }

  // sizes
  for (Coord c : {Coord::kH, Coord::kW}) {
    const auto& g = offsets[c];
    const double a = c == Coord::kH ? anchor.h : anchor.w;
    const double mu = train_correction && with_sd ? g.mu() - g.var() / 2 : g.mu();
    switch (variant.kind) {
      case DecodeKind::kBaseline:
        out[c] = {std::exp(g.mu()) * a, 0.0};
        break;
      case DecodeKind::kFalseDecoding:
        out[c] = {std::exp(mu) * a, std::exp(g.sd()) * a};
        break;
      case DecodeKind::kLogNormal: {
        const auto m = lognormal_moments(mu, g.var());
        out[c] = {a * m.mean, a * m.sd};
        break;
      }
      case DecodeKind::kChain: {
        const Chain1 chain{Bijector1::exp(), Bijector1::affine(a, 0.0)};
        out[c] = propagate_chain(chain, Gaussian1(mu, g.var()));
        break;
      }
      case DecodeKind::kSampling: {
        const Chain1 chain{Bijector1::exp(), Bijector1::affine(a, 0.0)};
        out[c] = propagate_mc(chain, Gaussian1(mu, g.var()), variant.samples,
                              mix_seed(variant.seed, static_cast<unsigned long long>(index(c))));
        break;
      }
    }
  }
  return out;
}

std::vector<DecodedBox> decode_batch(std::span<const GaussianBox4> offsets, std::span<const Anchor> anchors,
                                     const DecodeVariant& variant, bool train_correction) {
  if (offsets.size() != anchors.size()) throw DomainError("decode_batch: offsets and anchors differ in length");
  std::vector<DecodedBox> out;
  out.reserve(offsets.size());
  DecodeVariant item = variant;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (variant.kind == DecodeKind::kSampling) item.seed = mix_seed(variant.seed, i);
    out.push_back(decode(offsets[i], anchors[i], item, train_correction));
  }
  return out;
}

DecodedBox rescale(const DecodedBox& box, double from_height, double from_width, double to_height,
                   double to_width) {
  if (!(from_height > 0) || !(from_width > 0) || !(to_height > 0) || !(to_width > 0)) {
    throw DomainError("rescale: image dimensions must be positive");
  }
  const double sy = to_height / from_height;
  const double sx = to_width / from_width;
  DecodedBox out;
  for (Coord c : kAllCoords) {
    const double s = is_vertical(c) ? sy : sx;
    out[c] = {box[c].mean * s, box[c].sd * s};
  }
  return out;
}

double nll_loss(std::span<const LossItem> batch, bool train_correction) {
  CompensatedSum total;
  std::size_t positives = 0;
  for (const auto& item : batch) {
    if (!item.foreground) continue;
    ++positives;
    for (Coord c : kAllCoords) {
      const auto& g = item.prediction[c];
      if (!(g.var() > 0)) throw DomainError("nll_loss: zero variance on a foreground anchor");
      const double mu = train_correction && is_size(c) ? g.mu() + g.var() / 2 : g.mu();
      const double r = item.target[index(c)] - mu;
      total += r * r / g.var() + std::log(g.var());
    }
  }
  if (positives == 0) throw DomainError("nll_loss: batch has no foreground anchors");
  return total.value() / (8.0 * static_cast<double>(positives));
}

}  // namespace locunc
