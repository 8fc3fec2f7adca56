#include "locunc/synth.hpp"

#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "locunc/numeric.hpp"

namespace locunc {

namespace {

bool is_probability(double p) { return p >= 0 && p <= 1; }

std::string image_name(int i) {
  std::string digits = std::to_string(i);
  return "img" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

class Sampler {
 public:
  Sampler(const SynthConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool bernoulli(double p) { return p > 0 && uniform(0, 1) < p; }

  int discrete(const std::vector<double>& weights) {
    return std::discrete_distribution<int>(weights.begin(), weights.end())(rng_);
  }

  Corners box() {
    const double side = std::exp(uniform(std::log(cfg_.min_size), std::log(cfg_.max_size)));
    const double aspect = std::exp(uniform(-std::log(cfg_.max_aspect), std::log(cfg_.max_aspect)));
    const double h = side / std::sqrt(aspect);
    const double w = side * std::sqrt(aspect);
    const double cy = uniform(h / 2, cfg_.image_height - h / 2);
    const double cx = uniform(w / 2, cfg_.image_width - w / 2);
    return Corners::from_center_size(cy, cx, h, w);
  }

 private:
  const SynthConfig& cfg_;
  std::mt19937_64& rng_;
};

double class_factor(const SynthConfig& cfg, int cls) {
  return cfg.class_k.empty() ? cfg.k : cfg.class_k[static_cast<std::size_t>(cls)];
}

}  // namespace

void SynthConfig::validate() const {
  if (n_images < 0 || objects_per_image < 0) throw ConfigError("synth: counts must be non-negative");
  if (class_frequencies.empty()) throw ConfigError("synth: at least one class is required");
  double freq_total = 0;
  for (double f : class_frequencies) {
    if (!(f >= 0) || !std::isfinite(f)) throw ConfigError("synth: class frequencies must be non-negative");
    freq_total += f;
  }
  if (!(freq_total > 0)) throw ConfigError("synth: class frequencies sum to zero");
  if (image_height <= 0 || image_width <= 0) throw ConfigError("synth: image size must be positive");
  if (!(min_size > 0) || !(max_size >= min_size)) throw ConfigError("synth: need 0 < min_size <= max_size");
  if (!(max_aspect >= 1)) throw ConfigError("synth: max_aspect must be >= 1");
  for (double s : base_sigma) {
    if (!(s >= 0) || !std::isfinite(s)) throw ConfigError("synth: base sigma must be non-negative");
  }
  if (!(jitter >= 0)) throw ConfigError("synth: jitter must be non-negative");
  if (!(area_exponent >= 0)) throw ConfigError("synth: area exponent must be >= 0");
  if (!(reference_area > 0)) throw ConfigError("synth: reference area must be positive");
  if (occlusion_probs.empty()) throw ConfigError("synth: occlusion_probs is empty");
  double occ_total = 0;
  for (double p : occlusion_probs) {
    if (!is_probability(p)) throw ConfigError("synth: occlusion probabilities must lie in [0, 1]");
    occ_total += p;
  }
  if (std::abs(occ_total - 1) > 1e-9) throw ConfigError("synth: occlusion probabilities must sum to 1");
  if (!(occlusion_multiplier > 0)) throw ConfigError("synth: occlusion multiplier must be positive");
  if (!(quality_coupling >= 0)) throw ConfigError("synth: quality coupling must be non-negative");
  if (!(k > 0) || !std::isfinite(k)) throw ConfigError("synth: k must be positive");
  if (!class_k.empty()) {
    if (class_k.size() != class_frequencies.size()) {
      throw ConfigError("synth: class_k needs one entry per class");
    }
    for (double v : class_k) {
      if (!(v > 0) || !std::isfinite(v)) throw ConfigError("synth: k must be positive");
    }
  }
  if (!(miscalibration_power > 0)) throw ConfigError("synth: miscalibration power must be positive");
  if (!(miscalibration_reference > 0)) throw ConfigError("synth: miscalibration reference must be positive");
  if (!is_probability(surplus_rate) || !is_probability(missed_rate)) {
    throw ConfigError("synth: surplus and missed rates must lie in [0, 1]");
  }
  const double largest_h = max_size * std::sqrt(max_aspect);
  if (largest_h > image_height || largest_h > image_width) {
    throw ConfigError("synth: objects up to " + format_double(largest_h) + " px do not fit in a " +
                      std::to_string(image_height) + "x" + std::to_string(image_width) + " image");
  }
}

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Sampler draw(cfg, rng);
  SynthData out;

  auto emit = [&](const std::string& image, int cls, const Corners& truth, int occlusion) {
    const auto cs = truth.center_size();
    const double q = draw.uniform(0, 1);
    double common = std::exp(cfg.jitter * draw.normal());
    common *= std::pow(truth.area() / cfg.reference_area, -cfg.area_exponent);
    common *= std::pow(cfg.occlusion_multiplier, occlusion);
    common *= 1 + cfg.quality_coupling * q;
    const double k = class_factor(cfg, cls);

    Detection det;
    det.image_id = image;
    det.class_id = cls;
    det.score = draw.uniform(0.3, 1.0);
    if (cfg.emit_quality) det.quality = q;
    TruthNoise tn{image, out.detections.size(), {}};
    for (Coord c : kAllCoords) {
      const int j = index(c);
      const double dim = is_vertical(c) ? cs[2] : cs[3];
      const double sd_true = cfg.base_sigma[j] * (cfg.relative_sigma ? dim : 1.0) * common;
      double value = cs[j] + sd_true * draw.normal();
      // Sizes must stay positive; redraw (rarely needed at sane noise levels).
      for (int tries = 0; is_size(c) && !(value > 0); ++tries) {
        if (tries == 100) throw ConfigError("synth: size noise too large to keep boxes positive");
        value = cs[j] + sd_true * draw.normal();
      }
      double reported = sd_true / k;
      if (cfg.miscalibration_power != 1.0 && sd_true > 0) {
        const double r = sd_true / dim / cfg.miscalibration_reference;
        reported = cfg.miscalibration_reference * std::pow(r, cfg.miscalibration_power) * dim / k;
      }
      det.box.coords[j] = {value, reported};
      tn.sd_true[j] = sd_true;
    }
    out.detections.push_back(std::move(det));
    out.noise.push_back(std::move(tn));
  };

  for (int i = 0; i < cfg.n_images; ++i) {
    const std::string image = image_name(i);
    for (int o = 0; o < cfg.objects_per_image; ++o) {
      GroundTruth g;
      g.image_id = image;
      g.class_id = draw.discrete(cfg.class_frequencies);
      g.corners = draw.box();
      g.occlusion = draw.discrete(cfg.occlusion_probs);
      const bool missed = draw.bernoulli(cfg.missed_rate);
      const bool surplus = draw.bernoulli(cfg.surplus_rate);
      if (!missed) emit(image, g.class_id, g.corners, g.occlusion);
      if (surplus) emit(image, draw.discrete(cfg.class_frequencies), draw.box(), 0);
      out.truths.push_back(std::move(g));
    }
  }
  return out;
}

void write_truth_noise(std::ostream& out, const std::vector<TruthNoise>& noise) {
  out << "# locunc-truth-noise v1\n# image_id detection_index sd_y sd_x sd_h sd_w\n";
  for (const auto& n : noise) {
    out << n.image_id << " " << n.detection_index;
    for (double s : n.sd_true) out << " " << format_double(s);
    out << "\n";
  }
}

std::vector<TruthNoise> parse_truth_noise(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# locunc-truth-noise v1", 0) != 0) {
    throw FormatError("truth-noise file: missing '# locunc-truth-noise v1' header");
  }
  std::vector<TruthNoise> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> t;
    for (std::string s; fields >> s;) t.push_back(s);
    if (t.size() != 6) throw FormatError("truth-noise line " + std::to_string(lineno) + ": expected 6 fields");
    TruthNoise n;
    n.image_id = t[0];
    n.detection_index = static_cast<std::size_t>(parse_int(t[1]));
    for (int j = 0; j < 4; ++j) n.sd_true[j] = parse_double(t[2 + j]);
    out.push_back(std::move(n));
  }
  return out;
}

std::vector<AnchorDetection> to_anchor_space(const std::vector<Detection>& detections,
                                             const AnchorGridConfig& grid) {
  std::vector<AnchorDetection> out;
  out.reserve(detections.size());
  for (const auto& d : detections) {
    AnchorDetection a;
    a.image_id = d.image_id;
    a.class_id = d.class_id;
    a.score = d.score;
    a.quality = d.quality;
    a.anchor_index = best_anchor_index(grid, d.box.corners());
    a.offsets = encode_moments(d.box, anchor_at(grid, a.anchor_index));
    out.push_back(std::move(a));
  }
  return out;
}

void write_synth(const std::filesystem::path& dir, const SynthData& data,
                 const std::optional<AnchorGridConfig>& grid) {
  std::ostringstream gt, det, noise;
  write_ground_truth(gt, data.truths);
  write_detections(det, data.detections);
  write_truth_noise(noise, data.noise);
  write_text_file(dir / "gt.txt", gt.str());
  write_text_file(dir / "detections.txt", det.str());
  write_text_file(dir / "truth_noise.txt", noise.str());
  if (grid) {
    std::ostringstream anchored;
    write_anchor_detections(anchored, to_anchor_space(data.detections, *grid));
    write_text_file(dir / "detections_anchor.txt", anchored.str());
    write_text_file(dir / "anchors.cfg", to_text(*grid));
  }
}

}  // namespace locunc
