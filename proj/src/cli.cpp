#include "locunc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "locunc/anchor.hpp"
#include "locunc/calibrate.hpp"
#include "locunc/io.hpp"
#include "locunc/match.hpp"
#include "locunc/metrics.hpp"
#include "locunc/numeric.hpp"
#include "locunc/synth.hpp"

namespace locunc {

namespace fs = std::filesystem;

namespace {

AnchorGridConfig grid_or_default(const std::string& path) {
  return path.empty() ? AnchorGridConfig{} : read_anchor_config(path);
}

std::string line_of(const std::string& s) {
  std::string out = s;
  std::replace(out.begin(), out.end(), '\n', ' ');
  return out;
}

void report_diagnostics(const std::vector<Diagnostic>& diags, const fs::path& out_dir, std::ostream& err) {
  if (diags.empty()) return;
  std::ostringstream text;
  for (const auto& d : diags) text << d.file << ":" << d.line << ": " << d.message << "\n";
  write_text_file(out_dir / "diagnostics.txt", text.str());
  err << "locunc: warning: " << diags.size() << " ground-truth line(s) reported, see "
      << (out_dir / "diagnostics.txt").string() << "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  int classes = 1;
  std::vector<double> class_freq;
  std::vector<double> base_sigma;
  bool absolute = false;
  bool no_quality = false;
  std::string anchors;
  bool anchor_space = false;
  std::string out;
};

void cmd_synth(SynthArgs a, std::ostream& out) {
  auto& cfg = a.cfg;
  if (!a.class_freq.empty()) {
    cfg.class_frequencies = a.class_freq;
  } else {
    cfg.class_frequencies.assign(static_cast<std::size_t>(std::max(a.classes, 1)), 1.0);
  }
  if (a.base_sigma.size() == 1) {
    cfg.base_sigma.fill(a.base_sigma[0]);
  } else if (a.base_sigma.size() == 4) {
    std::copy(a.base_sigma.begin(), a.base_sigma.end(), cfg.base_sigma.begin());
  } else if (!a.base_sigma.empty()) {
    throw ConfigError("--base-sigma expects 1 or 4 values");
  }
  cfg.relative_sigma = !a.absolute;
  cfg.emit_quality = !a.no_quality;
  std::optional<AnchorGridConfig> grid;
  if (a.anchor_space || !a.anchors.empty()) grid = grid_or_default(a.anchors);
  const auto data = generate(cfg);
  write_synth(a.out, data, grid);
  out << "synth: " << data.truths.size() << " objects, " << data.detections.size() << " detections -> " << a.out
      << "\n";
}

// ---------------------------------------------------------------------------

struct DecodeArgs {
  std::string input;
  std::string anchors;
  std::string variant = "lnorm";
  bool train_correction = false;
  std::uint64_t seed = 0;
  std::vector<double> image_size;
  std::string out;
};

void cmd_decode(const DecodeArgs& a, std::ostream& out) {
  const auto grid = grid_or_default(a.anchors);
  const auto variant = DecodeVariant::parse(a.variant, a.seed);
  const auto dets = read_anchor_detections(a.input);
  if (!a.image_size.empty() && a.image_size.size() != 2) throw ConfigError("--image-size expects H,W");
  std::vector<GaussianBox4> offsets;
  std::vector<Anchor> anchors;
  offsets.reserve(dets.size());
  anchors.reserve(dets.size());
  for (const auto& d : dets) {
    offsets.push_back(d.offsets);
    anchors.push_back(anchor_at(grid, d.anchor_index));
  }
  const auto boxes = decode_batch(offsets, anchors, variant, a.train_correction);
  std::vector<Detection> decoded;
  decoded.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    Detection d;
    d.image_id = dets[i].image_id;
    d.class_id = dets[i].class_id;
    d.score = dets[i].score;
    d.quality = dets[i].quality;
    d.box = boxes[i];
    if (!a.image_size.empty()) {
      d.box = rescale(d.box, grid.image_height, grid.image_width, a.image_size[0], a.image_size[1]);
    }
    decoded.push_back(std::move(d));
  }
  std::ostringstream text;
  write_detections(text, decoded);
  write_text_file(fs::path(a.out) / "detections.txt", text.str());
  out << "decode: " << decoded.size() << " detections (" << variant.name() << ") -> " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct MatchArgs {
  std::string gt;
  std::string detections;
  std::string profile = "generic";
  std::string out;
};

void cmd_match(const MatchArgs& a, std::ostream& out, std::ostream& err) {
  const auto truths = read_ground_truth(a.gt, profile_by_name(a.profile));
  const auto dets = read_detections(a.detections);
  const auto result = match_by_mse(dets, truths.records);
  std::ostringstream pairs, unmatched;
  write_pairs(pairs, result.pairs);
  write_unmatched(unmatched, result.unmatched_detections, result.unmatched_truths);
  write_text_file(fs::path(a.out) / "pairs.txt", pairs.str());
  write_text_file(fs::path(a.out) / "unmatched.txt", unmatched.str());
  report_diagnostics(truths.diagnostics, a.out, err);
  out << "match: " << result.pairs.size() << " pairs, " << result.unmatched_detections.size()
      << " unmatched detections, " << result.unmatched_truths.size() << " missed objects\n";
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string pairs;
  std::string scheme = "ir";
  std::string mode = "abs";
  std::string loss;
  std::string reference = "predicted";
  std::string optimizer = "resilient";
  int epochs = 100;
  double lr = 0.1;
  std::string out;
};

SizeReference parse_reference(const std::string& s) {
  if (s == "predicted") return SizeReference::kPredicted;
  if (s == "ground-truth") return SizeReference::kGroundTruth;
  throw ConfigError("unknown size reference '" + s + "' (predicted, ground-truth)");
}

void cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const auto pairs = read_pairs(a.pairs);
  const auto scheme = parse_scheme(a.scheme);
  const auto mode = parse_mode(a.mode);
  const auto reference = parse_reference(a.reference);
  CalibrationModel model;
  if (scheme == CalibrationScheme::kFactor) {
    FactorOptions opt;
    opt.epochs = a.epochs;
    opt.learning_rate = a.lr;
    opt.reference = reference;
    if (a.optimizer == "resilient") {
      opt.optimizer = FactorOptimizer::kResilient;
    } else if (a.optimizer == "plain") {
      opt.optimizer = FactorOptimizer::kPlain;
    } else {
      throw ConfigError("unknown optimizer '" + a.optimizer + "' (resilient, plain)");
    }
    model = fit_factor(pairs, a.loss.empty() ? FactorLoss::kRMSUE : parse_loss(a.loss), mode, opt);
  } else {
    if (!a.loss.empty()) throw ConfigError("--loss applies to the fs scheme only");
    IsotonicOptions opt;
    opt.reference = reference;
    model = fit_isotonic(pairs, scheme, mode, opt);
  }
  const auto calibrated = apply_to_pairs(model, pairs);
  std::ostringstream cal;
  write_pairs(cal, calibrated);
  save_model(fs::path(a.out) / "model.txt", model);
  write_text_file(fs::path(a.out) / "calibrated_pairs.txt", cal.str());
  out << "calibrate: " << to_string(scheme) << "/" << to_string(mode) << " on " << pairs.size() << " pairs";
  if (scheme == CalibrationScheme::kFactor) out << ", factor " << format_double(model.factor);
  if (!model.fallbacks.empty()) out << ", " << model.fallbacks.size() << " group(s) fell back to the global map";
  out << "\n";
}

// ---------------------------------------------------------------------------

EceOptions parse_ece(const std::string& variant) {
  EceOptions o;
  if (variant == "central") {
    o.variant = EceVariant::kCentralInterval;
  } else if (variant == "one-sided") {
    o.variant = EceVariant::kOneSidedCdf;
  } else {
    throw ConfigError("unknown ECE variant '" + variant + "' (central, one-sided)");
  }
  return o;
}

std::vector<MatchedPair> load_pairs(const std::string& path, const std::string& model) {
  auto pairs = read_pairs(path);
  if (!model.empty()) pairs = apply_to_pairs(load_model(model), pairs);
  return pairs;
}

struct EvaluateArgs {
  std::string pairs;
  std::string model;
  std::string ece = "central";
  std::vector<double> thresholds{0.3, 0.5, 0.7};
  std::string out;
};

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto pairs = load_pairs(a.pairs, a.model);
  const auto opt = parse_ece(a.ece);
  const auto report = evaluate(pairs, opt);
  const fs::path dir = a.out;
  write_text_file(dir / "report.json", to_json(report));
  write_text_file(dir / "report.txt", to_text(report));
  const auto rows = md_cd_uncertainty(pairs, a.thresholds);
  write_text_file(dir / "md_cd.json", to_json(rows));
  write_text_file(dir / "md_cd.csv", to_csv(rows));
  std::ostringstream buckets;
  buckets << "bucket,pairs,ece,nll,rmsue,coverage_1sigma\n";
  const auto split = split_by_size(pairs);
  for (int b = 0; b < 3; ++b) {
    const auto& part = split[static_cast<std::size_t>(b)];
    buckets << to_string(static_cast<SizeBucket>(b)) << "," << part.size();
    if (part.empty()) {
      buckets << ",,,,\n";
      continue;
    }
    const auto r = evaluate(part, opt);
    buckets << "," << format_double(r.ece) << "," << format_double(r.nll) << "," << format_double(r.rmsue) << ","
            << format_double(r.coverage_1sigma) << "\n";
  }
  write_text_file(dir / "size_buckets.csv", buckets.str());
  out << to_text(report);
}

// ---------------------------------------------------------------------------

struct CorrelateArgs {
  std::string pairs;
  std::string model;
  std::string by = "area";
  int bins = 5;
  std::string out;
};

void cmd_correlate(const CorrelateArgs& a, std::ostream& out) {
  const auto pairs = load_pairs(a.pairs, a.model);
  const auto by = parse_conditioning(a.by);
  if (a.bins < 1) throw ConfigError("--bins must be at least 1");
  const auto corr = correlate(pairs, by, a.bins);
  const std::string stem = "correlation_" + std::string(to_string(by));
  write_text_file(fs::path(a.out) / (stem + ".csv"), to_csv(corr));
  write_text_file(fs::path(a.out) / (stem + ".json"), to_json(corr));
  out << to_csv(corr);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> variants{"lnorm", "samp:1000"};
  long long batch = 100000;
  int repeat = 5;
  std::uint64_t seed = 0;
  std::string anchors;
  std::string out;
};

struct BenchRow {
  std::string variant;
  double median_ms = 0;
  double ms_per_1e5 = 0;
};

void cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.batch < 1 || a.repeat < 1) throw ConfigError("--batch and --repeat must be positive");
  const auto grid = grid_or_default(a.anchors);
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), var(0.001, 0.5);
  std::uniform_int_distribution<std::size_t> pick(0, grid.anchor_count() - 1);
  std::vector<GaussianBox4> offsets(static_cast<std::size_t>(a.batch));
  std::vector<Anchor> anchors(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    for (auto& g : offsets[i].coords) g = Gaussian1(mu(rng), var(rng));
    anchors[i] = anchor_at(grid, pick(rng));
  }
  std::vector<BenchRow> rows;
  for (const auto& name : a.variants) {
    const auto variant = DecodeVariant::parse(name, a.seed);
    std::vector<double> times;
    double sink = 0;
    for (int r = 0; r < a.repeat; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto boxes = decode_batch(offsets, anchors, variant);
      const auto t1 = std::chrono::steady_clock::now();
      sink += boxes.back().coords[2].mean;
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    const double median = times.size() % 2 ? times[times.size() / 2]
                                           : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    if (!std::isfinite(sink)) throw Error("bench: non-finite decode result");
    rows.push_back({variant.name(), median, median * 1e5 / static_cast<double>(a.batch)});
  }
  nlohmann::ordered_json j;
  j["batch"] = a.batch;
  j["repeat"] = a.repeat;
  j["seed"] = a.seed;
  j["variants"] = nlohmann::ordered_json::array();
  out << "variant,median_ms,ms_per_1e5,ratio_to_first\n";
  for (const auto& r : rows) {
    const double ratio = r.median_ms / rows.front().median_ms;
    out << r.variant << "," << format_double(r.median_ms) << "," << format_double(r.ms_per_1e5) << ","
        << format_double(ratio) << "\n";
    j["variants"].push_back(
        {{"variant", r.variant}, {"median_ms", r.median_ms}, {"ms_per_1e5", r.ms_per_1e5}, {"ratio_to_first", ratio}});
  }
  if (!a.out.empty()) write_text_file(fs::path(a.out) / "bench.json", j.dump(2) + "\n");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Localization-uncertainty decoding, calibration and evaluation", "locunc"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic detection scenario");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.cfg.seed);
  s->add_option("--images", synth.cfg.n_images);
  s->add_option("--objects", synth.cfg.objects_per_image, "Objects per image");
  s->add_option("--classes", synth.classes, "Number of equally frequent classes");
  s->add_option("--class-freq", synth.class_freq, "Relative class frequencies")->delimiter(',');
  s->add_option("--height", synth.cfg.image_height);
  s->add_option("--width", synth.cfg.image_width);
  s->add_option("--min-size", synth.cfg.min_size);
  s->add_option("--max-size", synth.cfg.max_size);
  s->add_option("--max-aspect", synth.cfg.max_aspect);
  s->add_option("--base-sigma", synth.base_sigma, "1 or 4 values (y,x,h,w)")->delimiter(',');
  s->add_flag("--absolute-sigma", synth.absolute, "Base sigma in px instead of object-size units");
  s->add_option("--jitter", synth.cfg.jitter, "Log-SD of per-object sigma heterogeneity");
  s->add_option("--alpha", synth.cfg.area_exponent, "Area exponent");
  s->add_option("--reference-area", synth.cfg.reference_area);
  s->add_option("--occlusion-probs", synth.cfg.occlusion_probs)->delimiter(',');
  s->add_option("--occlusion-mult", synth.cfg.occlusion_multiplier);
  s->add_option("--quality-coupling", synth.cfg.quality_coupling);
  s->add_flag("--no-quality", synth.no_quality);
  s->add_option("--k", synth.cfg.k, "Miscalibration: reported sd = true sd / k");
  s->add_option("--class-k", synth.cfg.class_k, "Per-class k")->delimiter(',');
  s->add_option("--power", synth.cfg.miscalibration_power, "Size-coupled miscalibration exponent");
  s->add_option("--power-reference", synth.cfg.miscalibration_reference);
  s->add_option("--surplus", synth.cfg.surplus_rate);
  s->add_option("--missed", synth.cfg.missed_rate);
  s->add_flag("--anchor-space", synth.anchor_space, "Also emit anchor-space detections");
  s->add_option("--anchors", synth.anchors, "Anchor grid config (implies --anchor-space)");

  DecodeArgs decode;
  auto* d = app.add_subcommand("decode", "Decode anchor-space offsets to image-space boxes");
  d->add_option("--input", decode.input, "Anchor-space detections")->required();
  d->add_option("--anchors", decode.anchors, "Anchor grid config");
  d->add_option("--variant", decode.variant, "baseline, lnorm, chain, samp:K, falsedec");
  d->add_flag("--train-correction", decode.train_correction);
  d->add_option("--seed", decode.seed);
  d->add_option("--image-size", decode.image_size, "Rescale to H,W")->delimiter(',');
  d->add_option("--out", decode.out)->required();

  MatchArgs match;
  auto* m = app.add_subcommand("match", "Match detections to ground truth");
  m->add_option("--gt", match.gt, "Indexed file or directory of per-image files")->required();
  m->add_option("--detections", match.detections)->required();
  m->add_option("--profile", match.profile, "kitti, kitti-raw, bdd, generic");
  m->add_option("--out", match.out)->required();

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Fit a calibration model on matched pairs");
  c->add_option("--pairs", cal.pairs)->required();
  c->add_option("--scheme", cal.scheme, "ir, ir-pco, ir-cl, ir-pco-cl, fs");
  c->add_option("--mode", cal.mode, "abs, rel");
  c->add_option("--loss", cal.loss, "nll, rmsue, maue (fs only; default rmsue)");
  c->add_option("--reference", cal.reference, "Relative-mode size: predicted, ground-truth");
  c->add_option("--optimizer", cal.optimizer, "resilient, plain");
  c->add_option("--epochs", cal.epochs);
  c->add_option("--lr", cal.lr);
  c->add_option("--out", cal.out)->required();

  EvaluateArgs eval;
  auto* e = app.add_subcommand("evaluate", "Uncertainty metrics on matched pairs");
  e->add_option("--pairs", eval.pairs)->required();
  e->add_option("--model", eval.model, "Apply a calibration model first");
  e->add_option("--ece", eval.ece, "central, one-sided");
  e->add_option("--thresholds", eval.thresholds, "IoU thresholds for the MD/CD table")->delimiter(',');
  e->add_option("--out", eval.out)->required();

  CorrelateArgs corr;
  auto* r = app.add_subcommand("correlate", "Bin sigma_obj by an object property");
  r->add_option("--pairs", corr.pairs)->required();
  r->add_option("--model", corr.model);
  r->add_option("--by", corr.by, "area, occlusion, quality, iou, rmse");
  r->add_option("--bins", corr.bins);
  r->add_option("--out", corr.out)->required();

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time decoding variants");
  b->add_option("--variants", bench.variants)->delimiter(',');
  b->add_option("--batch", bench.batch);
  b->add_option("--repeat", bench.repeat);
  b->add_option("--seed", bench.seed);
  b->add_option("--anchors", bench.anchors);
  b->add_option("--out", bench.out);

  std::vector<const char*> argv{"locunc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "locunc: error: " << line_of(ex.what()) << "\n";
    return 2;
  }

  try {
    if (s->parsed()) cmd_synth(synth, out);
    if (d->parsed()) cmd_decode(decode, out);
    if (m->parsed()) cmd_match(match, out, err);
    if (c->parsed()) cmd_calibrate(cal, out);
    if (e->parsed()) cmd_evaluate(eval, out);
    if (r->parsed()) cmd_correlate(corr, out);
    if (b->parsed()) cmd_bench(bench, out);
  } catch (const ConfigError& ex) {
    err << "locunc: error: " << line_of(ex.what()) << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "locunc: error: " << line_of(ex.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace locunc
