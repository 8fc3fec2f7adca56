#include "locunc/io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "locunc/match.hpp"
#include "locunc/numeric.hpp"

namespace locunc {

namespace {

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(std::move(t));
  return out;
}

bool is_blank_or_comment(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw FormatError(std::string(what) + " must be a non-empty token without whitespace: '" + s + "'");
  }
}

std::string optional_token(const std::optional<double>& v) { return v ? format_double(*v) : "-"; }

std::optional<double> parse_optional(const std::string& s) {
  if (s == "-") return std::nullopt;
  return parse_double(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// ground truth

GtProfile kitti_profile() {
  return {"kitti", 2, {"Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram"}, {"Misc", "DontCare"},
          false};
}

GtProfile bdd_profile() {
  return {"bdd",
          1,
          {"pedestrian", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle", "traffic_light",
           "traffic_sign"},
          {},
          false};
}

GtProfile generic_profile() { return {"generic", 2, {}, {}, false}; }

GtProfile profile_by_name(std::string_view name) {
  if (name == "kitti") return kitti_profile();
  if (name == "kitti-raw") {
    auto p = kitti_profile();
    p.name = "kitti-raw";
    p.alpha_column = true;
    return p;
  }
  if (name == "bdd") return bdd_profile();
  if (name == "generic") return generic_profile();
  throw ConfigError("unknown dataset profile '" + std::string(name) + "'");
}

GtReadResult parse_ground_truth(std::istream& in, const GtProfile& profile, const std::optional<std::string>& image_id,
                                const std::string& file_label) {
  GtReadResult result;
  std::string line;
  int lineno = 0;
  const std::size_t offset = image_id ? 0 : 1;
  const std::size_t box_at = offset + 3 + (profile.alpha_column ? 1 : 0);
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank_or_comment(line)) continue;
    const auto t = tokens(line);
    auto report = [&](std::string msg) { result.diagnostics.push_back({file_label, lineno, std::move(msg)}); };
    if (t.size() < box_at + 4) {
      report("expected at least " + std::to_string(box_at + 4) + " fields, got " + std::to_string(t.size()));
      continue;
    }
    const std::string& cls = t[offset];
    if (std::find(profile.ignored_classes.begin(), profile.ignored_classes.end(), cls) !=
        profile.ignored_classes.end()) {
      continue;
    }
    GroundTruth g;
    g.image_id = image_id ? *image_id : t[0];
    const auto named = std::find(profile.class_names.begin(), profile.class_names.end(), cls);
    if (named != profile.class_names.end()) {
      g.class_id = static_cast<int>(named - profile.class_names.begin());
    } else if (auto k = try_parse_int(cls); k && *k >= 0) {
      g.class_id = static_cast<int>(*k);
    } else {
      report("unknown class '" + cls + "' for profile " + profile.name);
      continue;
    }
    const auto trunc = try_parse_double(t[offset + 1]);
    const auto occ = try_parse_int(t[offset + 2]);
    std::array<std::optional<double>, 4> box;
    for (int i = 0; i < 4; ++i) box[i] = try_parse_double(t[box_at + i]);
    if (!trunc || !occ || !box[0] || !box[1] || !box[2] || !box[3]) {
      report("non-numeric field");
      continue;
    }
    g.truncation = *trunc;
    g.occlusion = static_cast<int>(*occ);
    g.corners = {*box[1], *box[0], *box[3], *box[2]};  // file order is xmin ymin xmax ymax
    if (!g.corners.valid()) {
      report("box corners are not ordered (xmin < xmax, ymin < ymax)");
      continue;
    }
    if (g.occlusion < 0 || g.occlusion > profile.max_occlusion) {
      report("occlusion " + std::to_string(g.occlusion) + " outside the " + profile.name + " range 0.." +
             std::to_string(profile.max_occlusion));
    }
    result.records.push_back(std::move(g));
  }
  return result;
}

GtReadResult read_ground_truth(const std::filesystem::path& path, const GtProfile& profile) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    GtReadResult all;
    for (const auto& f : files) {
      std::ifstream in(f);
      if (!in) throw Error("cannot open " + f.string());
      auto part = parse_ground_truth(in, profile, f.stem().string(), f.string());
      all.records.insert(all.records.end(), part.records.begin(), part.records.end());
      all.diagnostics.insert(all.diagnostics.end(), part.diagnostics.begin(), part.diagnostics.end());
    }
    return all;
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_ground_truth(in, profile, std::nullopt, path.string());
}

namespace {

void write_gt_fields(std::ostream& out, const GroundTruth& g) {
  out << g.image_id << " " << g.class_id << " " << format_double(g.truncation) << " " << g.occlusion << " "
      << format_double(g.corners.xmin) << " " << format_double(g.corners.ymin) << " "
      << format_double(g.corners.xmax) << " " << format_double(g.corners.ymax);
}

}  // namespace

void write_ground_truth(std::ostream& out, std::span<const GroundTruth> truths) {
  out << "# image_id class truncation occlusion xmin ymin xmax ymax\n";
  for (const auto& g : truths) {
    check_token(g.image_id, "image_id");
    write_gt_fields(out, g);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// detections

std::string_view to_string(CoordinateSpace s) { return s == CoordinateSpace::kImage ? "image" : "anchor"; }

namespace {

constexpr std::string_view kDetMagic = "locunc-detections";
constexpr std::string_view kPairsMagic = "locunc-pairs";

bool quality_column(std::span<const Detection> dets) {
  const auto with = std::count_if(dets.begin(), dets.end(), [](const auto& d) { return d.quality.has_value(); });
  if (with != 0 && static_cast<std::size_t>(with) != dets.size()) {
    throw FormatError("quality must be present on all detections or on none");
  }
  return with != 0;
}

void write_det_fields(std::ostream& out, const Detection& d, bool quality) {
  out << d.image_id << " " << d.class_id << " " << optional_token(d.score);
  for (const auto& m : d.box.coords) out << " " << format_double(m.mean);
  for (const auto& m : d.box.coords) out << " " << format_double(m.sd);
  if (quality) out << " " << optional_token(d.quality);
}

// Reads the fields written by write_det_fields starting at t[0].
Detection parse_det_fields(const std::vector<std::string>& t, bool quality) {
  Detection d;
  d.image_id = t[0];
  d.class_id = static_cast<int>(parse_int(t[1]));
  d.score = parse_optional(t[2]);
  for (int i = 0; i < 4; ++i) {
    d.box.coords[i].mean = parse_double(t[3 + i]);
    d.box.coords[i].sd = parse_double(t[7 + i]);
    if (!(d.box.coords[i].sd >= 0)) throw ParseError("negative sigma");
  }
  if (quality) d.quality = parse_optional(t[11]);
  return d;
}

struct Header {
  std::string magic;
  std::map<std::string, std::string> fields;
};

Header parse_header(const std::string& line) {
  const auto t = tokens(line);
  if (t.size() < 3 || t[0] != "#") throw FormatError("missing file header");
  Header h{t[1], {}};
  if (t[2] != "v1") throw FormatError("unsupported format version " + t[2]);
  for (std::size_t i = 3; i < t.size(); ++i) {
    const auto eq = t[i].find('=');
    if (eq == std::string::npos) throw FormatError("bad header field '" + t[i] + "'");
    h.fields[t[i].substr(0, eq)] = t[i].substr(eq + 1);
  }
  return h;
}

bool header_flag(const Header& h, const std::string& key) {
  auto it = h.fields.find(key);
  if (it == h.fields.end()) return false;
  if (it->second == "1") return true;
  if (it->second == "0") return false;
  throw FormatError("header field " + key + " must be 0 or 1");
}

}  // namespace

void write_detections(std::ostream& out, std::span<const Detection> detections) {
  const bool quality = quality_column(detections);
  out << "# " << kDetMagic << " v1 space=image quality=" << (quality ? 1 : 0) << "\n";
  out << "# image_id class_id score y x h w sd_y sd_x sd_h sd_w" << (quality ? " quality" : "") << "\n";
  for (const auto& d : detections) {
    check_token(d.image_id, "image_id");
    write_det_fields(out, d, quality);
    out << "\n";
  }
}

void write_anchor_detections(std::ostream& out, std::span<const AnchorDetection> detections) {
  const auto with = std::count_if(detections.begin(), detections.end(),
                                  [](const auto& d) { return d.quality.has_value(); });
  if (with != 0 && static_cast<std::size_t>(with) != detections.size()) {
    throw FormatError("quality must be present on all detections or on none");
  }
  const bool quality = with != 0;
  out << "# " << kDetMagic << " v1 space=anchor quality=" << (quality ? 1 : 0) << "\n";
  out << "# image_id class_id score anchor mu_y mu_x mu_h mu_w sd_y sd_x sd_h sd_w" << (quality ? " quality" : "")
      << "\n";
  for (const auto& d : detections) {
    check_token(d.image_id, "image_id");
    out << d.image_id << " " << d.class_id << " " << optional_token(d.score) << " " << d.anchor_index;
    for (const auto& g : d.offsets.coords) out << " " << format_double(g.mu());
    for (const auto& g : d.offsets.coords) out << " " << format_double(g.sd());
    if (quality) out << " " << optional_token(d.quality);
    out << "\n";
  }
}

DetectionsFile parse_detections(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty detections file");
  const auto header = parse_header(line);
  if (header.magic != kDetMagic) throw FormatError("not a detections file");
  DetectionsFile file;
  const auto space = header.fields.find("space");
  if (space == header.fields.end()) throw FormatError("detections header lacks space=");
  if (space->second == "image") {
    file.space = CoordinateSpace::kImage;
  } else if (space->second == "anchor") {
    file.space = CoordinateSpace::kAnchor;
  } else {
    throw FormatError("unknown coordinate space '" + space->second + "'");
  }
  file.has_quality = header_flag(header, "quality");
  const std::size_t expected = (file.space == CoordinateSpace::kImage ? 11 : 12) + (file.has_quality ? 1 : 0);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank_or_comment(line)) continue;
    const auto t = tokens(line);
    try {
      if (t.size() != expected) {
        throw ParseError("expected " + std::to_string(expected) + " fields, got " + std::to_string(t.size()));
      }
      if (file.space == CoordinateSpace::kImage) {
        file.detections.push_back(parse_det_fields(t, file.has_quality));
      } else {
        AnchorDetection d;
        d.image_id = t[0];
        d.class_id = static_cast<int>(parse_int(t[1]));
        d.score = parse_optional(t[2]);
        const auto idx = parse_int(t[3]);
        if (idx < 0) throw ParseError("negative anchor index");
        d.anchor_index = static_cast<std::size_t>(idx);
        for (int i = 0; i < 4; ++i) {
          const double sd = parse_double(t[8 + i]);
          if (!(sd >= 0)) throw ParseError("negative sigma");
          d.offsets.coords[i] = Gaussian1(parse_double(t[4 + i]), sd * sd);
        }
        if (file.has_quality) d.quality = parse_optional(t[12]);
        file.anchor_detections.push_back(std::move(d));
      }
    } catch (const Error& e) {
      throw ParseError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return file;
}

DetectionsFile read_detections_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_detections(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  auto f = read_detections_file(path);
  if (f.space != CoordinateSpace::kImage) {
    throw FormatError(path.string() + ": expected image-space detections, header declares space=anchor");
  }
  return std::move(f.detections);
}

std::vector<AnchorDetection> read_anchor_detections(const std::filesystem::path& path) {
  auto f = read_detections_file(path);
  if (f.space != CoordinateSpace::kAnchor) {
    throw FormatError(path.string() + ": expected anchor-relative detections, header declares space=image");
  }
  return std::move(f.anchor_detections);
}

// ---------------------------------------------------------------------------
// pairs

void write_pairs(std::ostream& out, std::span<const MatchedPair> pairs) {
  bool quality = false;
  {
    std::size_t with = 0;
    for (const auto& p : pairs) with += p.detection.quality.has_value();
    if (with != 0 && with != pairs.size()) throw FormatError("quality must be present on all detections or on none");
    quality = with != 0;
  }
  out << "# " << kPairsMagic << " v1 quality=" << (quality ? 1 : 0) << "\n";
  out << "# image_id class_id score y x h w sd_y sd_x sd_h sd_w" << (quality ? " quality" : "")
      << " gt_class occlusion truncation ymin xmin ymax xmax\n";
  for (const auto& p : pairs) {
    check_token(p.detection.image_id, "image_id");
    write_det_fields(out, p.detection, quality);
    const auto& g = p.truth;
    out << " " << g.class_id << " " << g.occlusion << " " << format_double(g.truncation) << " "
        << format_double(g.corners.ymin) << " " << format_double(g.corners.xmin) << " "
        << format_double(g.corners.ymax) << " " << format_double(g.corners.xmax) << "\n";
  }
}

std::vector<MatchedPair> parse_pairs(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty pairs file");
  const auto header = parse_header(line);
  if (header.magic != kPairsMagic) throw FormatError("not a pairs file");
  const bool quality = header_flag(header, "quality");
  const std::size_t det_fields = 11 + (quality ? 1 : 0);
  std::vector<MatchedPair> pairs;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank_or_comment(line)) continue;
    const auto t = tokens(line);
    try {
      if (t.size() != det_fields + 7) {
        throw ParseError("expected " + std::to_string(det_fields + 7) + " fields, got " + std::to_string(t.size()));
      }
      const Detection d = parse_det_fields(t, quality);
      GroundTruth g;
      g.image_id = d.image_id;
      g.class_id = static_cast<int>(parse_int(t[det_fields]));
      g.occlusion = static_cast<int>(parse_int(t[det_fields + 1]));
      g.truncation = parse_double(t[det_fields + 2]);
      g.corners = {parse_double(t[det_fields + 3]), parse_double(t[det_fields + 4]), parse_double(t[det_fields + 5]),
                   parse_double(t[det_fields + 6])};
      if (!g.corners.valid()) throw ParseError("ground-truth corners are not ordered");
      pairs.push_back(make_pair(d, g));
    } catch (const Error& e) {
      throw ParseError("pairs line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

std::vector<MatchedPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_pairs(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_unmatched(std::ostream& out, std::span<const Detection> detections, std::span<const GroundTruth> truths) {
  out << "# locunc-unmatched v1\n";
  for (const auto& d : detections) {
    out << "det ";
    write_det_fields(out, d, false);
    out << " " << optional_token(d.quality) << "\n";
  }
  for (const auto& g : truths) {
    out << "gt ";
    write_gt_fields(out, g);
    out << "\n";
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace locunc
