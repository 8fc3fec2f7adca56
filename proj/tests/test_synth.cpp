#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "locunc/anchor.hpp"
#include "locunc/error.hpp"
#include "locunc/io.hpp"
#include "locunc/match.hpp"
#include "locunc/metrics.hpp"
#include "locunc/synth.hpp"

using namespace locunc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("locunc_synth_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Pairs by construction: without missed or surplus detections the i-th
// detection belongs to the i-th ground truth.
std::vector<MatchedPair> paired(const SynthData& d) {
  REQUIRE(d.detections.size() == d.truths.size());
  std::vector<MatchedPair> out;
  out.reserve(d.truths.size());
  for (std::size_t i = 0; i < d.truths.size(); ++i) out.push_back(make_pair(d.detections[i], d.truths[i]));
  return out;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("same seed gives byte-identical files") {
    SynthConfig cfg;
    cfg.seed = 42;
    cfg.n_images = 20;
    cfg.surplus_rate = 0.1;
    cfg.missed_rate = 0.1;
    cfg.occlusion_probs = {0.5, 0.3, 0.2};
    const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    write_synth(a, generate(cfg), AnchorGridConfig{});
    write_synth(b, generate(cfg), AnchorGridConfig{});
    for (const char* f : {"gt.txt", "detections.txt", "truth_noise.txt", "detections_anchor.txt", "anchors.cfg"}) {
      CHECK(slurp(a / f) == slurp(b / f));
      CHECK_FALSE(slurp(a / f).empty());
    }
    cfg.seed = 43;
    write_synth(c, generate(cfg));
    CHECK(slurp(a / "detections.txt") != slurp(c / "detections.txt"));
    CHECK_FALSE(fs::exists(c / "detections_anchor.txt"));
  }

  TEST_CASE("boxes lie inside the image") {
    SynthConfig cfg;
    cfg.n_images = 200;
    cfg.surplus_rate = 0.3;
    const auto d = generate(cfg);
    for (const auto& g : d.truths) {
      CHECK(g.corners.ymin >= 0);
      CHECK(g.corners.xmin >= 0);
      CHECK(g.corners.ymax <= cfg.image_height);
      CHECK(g.corners.xmax <= cfg.image_width);
      const double side = std::sqrt(g.area());
      CHECK(side >= cfg.min_size * (1 - 1e-12));
      CHECK(side <= cfg.max_size * (1 + 1e-12));
    }
    for (const auto& det : d.detections) {
      CHECK(det.box[Coord::kH].mean > 0);
      CHECK(det.box[Coord::kW].mean > 0);
    }
  }

  TEST_CASE("empirical noise matches the configured sigma per bucket") {
    // Absolute noise, no jitter: every (occlusion level, coordinate) bucket
    // has one fixed true sigma.
    SynthConfig cfg;
    cfg.seed = 7;
    cfg.n_images = 2000;
    cfg.objects_per_image = 10;
    cfg.relative_sigma = false;
    cfg.jitter = 0;
    cfg.base_sigma = {1.0, 1.5, 2.0, 2.5};
    cfg.occlusion_probs = {0.5, 0.5};
    cfg.occlusion_multiplier = 1.6;
    cfg.min_size = 40;
    const auto d = generate(cfg);
    const auto pairs = paired(d);
    std::map<int, std::array<std::vector<double>, 4>> errs;
    for (const auto& p : pairs) {
      const auto e = p.signed_error();
      for (int c = 0; c < 4; ++c) errs[p.truth.occlusion][c].push_back(e[c]);
    }
    REQUIRE(errs.size() == 2);
    for (const auto& [occ, by_coord] : errs) {
      for (int c = 0; c < 4; ++c) {
        const auto& v = by_coord[c];
        REQUIRE(v.size() >= 9000);
        double m = 0, ss = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) ss += (x - m) * (x - m);
        const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        const double expected = cfg.base_sigma[c] * std::pow(cfg.occlusion_multiplier, occ);
        CHECK(sd == doctest::Approx(expected).epsilon(0.03));
      }
    }
    for (std::size_t i = 0; i < d.noise.size(); ++i) {
      CHECK(d.noise[i].detection_index == i);
      CHECK(d.noise[i].sd_true[0] == doctest::Approx(std::pow(1.6, d.truths[i].occlusion)));
    }
  }

  TEST_CASE("standardized errors are unit normal under jitter and area scaling") {
    SynthConfig cfg;
    cfg.seed = 8;
    cfg.n_images = 1000;
    cfg.jitter = 0.5;
    cfg.area_exponent = 0.3;
    cfg.quality_coupling = 1.0;
    const auto d = generate(cfg);
    const auto pairs = paired(d);
    for (int c = 0; c < 4; ++c) {
      double ss = 0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double z = pairs[i].signed_error()[c] / d.noise[i].sd_true[c];
        ss += z * z;
      }
      CHECK(std::sqrt(ss / static_cast<double>(pairs.size())) == doctest::Approx(1.0).epsilon(0.03));
    }
  }

  TEST_CASE("area exponent and quality coupling shape the true sigma") {
    SynthConfig cfg;
    cfg.n_images = 50;
    cfg.jitter = 0;
    cfg.relative_sigma = false;
    cfg.area_exponent = 0.5;
    cfg.quality_coupling = 2.0;
    const auto d = generate(cfg);
    for (std::size_t i = 0; i < d.truths.size(); ++i) {
      const double expected =
          0.05 * std::pow(d.truths[i].area() / cfg.reference_area, -0.5) * (1 + 2.0 * *d.detections[i].quality);
      CHECK(d.noise[i].sd_true[2] == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("calibrated by construction at k = 1") {
    SynthConfig cfg;
    cfg.seed = 9;
    cfg.n_images = 2500;
    cfg.objects_per_image = 40;
    const auto pairs = paired(generate(cfg));
    REQUIRE(pairs.size() == 100000);
    CHECK(ece(pairs) <= 0.01);
    CHECK(ece(pairs, {10, EceVariant::kOneSidedCdf}) <= 0.01);
    CHECK(coverage(pairs) == doctest::Approx(0.6827).epsilon(0.01));
  }

  TEST_CASE("k = 1/3 over-reports sigma threefold") {
    SynthConfig cfg;
    cfg.seed = 10;
    cfg.n_images = 1000;
    cfg.k = 1.0 / 3.0;
    const auto d = generate(cfg);
    for (std::size_t i = 0; i < d.detections.size(); ++i) {
      for (int c = 0; c < 4; ++c) {
        CHECK(d.detections[i].box.coords[c].sd == doctest::Approx(3 * d.noise[i].sd_true[c]).epsilon(1e-12));
      }
    }
    CHECK(coverage(paired(d)) == doctest::Approx(0.9973).epsilon(0.003));
  }

  TEST_CASE("per-class k and miscalibration power") {
    SynthConfig cfg;
    cfg.n_images = 100;
    cfg.class_frequencies = {1, 1};
    cfg.class_k = {0.5, 2.0};
    const auto d = generate(cfg);
    for (std::size_t i = 0; i < d.detections.size(); ++i) {
      const double k = cfg.class_k[static_cast<std::size_t>(d.detections[i].class_id)];
      CHECK(d.detections[i].box.coords[1].sd == doctest::Approx(d.noise[i].sd_true[1] / k).epsilon(1e-12));
    }
    cfg = SynthConfig{};
    cfg.n_images = 20;
    cfg.miscalibration_power = 0.5;
    const auto e = generate(cfg);
    for (std::size_t i = 0; i < e.detections.size(); ++i) {
      const double w = e.truths[i].corners.width();
      const double r = e.noise[i].sd_true[3] / w;
      CHECK(e.detections[i].box.coords[3].sd == doctest::Approx(std::sqrt(0.05 * r) * w).epsilon(1e-12));
    }
  }

  TEST_CASE("missed and surplus detections") {
    SynthConfig cfg;
    cfg.n_images = 500;
    cfg.missed_rate = 0.2;
    cfg.surplus_rate = 0.1;
    const auto d = generate(cfg);
    const double n = static_cast<double>(d.truths.size());
    const double expected = n * (0.8 + 0.1);
    CHECK(static_cast<double>(d.detections.size()) == doctest::Approx(expected).epsilon(0.03));
    CHECK(d.noise.size() == d.detections.size());
  }

  TEST_CASE("invalid configurations") {
    auto bad = [](auto mutate) {
      SynthConfig cfg;
      mutate(cfg);
      CHECK_THROWS_AS(generate(cfg), ConfigError);
    };
    bad([](SynthConfig& c) { c.max_size = 600; });  // larger than the image
    bad([](SynthConfig& c) { c.k = 0; });
    bad([](SynthConfig& c) { c.area_exponent = -1; });
    bad([](SynthConfig& c) { c.surplus_rate = 1.5; });
    bad([](SynthConfig& c) { c.missed_rate = -0.1; });
    bad([](SynthConfig& c) { c.occlusion_probs = {0.5, 0.6}; });
    bad([](SynthConfig& c) { c.class_frequencies = {}; });
    bad([](SynthConfig& c) {
      c.class_frequencies = {1, 1};
      c.class_k = {1};
    });
    bad([](SynthConfig& c) { c.min_size = 0; });
  }

  TEST_CASE("truth-noise sidecar round trip") {
    SynthConfig cfg;
    cfg.n_images = 10;
    const auto d = generate(cfg);
    std::stringstream s;
    write_truth_noise(s, d.noise);
    const auto back = parse_truth_noise(s);
    REQUIRE(back.size() == d.noise.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].image_id == d.noise[i].image_id);
      CHECK(back[i].detection_index == d.noise[i].detection_index);
      CHECK(back[i].sd_true == d.noise[i].sd_true);
    }
    std::istringstream bad("img 1 2 3\n");
    CHECK_THROWS_AS(parse_truth_noise(bad), FormatError);
  }

  TEST_CASE("anchor-space view decodes back to the image-space detections") {
    SynthConfig cfg;
    cfg.n_images = 20;
    const AnchorGridConfig grid;
    const auto d = generate(cfg);
    const auto anchored = to_anchor_space(d.detections, grid);
    REQUIRE(anchored.size() == d.detections.size());
    for (std::size_t i = 0; i < anchored.size(); ++i) {
      const auto back = decode(anchored[i].offsets, anchor_at(grid, anchored[i].anchor_index), DecodeVariant{});
      for (int c = 0; c < 4; ++c) {
        const auto& want = d.detections[i].box.coords[c];
        CHECK(back.coords[c].mean == doctest::Approx(want.mean).epsilon(1e-10));
        CHECK(back.coords[c].sd == doctest::Approx(want.sd).epsilon(1e-10));
      }
    }
  }
}
