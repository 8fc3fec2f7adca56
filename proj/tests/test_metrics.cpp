#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "locunc/error.hpp"
#include "locunc/match.hpp"
#include "locunc/metrics.hpp"

using namespace locunc;

namespace {

MatchedPair pair_of(std::array<double, 4> mean, std::array<double, 4> sd, std::array<double, 4> truth) {
  Detection d;
  d.image_id = "img";
  for (int i = 0; i < 4; ++i) d.box.coords[i] = {mean[i], sd[i]};
  GroundTruth g;
  g.image_id = "img";
  g.corners = Corners::from_center_size(truth[0], truth[1], truth[2], truth[3]);
  return make_pair(d, g);
}

double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Standard normal quantile by bisection on phi.
double phi_inv(double p) {
  double lo = -40, hi = 40;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phi(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Pairs whose signed errors are drawn from N(0, (sd_true)^2) while the
// reported SD is factor * sd_true.
std::vector<MatchedPair> drawn_pairs(std::size_t n, double factor, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(1, 20);
  std::vector<MatchedPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 4> m{200, 300, 80, 60}, s{}, t{};
    for (int c = 0; c < 4; ++c) {
      const double st = u(gen);
      s[c] = factor * st;
      t[c] = m[c] + st * z(gen);
    }
    t[2] = std::abs(t[2]);
    t[3] = std::abs(t[3]);
    out.push_back(pair_of(m, s, t));
  }
  return out;
}

MatchedPair with_sigma_obj(double s, double area, int occlusion = 0, double iou_value = 0.5) {
  auto p = pair_of({0, 0, 10, 10}, {s, s, s, s}, {0, 0, std::sqrt(area), std::sqrt(area)});
  p.truth.occlusion = occlusion;
  p.iou = iou_value;
  return p;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("sigma_obj examples") {
    Detection d;
    d.box.coords = {Moments1{0, 2}, Moments1{0, 2}, Moments1{0, 2}, Moments1{0, 2}};
    CHECK(sigma_obj(d) == 2.0);
    d.box.coords = {Moments1{0, 1}, Moments1{0, 2}, Moments1{0, 3}, Moments1{0, 4}};
    CHECK(sigma_obj(d) == 2.5);
    d.box.coords = {Moments1{0, 4}, Moments1{0, 1}, Moments1{0, 3}, Moments1{0, 2}};
    CHECK(sigma_obj(d) == 2.5);
  }

  TEST_CASE("hand-built three pair set") {
    const std::vector<MatchedPair> pairs{
        pair_of({10, 20, 30, 40}, {1, 2, 3, 4}, {11, 18, 33, 40}),
        pair_of({50, 60, 20, 10}, {0.5, 0.5, 2, 1}, {50, 61, 19, 12}),
        pair_of({5, 5, 8, 8}, {2, 2, 2, 2}, {4, 7, 8, 5}),
    };
    CHECK(rmsue(pairs) == doctest::Approx(1.4288690166235205).epsilon(1e-14));
    CHECK(maue(pairs) == doctest::Approx(0.9166666666666666).epsilon(1e-14));
    CHECK(sharpness(pairs) == doctest::Approx(4.291666666666667).epsilon(1e-14));
    CHECK(nll(pairs) == doctest::Approx(1.9716464808736542).epsilon(1e-14));
    CHECK(rmse(pairs) == doctest::Approx(1.6832508230603465).epsilon(1e-14));
    CHECK(mean_iou(pairs) == doctest::Approx(0.6862963476245071).epsilon(1e-14));
    CHECK(coverage(pairs) == 0.75);
    const auto r = evaluate(pairs);
    CHECK(r.pairs == 3);
    CHECK(r.items == 12);
    CHECK(r.rmsue == rmsue(pairs));
    CHECK(r.ece == ece(pairs));
  }

  TEST_CASE("residual equal to sigma gives zero rmsue and maue") {
    const std::vector<MatchedPair> pairs{pair_of({10, 10, 10, 10}, {1, 2, 3, 4}, {11, 8, 13, 14}),
                                        pair_of({0, 0, 5, 5}, {0.5, 0.5, 0.5, 0.5}, {0.5, -0.5, 5.5, 4.5})};
    CHECK(rmsue(pairs) == 0);
    CHECK(maue(pairs) == 0);
  }

  TEST_CASE("nll of an exact unit-sigma prediction") {
    const std::vector<MatchedPair> pairs{pair_of({10, 10, 10, 10}, {1, 1, 1, 1}, {10, 10, 10, 10})};
    CHECK(nll(pairs) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)));
    CHECK(nll(pairs) == doctest::Approx(0.9189).epsilon(1e-4));
  }

  TEST_CASE("ece with residuals drawn from the predicted gaussians") {
    const auto pairs = drawn_pairs(100000, 1.0, 3);
    CHECK(ece(pairs) <= 0.01);
    CHECK(ece(pairs, {10, EceVariant::kOneSidedCdf}) <= 0.01);
  }

  TEST_CASE("ece under threefold sigma inflation matches analytic coverage") {
    const auto pairs = drawn_pairs(100000, 3.0, 4);
    double central = 0, one_sided = 0;
    for (int j = 1; j <= 10; ++j) {
      const double p = j / 10.0;
      const double pc = j == 10 ? 1.0 : 2 * phi(3 * phi_inv((1 + p) / 2)) - 1;
      const double po = j == 10 ? 1.0 : phi(3 * phi_inv(p));
      central += std::abs(p - pc) / 10;
      one_sided += std::abs(p - po) / 10;
    }
    CHECK(central >= 0.25);
    const double got = ece(pairs);
    CHECK(got >= 0.25);
    CHECK(got == doctest::Approx(central).epsilon(0.02));
    CHECK(ece(pairs, {10, EceVariant::kOneSidedCdf}) == doctest::Approx(one_sided).epsilon(0.03));
  }

  TEST_CASE("a single level is always zero") {
    for (double f : {0.2, 1.0, 5.0}) {
      const auto pairs = drawn_pairs(500, f, 11);
      CHECK(ece(pairs, {1, EceVariant::kCentralInterval}) == 0);
      CHECK(ece(pairs, {1, EceVariant::kOneSidedCdf}) == 0);
    }
  }

  TEST_CASE("ece depends only on the standardized errors") {
    const auto pairs = drawn_pairs(2000, 1.7, 12);
    const double ref = ece(pairs);
    // Same z values at a different scale and offset.
    std::vector<MatchedPair> rebuilt;
    for (const auto& p : pairs) {
      const auto e = p.signed_error();
      std::array<double, 4> m{}, s{}, t{};
      for (int c = 0; c < 4; ++c) {
        const double z = e[c] / p.detection.box.coords[c].sd;
        s[c] = 0.25;
        m[c] = 1000 + c;
        t[c] = m[c] + z * s[c];
      }
      rebuilt.push_back(pair_of(m, s, t));
    }
    CHECK(ece(rebuilt) == doctest::Approx(ref).epsilon(1e-12));
  }

  TEST_CASE("metrics are permutation invariant") {
    auto pairs = drawn_pairs(3000, 1.3, 13);
    const auto ref = evaluate(pairs);
    std::mt19937_64 gen(5);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(pairs.begin(), pairs.end(), gen);
      const auto r = evaluate(pairs);
      CHECK(r.ece == ref.ece);
      CHECK(r.rmse == doctest::Approx(ref.rmse).epsilon(1e-12));
      CHECK(r.nll == doctest::Approx(ref.nll).epsilon(1e-12));
      CHECK(r.rmsue == doctest::Approx(ref.rmsue).epsilon(1e-12));
      CHECK(r.maue == doctest::Approx(ref.maue).epsilon(1e-12));
      CHECK(r.sharpness == doctest::Approx(ref.sharpness).epsilon(1e-12));
      CHECK(r.miou == doctest::Approx(ref.miou).epsilon(1e-12));
      CHECK(r.coverage_1sigma == ref.coverage_1sigma);
    }
  }

  TEST_CASE("report invariants and errors") {
    const auto r = evaluate(drawn_pairs(1000, 0.5, 14));
    CHECK(r.miou >= 0);
    CHECK(r.miou <= 1);
    CHECK(r.sharpness >= 0);
    CHECK(r.ece >= 0);
    CHECK(r.ece <= 1);
    std::vector<MatchedPair> zero{pair_of({1, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 1, 1})};
    CHECK_THROWS_AS(ece(zero), DomainError);
    CHECK_THROWS_AS(nll(zero), DomainError);
    CHECK_THROWS_AS(rmse(std::vector<MatchedPair>{}), DomainError);
  }

  TEST_CASE("report serialization records the ece convention") {
    const auto r = evaluate(drawn_pairs(100, 1.0, 15), {10, EceVariant::kOneSidedCdf});
    const auto j = nlohmann::json::parse(to_json(r));
    CHECK(j["ece_variant"] == "one-sided-cdf");
    CHECK(j["ece_levels"] == 10);
    CHECK(j["pairs"] == 100);
    CHECK(j["ece"].get<double>() == r.ece);
    CHECK(j["nll"].get<double>() == r.nll);
    const auto text = to_text(r);
    CHECK(text.find("one-sided-cdf") != std::string::npos);
    CHECK(text.find("sharpness") != std::string::npos);
  }

  TEST_CASE("correlate with constant sigma") {
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 50; ++i) pairs.push_back(with_sigma_obj(3.0, 100 + 10 * i));
    const auto c = correlate(pairs, Conditioning::kArea, 5);
    REQUIRE(c.bins.size() == 5);
    for (const auto& b : c.bins) {
      CHECK(b.normalized_mean == doctest::Approx(1.0));
      CHECK(b.count == 10);
    }
  }

  TEST_CASE("correlate bins partition the data") {
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 97; ++i) pairs.push_back(with_sigma_obj(1 + u(gen), 50 + 5000 * u(gen)));
    for (int bins : {1, 3, 7, 10, 200}) {
      const auto c = correlate(pairs, Conditioning::kArea, bins);
      CHECK(c.bins.size() == static_cast<std::size_t>(std::min(bins, 97)));
      std::size_t total = 0;
      double max_mean = 0;
      for (std::size_t i = 0; i < c.bins.size(); ++i) {
        CHECK(c.bins[i].count >= 1);
        total += c.bins[i].count;
        max_mean = std::max(max_mean, c.bins[i].mean);
        if (i > 0) CHECK(c.bins[i].lo >= c.bins[i - 1].hi);
      }
      CHECK(total == pairs.size());
      CHECK(c.normalizer == max_mean);
    }
    CHECK_THROWS(correlate(pairs, Conditioning::kQuality, 4));
    CHECK_THROWS(correlate(pairs, Conditioning::kArea, 0));
  }

  TEST_CASE("sigma decreasing in area gives decreasing bin means") {
    std::mt19937_64 gen(22);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 1000; ++i) {
      const double area = 100 + 20000 * u(gen);
      pairs.push_back(with_sigma_obj(100.0 / std::sqrt(area), area));
    }
    const auto c = correlate(pairs, Conditioning::kArea, 8);
    for (std::size_t i = 1; i < c.bins.size(); ++i) CHECK(c.bins[i].mean < c.bins[i - 1].mean);
    CHECK(c.bins.front().normalized_mean == 1.0);
  }

  TEST_CASE("occlusion bins by level") {
    std::mt19937_64 gen(23);
    std::normal_distribution<double> n(0, 0.05);
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 4000; ++i) {
      const int occ = i % 2;
      const double s = (occ ? 1.34 : 1.0) * (1 + n(gen));
      pairs.push_back(with_sigma_obj(s, 1000, occ));
    }
    const auto c = correlate(pairs, Conditioning::kOcclusion, 10);
    REQUIRE(c.bins.size() == 2);
    CHECK(c.bins[0].lo == 0);
    CHECK(c.bins[1].lo == 1);
    CHECK(c.bins[0].mean / c.bins[1].mean == doctest::Approx(1 / 1.34).epsilon(0.01));
    CHECK(c.bins[0].normalized_mean == doctest::Approx(0.746).epsilon(0.01));
  }

  TEST_CASE("correlation output formats") {
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 6; ++i) pairs.push_back(with_sigma_obj(1 + i, 100 * (i + 1)));
    const auto c = correlate(pairs, Conditioning::kArea, 3);
    const auto csv = to_csv(c);
    CHECK(csv.rfind("bin_center,mean,sd,normalized_mean\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    const auto j = nlohmann::json::parse(to_json(c));
    CHECK(j["by"] == "area");
    CHECK(j["bins"].size() == 3);
    CHECK(j["bins"][2]["normalized_mean"].get<double>() == 1.0);
    CHECK(parse_conditioning("rmse") == Conditioning::kRmsePerObject);
    CHECK_THROWS_AS(parse_conditioning("brightness"), ConfigError);
  }

  TEST_CASE("md/cd split with degenerate partitions") {
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 5; ++i) pairs.push_back(with_sigma_obj(2, 100, 0, 0.6));
    const std::vector<double> th{0.0, 0.6, 1.0};
    const auto rows = md_cd_uncertainty(pairs, th);
    REQUIRE(rows.size() == 3);
    CHECK_FALSE(rows[0].misdetections.has_value());
    CHECK(rows[0].correct->count == 5);
    CHECK(rows[1].misdetections->count == 5);
    CHECK_FALSE(rows[1].correct.has_value());
    const auto j = nlohmann::json::parse(to_json(rows));
    CHECK(j[0]["misdetections"].is_null());
    CHECK(j[0]["correct"]["mean"].get<double>() == 2.0);
    const auto csv = to_csv(rows);
    CHECK(csv.find("0,,") != std::string::npos);
  }

  TEST_CASE("md uncertainty above cd when sigma tracks 1 - iou") {
    std::mt19937_64 gen(24);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> n(0, 0.05);
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 3000; ++i) {
      const double v = u(gen);
      pairs.push_back(with_sigma_obj(std::max(1e-3, 1 - v + n(gen)), 100, 0, v));
    }
    const std::vector<double> th{0.1, 0.3, 0.5, 0.7, 0.9};
    for (const auto& r : md_cd_uncertainty(pairs, th)) {
      REQUIRE(r.misdetections.has_value());
      REQUIRE(r.correct.has_value());
      CHECK(r.misdetections->mean > r.correct->mean);
    }
    // Threshold zero: every overlapping pair is correct.
    pairs.push_back(with_sigma_obj(1, 100, 0, 0.0));
    const std::vector<double> zero{0.0};
    const auto r0 = md_cd_uncertainty(pairs, zero);
    CHECK(r0[0].correct->count == pairs.size() - 1);
    CHECK(r0[0].misdetections->count == 1);
  }

  TEST_CASE("size buckets") {
    CHECK(size_bucket(31.9 * 31.9) == SizeBucket::kSmall);
    CHECK(size_bucket(32.0 * 32.0) == SizeBucket::kMedium);
    CHECK(size_bucket(96.0 * 96.0) == SizeBucket::kLarge);
    std::vector<MatchedPair> pairs{with_sigma_obj(1, 100), with_sigma_obj(1, 2000), with_sigma_obj(1, 20000),
                                   with_sigma_obj(1, 50)};
    const auto s = split_by_size(pairs);
    CHECK(s[0].size() == 2);
    CHECK(s[1].size() == 1);
    CHECK(s[2].size() == 1);
    CHECK(to_string(SizeBucket::kMedium) == "medium");
  }
}
