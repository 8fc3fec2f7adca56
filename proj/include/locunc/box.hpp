#pragma once

#include <array>
#include <string_view>

#include "locunc/dist.hpp"

namespace locunc {

// Coordinate order used everywhere: center y, center x, height, width.
enum class Coord : int { kY = 0, kX = 1, kH = 2, kW = 3 };
inline constexpr int kNumCoords = 4;
inline constexpr std::array<Coord, 4> kAllCoords{Coord::kY, Coord::kX, Coord::kH, Coord::kW};

constexpr int index(Coord c) { return static_cast<int>(c); }

// y and h scale with the object's height, x and w with its width.
constexpr bool is_vertical(Coord c) { return c == Coord::kY || c == Coord::kH; }
constexpr bool is_size(Coord c) { return c == Coord::kH || c == Coord::kW; }

constexpr std::string_view coord_name(Coord c) {
  constexpr std::array<std::string_view, 4> names{"y", "x", "h", "w"};
  return names[index(c)];
}

struct Corners {
  double ymin = 0;
  double xmin = 0;
  double ymax = 0;
  double xmax = 0;

  double height() const { return ymax - ymin; }
  double width() const { return xmax - xmin; }
  double area() const { return height() * width(); }
  double center_y() const { return 0.5 * (ymin + ymax); }
  double center_x() const { return 0.5 * (xmin + xmax); }
  bool valid() const { return ymax > ymin && xmax > xmin; }

  /// (y, x, h, w) center/size parameterisation.
  std::array<double, 4> center_size() const { return {center_y(), center_x(), height(), width()}; }

  static Corners from_center_size(double y, double x, double h, double w) {
    return {y - h / 2, x - w / 2, y + h / 2, x + w / 2};
  }
};

/// Anchor-relative offset distribution for one prediction, one independent
/// Gaussian per coordinate.
struct GaussianBox4 {
  std::array<Gaussian1, 4> coords{};

  const Gaussian1& operator[](Coord c) const { return coords[index(c)]; }
  Gaussian1& operator[](Coord c) { return coords[index(c)]; }
};

/// Image-space box distribution: mean and SD per coordinate, in pixels.
struct DecodedBox {
  std::array<Moments1, 4> coords{};

  const Moments1& operator[](Coord c) const { return coords[index(c)]; }
  Moments1& operator[](Coord c) { return coords[index(c)]; }

  std::array<double, 4> means() const { return {coords[0].mean, coords[1].mean, coords[2].mean, coords[3].mean}; }
  std::array<double, 4> sds() const { return {coords[0].sd, coords[1].sd, coords[2].sd, coords[3].sd}; }

  Corners corners() const {
    return Corners::from_center_size(coords[0].mean, coords[1].mean, coords[2].mean, coords[3].mean);
  }

  static DecodedBox point(const Corners& c) {
    DecodedBox b;
    const auto cs = c.center_size();
    for (int i = 0; i < 4; ++i) b.coords[i] = {cs[i], 0.0};
    return b;
  }

  friend bool operator==(const DecodedBox& a, const DecodedBox& b) {
    for (int i = 0; i < 4; ++i) {
      if (a.coords[i].mean != b.coords[i].mean || a.coords[i].sd != b.coords[i].sd) return false;
    }
    return true;
  }
};

}  // namespace locunc
