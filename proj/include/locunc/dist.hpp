#pragma once

// Scalar Gaussians, invertible transform chains and the three engines that
// push a Gaussian through a chain: closed form (log-normal identities),
// Gauss-Hermite quadrature and seeded Monte Carlo.
//
// Everything here is templated on the scalar type; `double` aliases are
// provided at the bottom for the rest of the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "locunc/error.hpp"

namespace locunc {

template <typename Scalar>
class Gaussian {
 public:
  Gaussian() = default;
  Gaussian(Scalar mu, Scalar var) : mu_(mu), var_(var) {
    using std::isfinite;
    if (!isfinite(mu) || !isfinite(var)) throw DomainError("Gaussian: non-finite parameter");
    if (var < Scalar(0)) throw DomainError("Gaussian: negative variance");
  }

  Scalar mu() const { return mu_; }
  Scalar var() const { return var_; }
  Scalar sd() const {
    using std::sqrt;
    return sqrt(var_);
  }
  bool is_point_mass() const { return var_ == Scalar(0); }

  Scalar log_pdf(Scalar z) const {
    using std::log;
    if (var_ <= Scalar(0)) throw DomainError("Gaussian::log_pdf: variance must be positive");
    const Scalar d = z - mu_;
    return Scalar(-0.5) * (d * d / var_ + log(Scalar(2) * std::numbers::pi_v<Scalar> * var_));
  }

 private:
  Scalar mu_{0};
  Scalar var_{0};
};

template <typename Scalar>
struct Moments {
  Scalar mean{0};
  Scalar sd{0};
};

enum class BijectorKind { kAffine, kExp, kSigmoid };

/// One scalar invertible map. `inverse_log_abs_deriv(y)` is log|d inverse / dy|,
/// the per-step contribution to the change-of-variables term.
template <typename Scalar>
class Bijector {
 public:
  static Bijector affine(Scalar scale, Scalar shift) {
    using std::isfinite;
    if (scale == Scalar(0)) throw DomainError("Affine bijector: scale must be non-zero");
    if (!isfinite(scale) || !isfinite(shift)) throw DomainError("Affine bijector: non-finite parameter");
    return Bijector(BijectorKind::kAffine, scale, shift);
  }
  static Bijector exp() { return Bijector(BijectorKind::kExp, Scalar(1), Scalar(0)); }
  static Bijector sigmoid() { return Bijector(BijectorKind::kSigmoid, Scalar(1), Scalar(0)); }

  BijectorKind kind() const { return kind_; }
  Scalar scale() const { return scale_; }
  Scalar shift() const { return shift_; }

  Scalar forward(Scalar z) const {
    using std::exp;
    switch (kind_) {
      case BijectorKind::kAffine:
        return scale_ * z + shift_;
      case BijectorKind::kExp:
        return exp(z);
      case BijectorKind::kSigmoid:
        if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
        {
          const Scalar e = exp(z);
          return e / (Scalar(1) + e);
        }
    }
    return z;
  }

  bool in_image(Scalar y) const {
    switch (kind_) {
      case BijectorKind::kAffine:
        return true;
      case BijectorKind::kExp:
        return y > Scalar(0);
      case BijectorKind::kSigmoid:
        return y > Scalar(0) && y < Scalar(1);
    }
    return false;
  }

  Scalar inverse(Scalar y) const {
    using std::log;
    using std::log1p;
    check_image(y);
    switch (kind_) {
      case BijectorKind::kAffine:
        return (y - shift_) / scale_;
      case BijectorKind::kExp:
        return log(y);
      case BijectorKind::kSigmoid:
        return log(y) - log1p(-y);
    }
    return y;
  }

  Scalar inverse_log_abs_deriv(Scalar y) const {
    using std::abs;
    using std::log;
    using std::log1p;
    check_image(y);
    switch (kind_) {
      case BijectorKind::kAffine:
        return -log(abs(scale_));
      case BijectorKind::kExp:
        return -log(y);
      case BijectorKind::kSigmoid:
        return -(log(y) + log1p(-y));
    }
    return Scalar(0);
  }

 private:
  Bijector(BijectorKind kind, Scalar scale, Scalar shift) : kind_(kind), scale_(scale), shift_(shift) {}

  void check_image(Scalar y) const {
    if (!in_image(y)) {
      throw DomainError(kind_ == BijectorKind::kExp ? "Exp inverse requires y > 0"
                                                    : "Sigmoid inverse requires 0 < y < 1");
    }
  }

  BijectorKind kind_;
  Scalar scale_;
  Scalar shift_;
};

/// Ordered composition; steps[0] is applied first in the forward direction.
template <typename Scalar>
class TransformChain {
 public:
  TransformChain() = default;
  TransformChain(std::initializer_list<Bijector<Scalar>> steps) : steps_(steps) {}
  explicit TransformChain(std::vector<Bijector<Scalar>> steps) : steps_(std::move(steps)) {}

  std::span<const Bijector<Scalar>> steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }

  TransformChain then(Bijector<Scalar> step) const {
    auto s = steps_;
    s.push_back(step);
    return TransformChain(std::move(s));
  }

  bool is_affine() const {
    return std::all_of(steps_.begin(), steps_.end(),
                       [](const auto& b) { return b.kind() == BijectorKind::kAffine; });
  }

  Scalar forward(Scalar z) const {
    for (const auto& b : steps_) z = b.forward(z);
    return z;
  }

  Scalar inverse(Scalar y) const {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) y = it->inverse(y);
    return y;
  }

  /// log p_Y(y) = log p_Z(f(y)) + log|Df(y)|, f = full inverse.
  Scalar log_density(const Gaussian<Scalar>& base, Scalar y) const {
    Scalar log_det = 0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      log_det += it->inverse_log_abs_deriv(y);
      y = it->inverse(y);
    }
    return base.log_pdf(y) + log_det;
  }

 private:
  std::vector<Bijector<Scalar>> steps_;
};

template <typename Scalar>
Scalar chain_forward(const TransformChain<Scalar>& chain, Scalar z) {
  return chain.forward(z);
}

template <typename Scalar>
Scalar chain_log_density(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base, Scalar y) {
  return chain.log_density(base, y);
}

/// Mean and SD of exp(Z), Z ~ N(mu, var).
template <typename Scalar>
Moments<Scalar> lognormal_moments(Scalar mu, Scalar var) {
  using std::exp;
  using std::expm1;
  using std::sqrt;
  return {exp(mu + var / Scalar(2)), exp(mu) * sqrt(exp(var) * expm1(var))};
}

namespace detail {

template <typename Scalar>
Gaussian<Scalar> affine_gaussian(const Gaussian<Scalar>& g, const Bijector<Scalar>& a) {
  return Gaussian<Scalar>(a.scale() * g.mu() + a.shift(), a.scale() * a.scale() * g.var());
}

template <typename Scalar>
Moments<Scalar> affine_moments(const Moments<Scalar>& m, const Bijector<Scalar>& a) {
  using std::abs;
  return {a.scale() * m.mean + a.shift(), abs(a.scale()) * m.sd};
}

template <typename Scalar>
Moments<Scalar> pure_affine(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base) {
  Moments<Scalar> m{base.mu(), base.sd()};
  for (const auto& b : chain.steps()) m = affine_moments(m, b);
  return m;
}

template <typename Scalar>
Moments<Scalar> point_mass(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base) {
  return {chain.forward(base.mu()), Scalar(0)};
}

}  // namespace detail

/// Exact pushforward moments for the structurally recognised families:
/// a pure affine chain, or affine* -> Exp -> affine*. Anything else yields
/// std::nullopt ("no closed form").
template <typename Scalar>
std::optional<Moments<Scalar>> propagate_closed_form(const TransformChain<Scalar>& chain,
                                                     const Gaussian<Scalar>& base) {
  const auto steps = chain.steps();
  std::size_t i = 0;
  Gaussian<Scalar> g = base;
  while (i < steps.size() && steps[i].kind() == BijectorKind::kAffine) g = detail::affine_gaussian(g, steps[i++]);
  if (i == steps.size()) return detail::pure_affine(chain, base);
  if (steps[i].kind() != BijectorKind::kExp) return std::nullopt;
  Moments<Scalar> m = lognormal_moments(g.mu(), g.var());
  for (++i; i < steps.size(); ++i) {
    if (steps[i].kind() != BijectorKind::kAffine) return std::nullopt;
    m = detail::affine_moments(m, steps[i]);
  }
  return m;
}

/// Gauss-Hermite rule for expectations under N(0, 1):
///   E[f(X)] ~= sum_i weights[i] * f(nodes[i]).
/// Nodes come from the Golub-Welsch eigenproblem and are Newton-polished;
/// weights are Christoffel numbers so tail weights keep full relative accuracy.
template <typename Scalar>
class GaussHermiteRule {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit GaussHermiteRule(int n) {
    using std::abs;
    using std::sqrt;
    if (n < 1) throw DomainError("GaussHermiteRule: need at least one node");
    nodes_.resize(n);
    weights_.resize(n);
    if (n == 1) {
      nodes_(0) = 0;
      weights_(0) = 1;
      return;
    }
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> jacobi =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
    for (int k = 1; k < n; ++k) {
      jacobi(k, k - 1) = jacobi(k - 1, k) = sqrt(Scalar(k));
    }
    Eigen::SelfAdjointEigenSolver<decltype(jacobi)> solver(jacobi, Eigen::EigenvaluesOnly);
    nodes_ = solver.eigenvalues();
    for (int i = 0; i < n; ++i) {
      Scalar x = nodes_(i);
      for (int it = 0; it < 4; ++it) {
        auto [pn, pn1, sumsq] = orthonormal(x, n);
        const Scalar step = pn / (sqrt(Scalar(n)) * pn1);
        x -= step;
        if (abs(step) <= Scalar(4) * Eigen::NumTraits<Scalar>::epsilon() * (Scalar(1) + abs(x))) break;
      }
      nodes_(i) = x;
      weights_(i) = Scalar(1) / std::get<2>(orthonormal(x, n));
    }
    weights_ /= weights_.sum();
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Vector& nodes() const { return nodes_; }
  const Vector& weights() const { return weights_; }

 private:
  // Orthonormal probabilists' Hermite p_n(x), p_{n-1}(x) and sum_{k<n} p_k(x)^2.
  static std::tuple<Scalar, Scalar, Scalar> orthonormal(Scalar x, int n) {
    using std::sqrt;
    Scalar prev = 0;
    Scalar cur = 1;
    Scalar sumsq = 0;
    for (int k = 0; k < n; ++k) {
      sumsq += cur * cur;
      const Scalar next = (x * cur - sqrt(Scalar(k)) * prev) / sqrt(Scalar(k + 1));
      prev = cur;
      cur = next;
    }
    return {cur, prev, sumsq};
  }

  Vector nodes_;
  Vector weights_;
};

inline constexpr int kDefaultQuadratureNodes = 64;

template <typename Scalar>
Moments<Scalar> propagate_quadrature(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base,
                                     const GaussHermiteRule<Scalar>& rule) {
  using std::sqrt;
  if (rule.size() < 2) throw DomainError("propagate_quadrature: need at least two nodes");
  if (chain.is_affine()) return detail::pure_affine(chain, base);
  if (base.is_point_mass()) return detail::point_mass(chain, base);
  const Scalar sd = base.sd();
  const int n = rule.size();
  typename GaussHermiteRule<Scalar>::Vector values(n);
  for (int i = 0; i < n; ++i) values(i) = chain.forward(base.mu() + sd * rule.nodes()(i));
  const Scalar mean = rule.weights().dot(values);
  const Scalar var = rule.weights().dot((values.array() - mean).square().matrix());
  return {mean, sqrt(std::max(var, Scalar(0)))};
}

template <typename Scalar>
Moments<Scalar> propagate_quadrature(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base,
                                     int nodes = kDefaultQuadratureNodes) {
  if (nodes < 2) throw DomainError("propagate_quadrature: need at least two nodes");
  return propagate_quadrature(chain, base, GaussHermiteRule<Scalar>(nodes));
}

/// Sample mean / SD (n-1 denominator) of chain.forward over `samples` draws.
/// Deterministic for a given seed. Pure affine chains and point-mass bases are
/// Gaussian-closed and returned exactly.
template <typename Scalar>
Moments<Scalar> propagate_mc(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base, long long samples,
                             std::uint64_t seed) {
  using std::sqrt;
  if (samples < 2) throw DomainError("propagate_mc: need at least two samples");
  if (chain.is_affine()) return detail::pure_affine(chain, base);
  if (base.is_point_mass()) return detail::point_mass(chain, base);
  std::mt19937_64 gen(seed);
  std::normal_distribution<Scalar> normal(base.mu(), base.sd());
  Scalar mean = 0;
  Scalar m2 = 0;
  for (long long i = 0; i < samples; ++i) {
    const Scalar v = chain.forward(normal(gen));
    const Scalar d = v - mean;
    mean += d / Scalar(i + 1);
    m2 += d * (v - mean);
  }
  return {mean, sqrt(m2 / Scalar(samples - 1))};
}

/// Closed form when the chain is structurally recognised, quadrature otherwise.
template <typename Scalar>
Moments<Scalar> propagate_chain(const TransformChain<Scalar>& chain, const Gaussian<Scalar>& base,
                                const GaussHermiteRule<Scalar>* rule = nullptr) {
  if (auto m = propagate_closed_form(chain, base)) return *m;
  if (rule) return propagate_quadrature(chain, base, *rule);
  return propagate_quadrature(chain, base, kDefaultQuadratureNodes);
}

using Gaussian1 = Gaussian<double>;
using Moments1 = Moments<double>;
using Bijector1 = Bijector<double>;
using Chain1 = TransformChain<double>;

}  // namespace locunc
