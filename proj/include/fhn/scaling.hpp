#pragma once

// Parabolic scaling, space-time points and scaled norms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fhn {

/// Anisotropic scaling s = (s0; s1..sd). Time carries s0, each spatial axis s_i.
struct Scaling {
  int s0 = 2;
  std::vector<int> spatial{1, 1, 1};

  static Scaling parabolic(int d) {
    if (d != 2 && d != 3) throw std::invalid_argument("parabolic scaling: d must be 2 or 3");
    return Scaling{2, std::vector<int>(static_cast<std::size_t>(d), 1)};
  }

  int dim() const { return static_cast<int>(spatial.size()); }

  int total_degree() const {
    int sum = s0;
    for (int si : spatial) sum += si;
    return sum;
  }

  void validate() const {
    if (s0 < 1) throw std::invalid_argument("scaling: s0 must be >= 1");
    for (int si : spatial)
      if (si < 1) throw std::invalid_argument("scaling: spatial exponents must be >= 1");
  }
};

struct SpacetimePoint {
  double t = 0.0;
  std::vector<double> x;

  SpacetimePoint() = default;
  SpacetimePoint(double t_, std::vector<double> x_) : t(t_), x(std::move(x_)) {}

  int dim() const { return static_cast<int>(x.size()); }

  SpacetimePoint operator-(const SpacetimePoint& o) const {
    SpacetimePoint r(t - o.t, x);
    for (std::size_t i = 0; i < x.size(); ++i) r.x[i] -= o.x[i];
    return r;
  }
  SpacetimePoint operator+(const SpacetimePoint& o) const {
    SpacetimePoint r(t + o.t, x);
    for (std::size_t i = 0; i < x.size(); ++i) r.x[i] += o.x[i];
    return r;
  }
};

struct Multiindex {
  int k0 = 0;
  std::vector<int> spatial;

  Multiindex() = default;
  Multiindex(int k0_, std::vector<int> ks) : k0(k0_), spatial(std::move(ks)) {}
};

/// max_i |z_i|^{1/s_i}
inline double parabolic_norm(double t, const double* x, int d, const Scaling& s) {
  double r = s.s0 == 2 ? std::sqrt(std::abs(t)) : std::pow(std::abs(t), 1.0 / s.s0);
  for (int i = 0; i < d; ++i) {
    const int si = s.spatial[static_cast<std::size_t>(i)];
    const double xi = si == 1 ? std::abs(x[i]) : std::pow(std::abs(x[i]), 1.0 / si);
    r = std::max(r, xi);
  }
  return r;
}

inline double parabolic_norm(const SpacetimePoint& z, const Scaling& s) {
  if (z.dim() != s.dim()) throw std::invalid_argument("parabolic_norm: dimension mismatch");
  return parabolic_norm(z.t, z.x.data(), z.dim(), s);
}

/// Minimal-image wrap of a coordinate difference into [-L/2, L/2).
inline double wrap_minimal(double dx, double L) {
  double r = std::fmod(dx, L);
  if (r < -0.5 * L) r += L;
  if (r >= 0.5 * L) r -= L;
  return r;
}

/// Parabolic distance on [0, T] x T^d_L: time unwrapped, space wrapped.
inline double torus_parabolic_distance(const SpacetimePoint& z1, const SpacetimePoint& z2, double L,
                                       const Scaling& s) {
  if (!(L > 0.0)) throw std::invalid_argument("torus_parabolic_distance: L must be positive");
  SpacetimePoint diff = z1 - z2;
  for (double& xi : diff.x) xi = wrap_minimal(xi, L);
  return parabolic_norm(diff, s);
}

inline int multiindex_degree(const Multiindex& k, const Scaling& s) {
  int deg = s.s0 * k.k0;
  for (std::size_t i = 0; i < k.spatial.size() && i < s.spatial.size(); ++i)
    deg += s.spatial[i] * k.spatial[i];
  return deg;
}

/// Scaled dilation (lambda^{s0} t, lambda^{s_i} x_i).
inline SpacetimePoint dilate(const SpacetimePoint& z, double lambda, const Scaling& s) {
  SpacetimePoint r(std::pow(lambda, s.s0) * z.t, z.x);
  for (std::size_t i = 0; i < r.x.size(); ++i) r.x[i] *= std::pow(lambda, s.spatial[i]);
  return r;
}

}  // namespace fhn
