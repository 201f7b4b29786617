#pragma once

// Heat kernel G = K + R, dyadic pieces K_n, cutoff kernel Q and the pieces
// K^Q_{nm} of the time-convolved kernel, together with the numerical checks of
// their support, derivative and moment bounds.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fhn/quadrature.hpp"
#include "fhn/scaling.hpp"

namespace fhn {

/// Smooth even bump on [-1, 1] with sum_m phi(m + t) = 1.
/// On (0, 1): 1/2 + 1/2 tanh(1/θ - 1/(1-θ)), evaluated in logistic form so the
/// tails stay nonzero down to the underflow threshold.
inline double bump_phi(double theta) {
  const double a = std::abs(theta);
  if (a >= 1.0) return 0.0;
  if (a == 0.0) return 1.0;
  const double y = 1.0 / a - 1.0 / (1.0 - a);
  const double v = 1.0 / (1.0 + std::exp(-2.0 * y));
  return std::clamp(v, 0.0, 1.0);
}

/// 1 - bump_phi(theta), accurate where bump_phi is close to 1.
inline double bump_phi_complement(double theta) {
  const double a = std::abs(theta);
  if (a >= 1.0) return 1.0;
  if (a == 0.0) return 0.0;
  const double y = 1.0 / a - 1.0 / (1.0 - a);
  return std::clamp(1.0 / (1.0 + std::exp(2.0 * y)), 0.0, 1.0);
}

/// (t^2 + |x|^4)^{1/4}: smooth away from the origin and exactly 1-homogeneous under
/// parabolic dilation. Dominates the max-form norm, so a support statement in this
/// norm implies the same statement in the max-form norm.
inline double smooth_parabolic_norm(double t, double r) {
  return std::sqrt(std::sqrt(t * t + r * r * r * r));
}

inline double euclidean_norm(const double* x, int d) {
  double r2 = 0.0;
  for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
  return std::sqrt(r2);
}

/// Whole-space heat kernel as a function of t and r = |x|.
inline double heat_kernel_radial(double t, double r, int d) {
  if (t <= 0.0) return 0.0;
  return std::pow(4.0 * std::numbers::pi * t, -0.5 * d) * std::exp(-r * r / (4.0 * t));
}

inline double heat_kernel(double t, const double* x, int d) {
  return heat_kernel_radial(t, euclidean_norm(x, d), d);
}

inline double heat_kernel(const SpacetimePoint& z) { return heat_kernel(z.t, z.x.data(), z.dim()); }

/// Heat kernel on the torus of side L. Image sum for short times, Fourier series
/// for long times; both truncated at relative error 1e-12.
inline double heat_kernel_torus(double t, const double* x, int d, double L) {
  if (!(L > 0.0)) throw std::invalid_argument("heat_kernel_torus: L must be positive");
  if (t <= 0.0) return 0.0;
  const double pi = std::numbers::pi;
  if (t < 0.05 * L * L) {
    // images with |x + nL| beyond sqrt(4 t * 30) contribute < e^{-30} relative
    const int nmax = 1 + static_cast<int>(std::ceil(std::sqrt(120.0 * t) / L));
    double per_axis_total = 1.0;
    for (int i = 0; i < d; ++i) {
      const double xi = wrap_minimal(x[i], L);
      double s = 0.0;
      for (int n = -nmax; n <= nmax; ++n) {
        const double y = xi + n * L;
        s += std::exp(-y * y / (4.0 * t));
      }
      per_axis_total *= s / std::sqrt(4.0 * pi * t);
    }
    return per_axis_total;
  }
  // (1/L) sum_k exp(-(2 pi k / L)^2 t) cos(2 pi k x / L) per axis
  double total = 1.0;
  for (int i = 0; i < d; ++i) {
    double s = 1.0;
    for (int k = 1;; ++k) {
      const double w = 2.0 * pi * k / L;
      const double term = std::exp(-w * w * t);
      s += 2.0 * term * std::cos(w * x[i]);
      if (term < 1e-17) break;
    }
    total *= s / L;
  }
  return total;
}

/// Q(t) = a1 e^{a2 t} chi(t) with chi = 1 on [0, T], 0 on [2T, inf).
struct CutoffKernelSpec {
  double a1 = 1.0;
  double a2 = 0.0;
  double T = 1.0;

  void validate() const {
    if (!(T > 0.0)) throw std::invalid_argument("CutoffKernelSpec: horizon T must be positive");
  }

  double chi(double t) const {
    if (t < 0.0) return 0.0;
    if (t <= T) return 1.0;
    if (t >= 2.0 * T) return 0.0;
    return bump_phi((t - T) / T);
  }

  double q(double t) const {
    if (t < 0.0 || t >= 2.0 * T) return 0.0;
    return a1 * std::exp(a2 * t) * chi(t);
  }

  double sup_abs() const {
    // |a1| e^{a2 t} chi(t) is maximal at t = 0 or somewhere in [0, 2T]; sample densely
    double best = 0.0;
    for (int i = 0; i <= 4000; ++i) best = std::max(best, std::abs(q(2.0 * T * i / 4000.0)));
    return best;
  }
};

inline double q_kernel(double t, const CutoffKernelSpec& spec) { return spec.q(t); }

struct PieceIndex {
  int n = 0;
  long m = 0;
  bool operator==(const PieceIndex&) const = default;
};

inline long max_shift_index(int n, double T, int s0) {
  return static_cast<long>(std::floor(1.0 + 2.0 * T * std::ldexp(1.0, s0 * n)));
}

/// All (n, m) with 0 <= n <= n_max and -1 <= m <= 1 + 2T 2^{s0 n}.
inline std::vector<PieceIndex> index_set(int n_max, double T, const Scaling& s) {
  if (n_max < 0) throw std::invalid_argument("index_set: n_max must be >= 0");
  if (!(T > 0.0)) throw std::invalid_argument("index_set: T must be positive");
  std::vector<PieceIndex> out;
  for (int n = 0; n <= n_max; ++n) {
    const long mmax = max_shift_index(n, T, s.s0);
    for (long m = -1; m <= mmax; ++m) out.push_back({n, m});
  }
  return out;
}

/// Heat kernel decomposition for the parabolic scaling in d = 2 or 3.
class KernelDecomposition {
 public:
  KernelDecomposition(int d, CutoffKernelSpec q, int n_max = 5, int beta = 2)
      : d_(d), scaling_(Scaling::parabolic(d)), q_(q), n_max_(n_max), beta_(beta) {
    q_.validate();
    if (n_max < 0) throw std::invalid_argument("KernelDecomposition: n_max must be >= 0");
  }

  int dim() const { return d_; }
  const Scaling& scaling() const { return scaling_; }
  const CutoffKernelSpec& cutoff() const { return q_; }
  int n_max() const { return n_max_; }
  int beta() const { return beta_; }
  int s0() const { return scaling_.s0; }

  /// Spatial scale 2^{-n} and time scale 2^{-s0 n} of level n.
  static double level_radius(int n) { return std::ldexp(1.0, -n); }
  double level_time(int n) const { return std::ldexp(1.0, -s0() * n); }

  /// Radius of the ball around h_{nm} containing the support of K^Q_{nm}.
  double support_radius(int n) const { return (1.0 + std::pow(2.0, 1.0 / s0())) * level_radius(n); }

  SpacetimePoint shift(int n, long m) const {
    return SpacetimePoint(static_cast<double>(m) * level_time(n), std::vector<double>(static_cast<std::size_t>(d_), 0.0));
  }

  std::vector<PieceIndex> indices() const { return index_set(n_max_, q_.T, scaling_); }

  // --- G = K + R ---------------------------------------------------------

  double singular_part_radial(double t, double r) const {
    if (t <= 0.0) return 0.0;
    const double rho = smooth_parabolic_norm(t, r);
    if (rho >= 1.0) return 0.0;
    return heat_kernel_radial(t, r, d_) * bump_phi(rho);
  }
  double singular_part(double t, const double* x) const { return singular_part_radial(t, euclidean_norm(x, d_)); }
  double smooth_remainder(double t, const double* x) const {
    const double r = euclidean_norm(x, d_);
    if (t <= 0.0) return 0.0;
    return heat_kernel_radial(t, r, d_) * bump_phi_complement(smooth_parabolic_norm(t, r));
  }

  // --- dyadic pieces -------------------------------------------------------

  /// K_0 = K (1 - phi(2|z|)), K_n = K (phi(2^n |z|) - phi(2^{n+1} |z|)) for n >= 1.
  double dyadic_piece_radial(int n, double t, double r) const {
    if (n < 0) throw std::invalid_argument("dyadic_piece: n must be >= 0");
    if (t <= 0.0) return 0.0;
    const double rho = smooth_parabolic_norm(t, r);
    const double a = std::ldexp(rho, n);
    if (a >= 1.0) return 0.0;
    // phi(a) - phi(2a) and (1 - phi(2a)) - (1 - phi(a)) agree; pick the form without cancellation
    double window;
    if (n == 0)
      window = bump_phi_complement(2.0 * a);
    else if (a >= 0.5)
      window = bump_phi(a) - bump_phi(2.0 * a);
    else
      window = bump_phi_complement(2.0 * a) - bump_phi_complement(a);
    if (window == 0.0) return 0.0;
    return heat_kernel_radial(t, r, d_) * bump_phi(rho) * window;
  }
  double dyadic_piece(int n, double t, const double* x) const {
    return dyadic_piece_radial(n, t, euclidean_norm(x, d_));
  }
  double dyadic_piece(int n, const SpacetimePoint& z) const { return dyadic_piece(n, z.t, z.x.data()); }

  /// Time extent of the support of K_n at spatial radius r: K_n(s, r) = 0 unless 0 < s < s_max.
  double dyadic_time_extent(int n, double r) const {
    const double R = level_radius(n);
    if (r >= R) return 0.0;
    const double R4 = R * R * R * R, r4 = r * r * r * r;
    return std::sqrt(R4 - r4);
  }

  // --- cutoff kernel and its pieces ----------------------------------------

  double q_kernel(double t) const { return q_.q(t); }

  /// Q_{nm}(t) = Q(t) phi(2^{s0 n} (t - m 2^{-s0 n})).
  double q_piece(int n, long m, double t) const {
    const double theta = std::ldexp(t, s0() * n) - static_cast<double>(m);
    if (std::abs(theta) >= 1.0) return 0.0;
    return q_.q(t) * bump_phi(theta);
  }

  /// K^Q_{nm}(t, x) = int Q_{nm}(u) K_n(t - u, x) du by adaptive quadrature.
  double kq_piece(int n, long m, double t, const double* x, double rel_tol = 1e-10) const {
    return kq_piece_radial(n, m, t, euclidean_norm(x, d_), rel_tol);
  }
  double kq_piece(int n, long m, const SpacetimePoint& z, double rel_tol = 1e-10) const {
    return kq_piece(n, m, z.t, z.x.data(), rel_tol);
  }

  double kq_piece_radial(int n, long m, double t, double r, double rel_tol = 1e-10) const {
    const double h = level_time(n);
    const double smax = dyadic_time_extent(n, r);
    if (smax <= 0.0) return 0.0;
    const double lo = std::max({(static_cast<double>(m) - 1.0) * h, 0.0, t - smax});
    const double hi = std::min({(static_cast<double>(m) + 1.0) * h, 2.0 * q_.T, t});
    if (!(hi > lo)) return 0.0;
    auto f = [&](double u) { return q_piece(n, m, u) * dyadic_piece_radial(n, t - u, r); };
    std::vector<double> interior{static_cast<double>(m) * h, q_.T, t - 0.25 * h, t - 0.0625 * h};
    if (r > 0.0) interior.push_back(t - r * r / 6.0);
    try {
      return quad::integrate(f, quad::breakpoints(lo, hi, interior), rel_tol).value;
    } catch (const quad::QuadratureError& e) {
      std::ostringstream os;
      os << "kq_piece: quadrature failed at (n=" << n << ", m=" << m << ", t=" << t << ", |x|=" << r
         << "): " << e.what();
      throw quad::QuadratureError(os.str());
    }
  }

  /// Recentred piece: K^Q_{nm}(z + h_{nm}).
  double kq_shifted_piece(int n, long m, double t, const double* x, double rel_tol = 1e-10) const {
    return kq_piece(n, m, t + static_cast<double>(m) * level_time(n), x, rel_tol);
  }

  /// Direct quadrature of int Q(u) (sum_{n <= N} K_n)(t - u, x) du, the un-split reference.
  double kq_truncated_direct(int N, double t, const double* x, double rel_tol = 1e-12) const {
    const double r = euclidean_norm(x, d_);
    const double smax = dyadic_time_extent(0, r);
    if (smax <= 0.0) return 0.0;
    const double lo = std::max(0.0, t - smax);
    const double hi = std::min(2.0 * q_.T, t);
    if (!(hi > lo)) return 0.0;
    auto ksum = [&](double s) {
      if (s <= 0.0) return 0.0;
      const double rho = smooth_parabolic_norm(s, r);
      if (rho >= 1.0) return 0.0;
      // telescoped: K (1 - phi(2^{N+1} rho))
      return heat_kernel_radial(s, r, d_) * bump_phi(rho) * bump_phi_complement(std::ldexp(rho, N + 1));
    };
    auto f = [&](double u) { return q_.q(u) * ksum(t - u); };
    std::vector<double> interior{q_.T};
    for (int n = 0; n <= 2 * N + 4; ++n) interior.push_back(t - std::ldexp(1.0, -n));
    if (r > 0.0) interior.push_back(t - r * r / 6.0);
    return quad::integrate(f, quad::breakpoints(lo, hi, interior), rel_tol, 20).value;
  }

 private:
  int d_;
  Scaling scaling_;
  CutoffKernelSpec q_;
  int n_max_;
  int beta_;
};

// --- bound verification -------------------------------------------------------

struct SupportCheck {
  bool pass = true;
  double max_violation = 0.0;  ///< largest |K^Q_{nm}| found outside the ball
  std::size_t samples = 0;
  SpacetimePoint witness;
};

/// Samples points with |z - h_{nm}| <= 2*radius_scale*R and radius_scale*R < |z - center| (max-form
/// norm, R the nominal support radius) and checks that K^Q_{nm} vanishes there exactly. The centre is
/// h_{nm} unless `center_override` is given (a negative control: a wrong centre exposes the true support).
inline SupportCheck verify_support(const KernelDecomposition& kd, int n, long m, std::size_t samples,
                                   double radius_scale = 1.0, std::uint64_t seed = 12345,
                                   const SpacetimePoint* center_override = nullptr) {
  const Scaling& s = kd.scaling();
  const double R = radius_scale * kd.support_radius(n);
  const SpacetimePoint center = center_override ? *center_override : kd.shift(n, m);
  std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(n) << 32) ^ static_cast<std::uint64_t>(m + 7));
  const SpacetimePoint origin = kd.shift(n, m);
  const double T_box = 4.0 * R * R, X_box = 2.0 * R;
  const double r_core = KernelDecomposition::level_radius(n);
  std::uniform_real_distribution<double> ut(-T_box, T_box), ux(-X_box, X_box);
  std::uniform_real_distribution<double> ct(-r_core * r_core, r_core * r_core), cx(-r_core, r_core);
  SupportCheck out;
  std::vector<double> x(static_cast<std::size_t>(kd.dim())), xc(x.size());
  for (std::uint64_t draw = 0; out.samples < samples; ++draw) {
    // odd draws sample the core box of the piece
    const bool core = draw % 2 == 1;
    const double dt = core ? ct(rng) : ut(rng);
    for (double& xi : x) xi = core ? cx(rng) : ux(rng);
    if (parabolic_norm(dt, x.data(), kd.dim(), s) > 2.0 * R) continue;
    const double t = origin.t + dt;
    for (std::size_t i = 0; i < x.size(); ++i) xc[i] = origin.x[i] + x[i] - center.x[i];
    if (parabolic_norm(t - center.t, xc.data(), kd.dim(), s) <= R) continue;
    ++out.samples;
    const double v = kd.kq_piece(n, m, t, x.data(), 1e-6);
    if (v != 0.0) {
      out.pass = false;
      if (std::abs(v) > out.max_violation) {
        out.max_violation = std::abs(v);
        out.witness = SpacetimePoint(t, x);
      }
    }
  }
  return out;
}

/// The multiindices of parabolic degree <= max_degree.
inline std::vector<Multiindex> multiindices_up_to(int d, int max_degree, const Scaling& s) {
  std::vector<Multiindex> out;
  const int kmax = max_degree;
  std::vector<int> ks(static_cast<std::size_t>(d), 0);
  for (int k0 = 0; s.s0 * k0 <= max_degree; ++k0) {
    // enumerate spatial exponents by odometer
    std::fill(ks.begin(), ks.end(), 0);
    while (true) {
      Multiindex k(k0, ks);
      if (multiindex_degree(k, s) <= max_degree) out.push_back(k);
      int i = 0;
      while (i < d) {
        if (++ks[static_cast<std::size_t>(i)] <= kmax) break;
        ks[static_cast<std::size_t>(i)] = 0;
        ++i;
      }
      if (i == d) break;
    }
  }
  return out;
}

inline std::string multiindex_label(const Multiindex& k) {
  std::ostringstream os;
  os << k.k0 << ';';
  for (std::size_t i = 0; i < k.spatial.size(); ++i) os << (i ? "," : "") << k.spatial[i];
  return os.str();
}

struct BoundRow {
  int n = 0;
  long m = 0;
  std::string label;  ///< multiindex k (derivatives) or l (moments)
  int degree = 0;     ///< |k|_s or |l|_s
  double raw = 0.0;
  double ratio = 0.0;
};

struct DerivativeSweepOptions {
  int time_offsets = 12;       ///< sample offsets t - m 2^{-s0 n} across (-2h, 2h)
  int rule_panels = 8;         ///< uniform panels of the shift-variable rule on [-1, 1]
  int grading_levels = 14;     ///< geometric panels toward the onset of K_n
  int rule_order = 10;
  double step_fraction = 1.0 / 64.0;  ///< spatial FD step as a fraction of 2^{-n}
};

/// Fixed Gauss-Legendre rule in v for int Q_{nm}((m+v)h) K_n(tau - h v, r) dv with c = tau/h.
/// K_n vanishes unless 0 < c - v < 1; panels are graded geometrically toward v = c.
inline quad::Rule shift_variable_rule(double c, int panels, int grading_levels, int order) {
  const double lo = std::max(-1.0, c - 1.0), hi = std::min(1.0, c);
  if (!(hi > lo)) return {};
  std::vector<double> interior{0.0};
  for (int i = 1; i < panels; ++i) interior.push_back(-1.0 + 2.0 * i / panels);
  for (int j = 0; j <= grading_levels; ++j) interior.push_back(c - std::ldexp(1.0, -j));
  return quad::composite(quad::breakpoints(lo, hi, interior), order);
}

namespace detail {

struct Stencil {
  std::vector<std::vector<int>> offsets;  // per point, offset per axis (time first)
  std::vector<double> weights;
};

/// Tensor-product central-difference stencil for a multiindex (per-axis order <= 2).
inline Stencil make_stencil(const Multiindex& k, double dt_step, double dx_step) {
  std::vector<int> orders{k.k0};
  orders.insert(orders.end(), k.spatial.begin(), k.spatial.end());
  Stencil st;
  st.offsets.push_back(std::vector<int>(orders.size(), 0));
  st.weights.push_back(1.0);
  for (std::size_t ax = 0; ax < orders.size(); ++ax) {
    const double step = ax == 0 ? dt_step : dx_step;
    std::vector<std::pair<int, double>> one;
    switch (orders[ax]) {
      case 0: one = {{0, 1.0}}; break;
      case 1: one = {{-1, -0.5 / step}, {1, 0.5 / step}}; break;
      case 2: one = {{-1, 1.0 / (step * step)}, {0, -2.0 / (step * step)}, {1, 1.0 / (step * step)}}; break;
      default: throw std::invalid_argument("derivative stencil: per-axis order must be <= 2");
    }
    Stencil next;
    for (std::size_t p = 0; p < st.offsets.size(); ++p)
      for (auto [o, w] : one) {
        auto off = st.offsets[p];
        off[ax] = o;
        next.offsets.push_back(off);
        next.weights.push_back(st.weights[p] * w);
      }
    st = std::move(next);
  }
  return st;
}

}  // namespace detail

/// Per-(n, m, k) ratios sup |D^k K^Q_{nm}| 2^{-(|s| - s0 - beta + |k|_s) n}.
///
/// D^k is a central finite difference of a fixed-rule evaluation of K^Q_{nm}, so the
/// difference quotient differentiates one smooth approximation. The kernel values at the
/// rule nodes do not depend on m, which makes a whole level one matrix-vector product per m.
inline std::vector<BoundRow> verify_derivative_bounds(const KernelDecomposition& kd, int n_min, int n_max,
                                                      const std::vector<Multiindex>& ks,
                                                      const DerivativeSweepOptions& opt = {}) {
  const Scaling& s = kd.scaling();
  const int d = kd.dim();
  std::vector<BoundRow> rows;

  for (int n = n_min; n <= n_max; ++n) {
    const double h = kd.level_time(n), R = KernelDecomposition::level_radius(n);
    const double dx = opt.step_fraction * R, dtau = dx * dx;
    if (!(dtau > 0.0) || h + dtau == h) throw std::runtime_error("verify_derivative_bounds: finite-difference step underflow");

    // base sample points relative to h_{nm}
    std::vector<std::vector<double>> dirs;
    if (d == 3)
      dirs = {{1, 0, 0}, {1 / std::sqrt(2.0), 1 / std::sqrt(2.0), 0}, {1 / std::sqrt(3.0), 1 / std::sqrt(3.0), 1 / std::sqrt(3.0)}};
    else
      dirs = {{1, 0}, {1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}};
    const std::vector<double> radii{0.0, 0.15, 0.3, 0.45, 0.6, 0.8};
    struct Base {
      double tau;
      std::vector<double> x;
      quad::Rule rule;
      std::vector<double> bump_w;  // w_q h phi(v_q)
      std::vector<double> q_vals;
    };
    std::vector<Base> bases;
    for (int j = 0; j < opt.time_offsets; ++j) {
      const double tau = -2.0 * h + 4.0 * h * (j + 0.5) / opt.time_offsets;
      for (double rf : radii) {
        const std::size_t nd = rf == 0.0 ? 1 : dirs.size();
        for (std::size_t di = 0; di < nd; ++di) {
          std::vector<double> x(static_cast<std::size_t>(d), 0.0);
          for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = rf * R * dirs[di][static_cast<std::size_t>(i)];
          bases.push_back({tau, x, shift_variable_rule(tau / h, opt.rule_panels, opt.grading_levels, opt.rule_order), {}, {}});
        }
      }
    }
    for (auto& b : bases) {
      b.bump_w.resize(b.rule.size());
      b.q_vals.resize(b.rule.size());
      for (std::size_t q = 0; q < b.rule.size(); ++q) b.bump_w[q] = b.rule.weights[q] * h * bump_phi(b.rule.nodes[q]);
    }

    // kernel rows K_n(tau_p - h v_q, r_p) for every stencil point of every multiindex, using the base's rule
    std::vector<detail::Stencil> stencils;
    for (const auto& k : ks) stencils.push_back(detail::make_stencil(k, dtau, dx));
    struct Point {
      std::size_t base, offset;
    };
    std::vector<Point> points;
    std::vector<double> kvals;
    std::vector<std::vector<std::size_t>> index(ks.size());  // flattened (base, stencil point)
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      for (std::size_t bi = 0; bi < bases.size(); ++bi) {
        const auto& b = bases[bi];
        for (const auto& off : stencils[ki].offsets) {
          const double tau = b.tau + off[0] * dtau;
          double r2 = 0.0;
          for (int i = 0; i < d; ++i) {
            const double xi = b.x[static_cast<std::size_t>(i)] + off[static_cast<std::size_t>(i) + 1] * dx;
            r2 += xi * xi;
          }
          const double r = std::sqrt(r2);
          index[ki].push_back(points.size());
          points.push_back({bi, kvals.size()});
          for (double v : b.rule.nodes) kvals.push_back(kd.dyadic_piece_radial(n, tau - h * v, r));
        }
      }
    }

    const long mmax = max_shift_index(n, kd.cutoff().T, s.s0);
    std::vector<double> vals(points.size());
    for (long m = -1; m <= mmax; ++m) {
      bool all_zero = true;
      for (auto& b : bases)
        for (std::size_t q = 0; q < b.rule.size(); ++q) {
          const double u = (static_cast<double>(m) + b.rule.nodes[q]) * h;
          b.q_vals[q] = b.bump_w[q] * kd.q_kernel(u);
          all_zero = all_zero && b.q_vals[q] == 0.0;
        }
      if (!all_zero) {
        for (std::size_t p = 0; p < points.size(); ++p) {
          const auto& qv = bases[points[p].base].q_vals;
          const double* row = &kvals[points[p].offset];
          double acc = 0.0;
          for (std::size_t q = 0; q < qv.size(); ++q) acc += row[q] * qv[q];
          vals[p] = acc;
        }
      }
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        double sup = 0.0;
        if (!all_zero) {
          const auto& st = stencils[ki];
          const std::size_t per = st.offsets.size();
          for (std::size_t b = 0; b < bases.size(); ++b) {
            double dv = 0.0;
            for (std::size_t j = 0; j < per; ++j) dv += st.weights[j] * vals[index[ki][b * per + j]];
            sup = std::max(sup, std::abs(dv));
          }
        }
        const int deg = multiindex_degree(ks[ki], s);
        const int expo = s.total_degree() - s.s0 - kd.beta() + deg;
        rows.push_back({n, m, multiindex_label(ks[ki]), deg, sup, sup * std::ldexp(1.0, -expo * n)});
      }
    }
  }
  return rows;
}

/// Radial-time moments of K_n: int s^a |x|^p K_n(s, x) ds dx.
inline double dyadic_radial_moment(const KernelDecomposition& kd, int n, int a, int p, double rel_tol = 1e-10) {
  const int d = kd.dim();
  const double h = kd.level_time(n);
  const double sphere = d == 3 ? 4.0 * std::numbers::pi : 2.0 * std::numbers::pi;
  auto inner = [&](double s) {
    const double rmax = std::sqrt(std::sqrt(std::max(0.0, h * h - s * s)));
    if (rmax <= 0.0) return 0.0;
    auto g = [&](double r) { return std::pow(r, p + d - 1) * kd.dyadic_piece_radial(n, s, r); };
    std::vector<double> interior{std::sqrt(6.0 * s), 0.5 * rmax};
    return quad::integrate(g, quad::breakpoints(0.0, rmax, interior), std::min(rel_tol, 1e-12)).value;
  };
  // the inner integral is flat at s = 0; a fixed rule graded toward 0 avoids adapting on quadrature noise
  std::vector<double> edges{0.0};
  for (int j = 40; j >= 1; --j) edges.push_back(std::ldexp(h, -j));
  for (int i = 1; i <= 4; ++i) edges.push_back(0.5 * h + 0.125 * h * i);
  const quad::Rule rule = quad::composite(edges, 20);
  return sphere * rule.apply([&](double s) { return std::pow(s, a) * inner(s); });
}

/// int_{S^{d-1}} w^{l} dw for a spatial multiindex l (zero unless every exponent is even).
inline double sphere_monomial_integral(const std::vector<int>& l) {
  double num = 1.0;
  int half_total = 0;
  for (int li : l) {
    if (li % 2 != 0) return 0.0;
    num *= std::tgamma(0.5 * li + 0.5);
    half_total += li / 2;
  }
  return 2.0 * num / std::tgamma(half_total + 0.5 * static_cast<double>(l.size()));
}

/// int z^l K^Q_{nm}(z) dz, computed as int Q_{nm}(u) int (s + u, x)^l K_n(s, x) ds dx du.
class MomentEvaluator {
 public:
  explicit MomentEvaluator(const KernelDecomposition& kd, double rel_tol = 1e-10) : kd_(kd), tol_(rel_tol) {}

  double moment(int n, long m, const Multiindex& l) {
    const double ang = sphere_monomial_integral(l.spatial);
    if (ang == 0.0) return 0.0;
    int p = 0;
    for (int li : l.spatial) p += li;
    double total = 0.0;
    for (int a = 0; a <= l.k0; ++a) {
      const double u_mom = q_moment(n, m, l.k0 - a);
      if (u_mom == 0.0) continue;
      total += binomial(l.k0, a) * u_mom * radial(n, a, p);
    }
    return ang * total;
  }

  /// int Q_{nm}(u) u^b du
  double q_moment(int n, long m, int b) const {
    const double h = kd_.level_time(n);
    const double lo = std::max((static_cast<double>(m) - 1.0) * h, 0.0);
    const double hi = std::min((static_cast<double>(m) + 1.0) * h, 2.0 * kd_.cutoff().T);
    if (!(hi > lo)) return 0.0;
    auto f = [&](double u) { return kd_.q_piece(n, m, u) * std::pow(u, b); };
    return quad::integrate(f, quad::breakpoints(lo, hi, {static_cast<double>(m) * h, kd_.cutoff().T}), tol_).value;
  }

 private:
  static double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
  }

  // int_0^h s^a int_0^inf r^{p + d - 1} K_n(s, r) dr ds (no angular factor)
  double radial(int n, int a, int p) {
    for (const auto& c : cache_)
      if (c.n == n && c.a == a && c.p == p) return c.value;
    const double sphere = kd_.dim() == 3 ? 4.0 * std::numbers::pi : 2.0 * std::numbers::pi;
    const double v = dyadic_radial_moment(kd_, n, a, p, tol_) / sphere;
    cache_.push_back({n, a, p, v});
    return v;
  }

  struct Entry {
    int n, a, p;
    double value;
  };
  const KernelDecomposition& kd_;
  double tol_;
  std::vector<Entry> cache_;
};

/// Per-(n, m, l) normalised moments |int z^l K^Q_{nm}| 2^{(beta + s0) n}.
inline std::vector<BoundRow> verify_moment_bounds(const KernelDecomposition& kd, int n_min, int n_max,
                                                  const std::vector<Multiindex>& ls, double rel_tol = 1e-10) {
  MomentEvaluator ev(kd, rel_tol);
  const Scaling& s = kd.scaling();
  std::vector<BoundRow> rows;
  for (int n = n_min; n <= n_max; ++n) {
    const long mmax = max_shift_index(n, kd.cutoff().T, s.s0);
    for (long m = -1; m <= mmax; ++m)
      for (const auto& l : ls) {
        const double v = ev.moment(n, m, l);
        rows.push_back({n, m, multiindex_label(l), multiindex_degree(l, s), v,
                        std::abs(v) * std::ldexp(1.0, (kd.beta() + s.s0) * n)});
      }
  }
  return rows;
}

/// Verdict of the uniform-constant proxy: every nonzero ratio is at most factor x the median.
struct UniformityVerdict {
  bool pass = true;
  double worst = 0.0;   ///< largest ratio / median
  double median = 0.0;
  std::size_t count = 0;
  BoundRow witness;
};

namespace detail {
inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}
inline void judge(UniformityVerdict& out, const BoundRow& r, double median, double factor) {
  const double q = r.ratio / median;
  ++out.count;
  if (q > out.worst) {
    out.worst = q;
    out.witness = r;
  }
  if (q > factor) out.pass = false;
}
}  // namespace detail

/// Derivative ratios grouped by multiindex; vanishing pieces are excluded.
inline UniformityVerdict derivative_uniformity(const std::vector<BoundRow>& rows, double factor = 10.0) {
  std::map<std::string, std::vector<double>> fam;
  for (const auto& r : rows)
    if (r.ratio > 0.0) fam[r.label].push_back(r.ratio);
  std::map<std::string, double> med;
  for (auto& [label, v] : fam) med[label] = detail::median_of(v);
  UniformityVerdict out;
  for (const auto& r : rows)
    if (r.ratio > 0.0) detail::judge(out, r, med[r.label], factor);
  out.median = med.empty() ? 0.0 : med.begin()->second;
  return out;
}

/// Moment ratios against the median of the l = 0 family (all families if l = 0 is absent).
inline UniformityVerdict moment_uniformity(const std::vector<BoundRow>& rows, double factor = 10.0) {
  std::vector<double> base, all;
  for (const auto& r : rows) {
    if (!(r.ratio > 0.0)) continue;
    all.push_back(r.ratio);
    if (r.degree == 0) base.push_back(r.ratio);
  }
  UniformityVerdict out;
  out.median = detail::median_of(base.empty() ? all : base);
  for (const auto& r : rows)
    if (r.ratio > 0.0) detail::judge(out, r, out.median, factor);
  return out;
}

}  // namespace fhn
