#pragma once

// Renormalisation constants C1, C2, the drift counterterms c0, c1, c2, the correlator
// Q0 and the integrals I^Q_{00;nm}.
//
// Continuum quantities are computed for the whole-space heat kernel G and the mollifier
// rho(t, x) = p(t) q(|x|) in units where eps = 1, then rescaled:
//   C1(eps) = eps^{-1} c1(T_cut / eps^2),   Q0_eps(t, r) = eps^{-1} Q0_1(t / eps^2, r / eps).

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <boost/math/interpolators/makima.hpp>

#include "fhn/fft.hpp"
#include "fhn/kernel.hpp"
#include "fhn/noise.hpp"
#include "fhn/quadrature.hpp"

namespace fhn {

// --- coefficients and counterterms ------------------------------------------

struct CubicCoefficients {
  double alpha1 = 0, alpha2 = 0;
  double beta1 = 0, beta2 = 0, beta3 = 0;
  double gamma1 = 0, gamma2 = 0, gamma3 = 0, gamma4 = 0;
  double a1 = 1, a2 = 0;

  /// u + v - u^3 with v' = -u - v.
  static CubicCoefficients standard_fhn() {
    CubicCoefficients c;
    c.alpha1 = 1;
    c.alpha2 = 1;
    c.gamma1 = -1;
    c.a1 = -1;
    c.a2 = -1;
    return c;
  }

  double F(double u, double v) const {
    return alpha1 * u + alpha2 * v + beta1 * u * u + beta2 * u * v + beta3 * v * v + gamma1 * u * u * u +
           gamma2 * u * u * v + gamma3 * u * v * v + gamma4 * v * v * v;
  }
};

struct DriftConstants {
  double c0 = 0, c1 = 0, c2 = 0;
};

/// c0 = -b1 [C1 + 3 g1 C2], c1 = -3 g1 [..], c2 = -g2 [..].
inline DriftConstants drift_constants(const CubicCoefficients& k, double C1, double C2) {
  const double bracket = C1 + 3.0 * k.gamma1 * C2;
  return {-k.beta1 * bracket, -3.0 * k.gamma1 * bracket, -k.gamma2 * bracket};
}

enum class ConstantsMode { continuum, lattice };

struct RenormConstants {
  double eps = 0;
  double C1 = 0, C2 = 0;
  DriftConstants c;
  ConstantsMode mode = ConstantsMode::lattice;
};

// --- divergence fits ----------------------------------------------------------

enum class FitModel { power, log };

struct FitResult {
  double slope = 0;          ///< exponent (power) or coefficient of log(1/eps) (log)
  double intercept = 0;
  double max_rel_residual = 0;
};

/// Least squares of log v on log eps (power) or of v on log(1/eps) (log).
inline FitResult divergence_fit(const std::vector<std::pair<double, double>>& pairs, FitModel model) {
  if (pairs.size() < 3) throw std::invalid_argument("divergence_fit: need at least 3 points");
  std::vector<double> X, Y;
  for (auto [eps, v] : pairs) {
    if (!(eps > 0)) throw std::invalid_argument("divergence_fit: eps must be positive");
    if (model == FitModel::power) {
      if (!(v > 0)) throw std::invalid_argument("divergence_fit: power model needs positive values");
      X.push_back(std::log(eps));
      Y.push_back(std::log(v));
    } else {
      X.push_back(std::log(1.0 / eps));
      Y.push_back(v);
    }
  }
  const double n = static_cast<double>(X.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    sx += X[i];
    sy += Y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    sxx += (X[i] - mx) * (X[i] - mx);
    sxy += (X[i] - mx) * (Y[i] - my);
  }
  if (!(sxx > 0)) throw std::invalid_argument("divergence_fit: eps values must differ");
  FitResult r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double fit = r.intercept + r.slope * X[i];
    const double v = pairs[i].second;
    const double model_v = model == FitModel::power ? std::exp(fit) : fit;
    const double denom = std::max(std::abs(v), 1e-300);
    r.max_rel_residual = std::max(r.max_rel_residual, std::abs(model_v - v) / denom);
  }
  return r;
}

// --- unmollified reference values -------------------------------------------

/// int_delta^T int_{R^3} G(t,x)^2 dx dt by quadrature in (t, |x|).
inline double c1_unmollified_truncated(double delta, double T, double rel_tol = 1e-11) {
  if (!(delta > 0 && T > delta)) throw std::invalid_argument("c1_unmollified_truncated: need 0 < delta < T");
  auto inner = [&](double t) {
    const double w = std::sqrt(t);
    auto f = [&](double r) { return 4.0 * std::numbers::pi * r * r * std::pow(heat_kernel_radial(t, r, 3), 2); };
    return quad::integrate(f, {0.0, w, 2 * w, 4 * w, 8 * w, 16 * w}, rel_tol * 1e-2).value;
  };
  std::vector<double> edges{delta};
  for (double e = 2 * delta; e < T; e *= 2) edges.push_back(e);
  edges.push_back(T);
  return quad::integrate(inner, edges, rel_tol).value;
}

/// (8 pi)^{-3/2} 2 (delta^{-1/2} - T^{-1/2})
inline double c1_unmollified_closed_form(double delta, double T) {
  return std::pow(8.0 * std::numbers::pi, -1.5) * 2.0 * (1.0 / std::sqrt(delta) - 1.0 / std::sqrt(T));
}

/// Unmollified correlator int G(z1) G(z1 - z) dz1 = erf(r / (2 sqrt|t|)) / (8 pi r).
inline double q0_unmollified(double t, double r) {
  const double at = std::abs(t);
  if (at == 0.0) return r > 0 ? 1.0 / (8.0 * std::numbers::pi * r) : INFINITY;
  if (r < 1e-8 * std::sqrt(at)) return 1.0 / (8.0 * std::pow(std::numbers::pi, 1.5) * std::sqrt(at));
  return std::erf(r / (2.0 * std::sqrt(at))) / (8.0 * std::numbers::pi * r);
}

// --- spectral data of the mollifier (eps = 1, d = 3) ---------------------------

/// Time profile p, its autocorrelation P, radial Fourier transform of the space profile,
/// and S(k, tau) = 1/2 int P(w) exp(-k^2 |tau - w|) dw.
class MollifierSpectra {
 public:
  explicit MollifierSpectra(MollifierProfile profile) : spec_{1.0, 3, profile} {
    const auto m = spec_.masses();
    mt_ = m[0];
    mx_ = m[1];
    const int nodes = 4096;
    const double step = 2.0 / nodes;
    std::vector<double> vals(nodes + 1);
    for (int i = 0; i <= nodes; ++i) {
      const double w = i * step;
      auto f = [&](double a) { return p(a) * p(a + w); };
      vals[static_cast<std::size_t>(i)] =
          w >= 2.0 ? 0.0 : quad::integrate(f, quad::breakpoints(-1.0, 1.0 - w, {-w, 0.0, 0.5 - w}), 1e-13).value;
    }
    // P is even, so P'(0) = 0; P vanishes to all orders at w = 2
    P_ = std::make_unique<boost::math::interpolators::cardinal_cubic_b_spline<double>>(vals.begin(), vals.end(), 0.0,
                                                                                         step, 0.0, 0.0);
  }

  const MollifierSpec& spec() const { return spec_; }

  double p(double t) const { return std::abs(t) >= 1.0 ? 0.0 : spec_.shape(t) / mt_; }
  double P(double w) const {
    const double a = std::abs(w);
    return a >= 2.0 ? 0.0 : std::max(0.0, (*P_)(a));
  }

  /// Radial Fourier transform of q(|x|)/m_x; equals 1 at k = 0.
  double rho_hat(double k) const {
    if (k < 1e-6) return 1.0;
    auto f = [&](double r) { return r * std::sin(k * r) * spec_.shape(r); };
    std::vector<double> interior;
    const int periods = static_cast<int>(k / std::numbers::pi);
    for (int j = 1; j <= periods; ++j) interior.push_back(j * std::numbers::pi / k);
    return 4.0 * std::numbers::pi / k * quad::integrate(f, quad::breakpoints(0.0, 1.0, interior), 1e-12).value / mx_;
  }

  /// log int p(a) exp(lambda a) da
  double log_A(double lambda) const {
    auto f = [&](double a) { return p(a) * std::exp(lambda * (a - 1.0)); };
    std::vector<double> interior{0.0};
    if (lambda > 1.0) {
      // the integrand peaks near 1 - a ~ (2 lambda)^{-1/2}
      const double w = 1.0 / std::sqrt(2.0 * lambda);
      for (double j : {0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0, 8.0}) interior.push_back(1.0 - j * w);
    }
    return lambda + std::log(quad::integrate(f, quad::breakpoints(-1.0, 1.0, interior), 1e-12).value);
  }

  /// 1/2 int P(w) exp(-lambda |tau - w|) dw for lambda = k^2.
  double S(double k, double tau) const {
    const double lambda = k * k;
    tau = std::abs(tau);
    if (tau >= 2.0) {
      const double e = 2.0 * log_A(lambda) - lambda * tau;
      return e < -745.0 ? 0.0 : 0.5 * std::exp(e);
    }
    auto f = [&](double w) { return P(w) * std::exp(-lambda * std::abs(tau - w)); };
    std::vector<double> interior{0.0, tau};
    if (lambda > 1.0)
      for (double j : {1.0, 4.0, 16.0, 64.0}) {
        interior.push_back(tau - j / lambda);
        interior.push_back(tau + j / lambda);
      }
    return 0.5 * quad::integrate(f, quad::breakpoints(-2.0, 2.0, interior), 1e-11, 1e-18).value;
  }

  /// Shared instance per profile.
  static std::shared_ptr<const MollifierSpectra> get(MollifierProfile profile) {
    static std::mutex mu;
    static std::map<MollifierProfile, std::shared_ptr<const MollifierSpectra>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[profile];
    if (!slot) slot = std::make_shared<const MollifierSpectra>(profile);
    return slot;
  }

 private:
  MollifierSpec spec_;
  double mt_ = 1, mx_ = 1;
  std::unique_ptr<boost::math::interpolators::cardinal_cubic_b_spline<double>> P_;
};

/// Composite rule in k on [0, k_max]: fine panels near 0, `extra_edges` inserted.
inline quad::Rule wavenumber_rule(double fine_step, double coarse_step, double k_max = 100.0,
                                  std::vector<double> extra_edges = {}) {
  std::vector<double> interior = std::move(extra_edges);
  for (double k = fine_step; k < 1.0; k += fine_step) interior.push_back(k);
  for (double k = 1.0; k < k_max; k += coarse_step) interior.push_back(k);
  return quad::composite(quad::breakpoints(0.0, k_max, interior), 8);
}

// --- C1 -----------------------------------------------------------------------

/// c1(Lambda) = (2 pi^2)^{-1} int |rho_hat(k)|^2 [S(k, 0) - 1/2 A(k^2)^2 exp(-2 k^2 Lambda)] dk,
/// the eps = 1 value of int_{t <= Lambda} int G_1(t, x)^2 dx dt.
inline double c1_scaled(const MollifierSpectra& ms, double Lambda) {
  if (!(Lambda > 1.0)) throw std::invalid_argument("c1: T_cut / eps^2 must exceed 1");
  std::vector<double> extra;
  const double s = 1.0 / std::sqrt(Lambda);
  for (double f : {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0})
    if (f * s < 1.0) extra.push_back(f * s);
  const quad::Rule rule = wavenumber_rule(0.05, 0.25, 100.0, extra);
  return rule.apply([&](double k) {
    const double rh = ms.rho_hat(k);
    const double lam = k * k;
    const double tail = 2.0 * ms.log_A(lam) - 2.0 * lam * Lambda;
    const double corr = tail < -745.0 ? 0.0 : 0.5 * std::exp(tail);
    return rh * rh * (ms.S(k, 0.0) - corr);
  }) / (2.0 * std::numbers::pi * std::numbers::pi);
}

/// Continuum C1(eps) with the time integral cut at T_cut (d = 3).
inline double c1_continuum(double eps, double T_cut, MollifierProfile profile = MollifierProfile::bump) {
  if (!(eps > 0)) throw std::invalid_argument("c1: eps must be positive");
  return c1_scaled(*MollifierSpectra::get(profile), T_cut / (eps * eps)) / eps;
}

/// Exact variance of the lattice stochastic convolution driven by the mollified noise, as
/// produced by the exponential stepper from zero data, at every step 0..n_steps. With
/// include_zero_mode = false the spatial mean of the noise is projected out.
///
/// Per mode Psi_{n+1} = E Psi_n + b eta_n with eta_n = sum_j w_j xi_{n+j}; writing Psi_n = sum_i a_i xi_i,
/// only the coefficients a_i with |i - n| <= J change at step n, so the variance is updated in O(J).
inline std::vector<double> c1_lattice_series(const MollifierSpec& spec, const SpaceTimeLattice& lat,
                                             const SpectralGrid& g, long n_steps, bool include_zero_mode = true) {
  require_resolved(lat, spec.eps);
  if (n_steps < 1) throw std::invalid_argument("c1_lattice: n_steps must be >= 1");
  const auto wt = mollifier_time_weights(spec, lat.dt);
  const auto mult = mollifier_space_multiplier(spec, g);
  const long J = static_cast<long>(wt.size() / 2);
  const std::size_t width = wt.size();
  const double k0sq = std::pow(2.0 * std::numbers::pi / g.side(), 2);

  std::map<long, double> shell;  // |k|^2 -> sum of |w_hat|^2 over the full spectrum
  for (std::size_t q = 0; q < g.spec_size(); ++q) {
    const long key = std::lround(g.lambda()[q] / k0sq);
    if (key == 0 && !include_zero_mode) continue;
    shell[key] += g.mode_weight()[q] * mult[q] * mult[q];
  }

  const double h = lat.dt;
  std::vector<double> total(static_cast<std::size_t>(n_steps) + 1, 0.0);
  std::vector<double> win(width);
  for (const auto& [key, wsum] : shell) {
    const double lam = k0sq * static_cast<double>(key);
    const double E = std::exp(-lam * h);
    const double b = lam == 0.0 ? h : -std::expm1(-lam * h) / lam;
    // win[(i - n + J) mod width] = a_i for i in [n - J, n + J]
    std::fill(win.begin(), win.end(), 0.0);
    double var = 0.0;
    for (long n = 0; n < n_steps; ++n) {
      double cross = 0.0;
      for (long j = -J; j <= J; ++j) {
        const std::size_t slot = static_cast<std::size_t>(((n + j) % static_cast<long>(width) + static_cast<long>(width)) %
                                                          static_cast<long>(width));
        const double bw = b * wt[static_cast<std::size_t>(j + J)];
        const double a = win[slot];
        cross += bw * (2.0 * E * a + bw);
        win[slot] = E * a + bw;
      }
      var = E * E * var + cross;
      // a_{n-J} leaves the window and a_{n+1+J} = 0 enters in its slot
      win[static_cast<std::size_t>(((n - J) % static_cast<long>(width) + static_cast<long>(width)) %
                                   static_cast<long>(width))] = 0.0;
      total[static_cast<std::size_t>(n) + 1] += wsum * var;
    }
  }
  const double norm = lat.cell_volume() * static_cast<double>(g.real_size());
  for (double& v : total) v /= norm;
  return total;
}

inline double c1_lattice(const MollifierSpec& spec, const SpaceTimeLattice& lat, const SpectralGrid& g, long n_steps,
                         bool include_zero_mode = true) {
  return c1_lattice_series(spec, lat, g, n_steps, include_zero_mode).back();
}

// --- correlator Q0 -------------------------------------------------------------

/// Q0_1(tau, rho) = (2 pi^2)^{-1} int sinc(k rho) |rho_hat(k)|^2 S(k, tau) dk by direct quadrature.
/// |rho_hat(k)|^2 < 1e-10 beyond this wavenumber for both profiles
inline constexpr double kCorrelatorKmax = 50.0;

inline double q0_scaled_direct(const MollifierSpectra& ms, double tau, double rho) {
  const quad::Rule rule = wavenumber_rule(0.01, 0.05, kCorrelatorKmax);
  return rule.apply([&](double k) {
    const double rh = ms.rho_hat(k);
    const double x = k * rho;
    const double sinc = x < 1e-8 ? 1.0 : std::sin(x) / x;
    return sinc * rh * rh * ms.S(k, tau);
  }) / (2.0 * std::numbers::pi * std::numbers::pi);
}

/// Q0_1 tabulated on a uniform (sqrt|tau|, rho) grid over [0, extent]^2 with local bicubic
/// interpolation; the unmollified closed form is used outside the table.
class Q0Table {
 public:
  Q0Table(MollifierProfile profile, double step = 0.1, double extent = 30.0)
      : ms_(MollifierSpectra::get(profile)), step_(step), n_(static_cast<int>(std::lround(extent / step)) + 1) {
    if (!(step > 0) || n_ < 8) throw std::invalid_argument("Q0Table: bad grid");
    extent_ = step_ * (n_ - 1);
    const quad::Rule rule = wavenumber_rule(std::min(0.02, step / 5), std::min(0.1, step), kCorrelatorKmax);
    const std::size_t nk = rule.size(), n = static_cast<std::size_t>(n_);
    std::vector<double> A(n * nk), B(nk * n);
    std::vector<double> amp(nk);
    for (std::size_t q = 0; q < nk; ++q) {
      const double rh = ms_->rho_hat(rule.nodes[q]);
      amp[q] = rule.weights[q] * rh * rh / (2.0 * std::numbers::pi * std::numbers::pi);
    }
    std::vector<double> logA(nk);
    for (std::size_t q = 0; q < nk; ++q) logA[q] = ms_->log_A(rule.nodes[q] * rule.nodes[q]);
    for (std::size_t i = 0; i < n; ++i) {
      const double tau = std::pow(step_ * static_cast<double>(i), 2);
      for (std::size_t q = 0; q < nk; ++q) {
        const double k = rule.nodes[q];
        double S;
        if (tau < 2.0) {
          S = ms_->S(k, tau);
        } else {
          const double e = 2.0 * logA[q] - k * k * tau;
          S = e < -745.0 ? 0.0 : 0.5 * std::exp(e);
        }
        A[i * nk + q] = amp[q] * S;
      }
    }
    for (std::size_t q = 0; q < nk; ++q)
      for (std::size_t j = 0; j < n; ++j) {
        const double x = rule.nodes[q] * step_ * static_cast<double>(j);
        B[q * n + j] = x < 1e-8 ? 1.0 : std::sin(x) / x;
      }
    table_.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < nk; ++q) {
        const double a = A[i * nk + q];
        if (a == 0.0) continue;
        const double* b = &B[q * n];
        double* row = &table_[i * n];
        for (std::size_t j = 0; j < n; ++j) row[j] += a * b[j];
      }
  }

  double step() const { return step_; }
  double extent() const { return extent_; }
  const MollifierSpectra& spectra() const { return *ms_; }

  /// Q0_1(tau, rho), eps = 1.
  double operator()(double tau, double rho) const {
    const double s = std::sqrt(std::abs(tau));
    if (s >= extent_ - 2 * step_ || rho >= extent_ - 2 * step_) return q0_unmollified(tau, rho);
    return interp(s / step_, rho / step_);
  }

  /// Q0_eps(t, r) = eps^{-1} Q0_1(t / eps^2, r / eps).
  double at(double eps, double t, double r) const { return (*this)(t / (eps * eps), r / eps) / eps; }

  /// Shared table per (profile, step).
  static std::shared_ptr<const Q0Table> get(MollifierProfile profile, double step = 0.1) {
    static std::mutex mu;
    static std::map<std::pair<MollifierProfile, double>, std::shared_ptr<const Q0Table>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[{profile, step}];
    if (!slot) slot = std::make_shared<const Q0Table>(profile, step);
    return slot;
  }

 private:
  // cubic Lagrange on 4x4 nodes; Q0 is even in both grid variables, so reflect at 0
  double node(int i, int j) const {
    i = std::abs(i);
    j = std::abs(j);
    return table_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)];
  }
  static void weights(double f, double w[4]) {
    // nodes at -1, 0, 1, 2 relative to floor
    w[0] = -f * (f - 1) * (f - 2) / 6.0;
    w[1] = (f + 1) * (f - 1) * (f - 2) / 2.0;
    w[2] = -(f + 1) * f * (f - 2) / 2.0;
    w[3] = (f + 1) * f * (f - 1) / 6.0;
  }
  double interp(double x, double y) const {
    const int i0 = static_cast<int>(std::floor(x)), j0 = static_cast<int>(std::floor(y));
    double wx[4], wy[4];
    weights(x - i0, wx);
    weights(y - j0, wy);
    double v = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) v += wx[a] * wy[b] * node(i0 - 1 + a, j0 - 1 + b);
    return v;
  }

  std::shared_ptr<const MollifierSpectra> ms_;
  double step_;
  int n_;
  double extent_ = 0;
  std::vector<double> table_;
};

/// Q0_eps(t, |x|) with the shared default table.
inline double q0_correlator(double eps, double t, double r, MollifierProfile profile = MollifierProfile::bump) {
  if (!(eps > 0)) throw std::invalid_argument("q0_correlator: eps must be positive");
  return Q0Table::get(profile)->at(eps, t, r);
}

// --- C2 -----------------------------------------------------------------------

/// c_inf = int 4 pi y^2 G(1, y) (erf(y/2) / (8 pi y))^2 dy, so that the unmollified
/// g(tau) = int 4 pi rho^2 G(tau, rho) Q0(tau, rho)^2 d rho equals c_inf / tau.
inline double c2_log_coefficient() {
  auto f = [](double y) {
    const double q = y < 1e-8 ? 1.0 / (8.0 * std::pow(std::numbers::pi, 1.5)) : std::erf(0.5 * y) / (8.0 * std::numbers::pi * y);
    return 4.0 * std::numbers::pi * y * y * heat_kernel_radial(1.0, y, 3) * q * q;
  };
  return quad::integrate(f, {0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 40.0}, 1e-13).value;
}

struct C2Result {
  double value = 0;
  double tail = 0;  ///< analytic c_inf log part beyond tau_asym
};

/// C2(eps) = 2 int_0^{T_cut/eps^2} g(tau) d tau with g from the Q0 table; beyond tau_asym the
/// unmollified g = c_inf / tau is integrated in closed form.
inline C2Result c2_with_table(const Q0Table& q0, double eps, double T_cut, double tau_asym = 400.0) {
  if (!(eps > 0)) throw std::invalid_argument("c2: eps must be positive");
  const double Lambda = T_cut / (eps * eps);
  const double top = std::min(Lambda, tau_asym);
  auto g = [&](double tau) {
    const double w = std::sqrt(tau);
    auto f = [&](double rho) {
      const double q = q0(tau, rho);
      return 4.0 * std::numbers::pi * rho * rho * heat_kernel_radial(tau, rho, 3) * q * q;
    };
    std::vector<double> edges{0.0};
    for (double m : {0.5, 1.0, 2.0, 3.0, 4.5, 6.5, 9.0, 14.0}) edges.push_back(m * w);
    return quad::Rule(quad::composite(edges, 16)).apply(f);
  };
  std::vector<double> edges{0.0};
  for (double e = 1.0 / 64; e < top; e *= 2) edges.push_back(e);
  edges.push_back(top);
  const quad::Rule rule = quad::composite(edges, 16);
  C2Result r;
  r.value = 2.0 * rule.apply(g);
  if (Lambda > tau_asym) {
    r.tail = 2.0 * c2_log_coefficient() * std::log(Lambda / tau_asym);
    r.value += r.tail;
  }
  return r;
}

inline double c2_constant(double eps, double T_cut, MollifierProfile profile = MollifierProfile::bump,
                          double aux_step = 0.1) {
  return c2_with_table(*Q0Table::get(profile, aux_step), eps, T_cut).value;
}

// --- I^Q_{00;nm} ------------------------------------------------------------------

/// Integrals I_{nm}(eps) = int K^Q_{nm}(z) Q0_eps(z)^2 dz for one level n and all m, via
/// I_{nm} = int Q_{nm}(u) W_n(u) du with W_n(u) = int K_n(s, x) Q0_eps(s + u, x)^2 ds dx.
/// W_n is tabulated on a grid of step max(min(h, eps^2)/8, u/64) and interpolated. Entry m + 1 holds I_{nm}.
inline std::vector<double> iq00_level(const KernelDecomposition& kd, const Q0Table& q0, int n, double eps) {
  if (kd.dim() != 3) throw std::invalid_argument("iq00: d = 3 only");
  const double h = kd.level_time(n), R = KernelDecomposition::level_radius(n);
  const double T2 = 2.0 * kd.cutoff().T;
  // product rule over the support of K_n: s in (0, h), r in [0, R), r-panels on the sqrt(s) scale
  std::vector<double> se{0.0};
  for (int j = 12; j >= 1; --j) se.push_back(std::ldexp(h, -j));
  for (double f : {0.625, 0.75, 0.875, 1.0}) se.push_back(f * h);
  const quad::Rule sr = quad::composite(se, 10);
  struct Node {
    double s, r, w;
  };
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    const double s = sr.nodes[i], w = std::sqrt(s);
    std::vector<double> interior;
    for (double f : {0.5, 1.0, 2.0, 3.0, 4.5, 6.5, 9.0, 14.0}) interior.push_back(f * w);
    for (double f : {0.25, 0.5, 0.75}) interior.push_back(f * R);
    const quad::Rule rr = quad::composite(quad::breakpoints(0.0, R, interior), 8);
    for (std::size_t j = 0; j < rr.size(); ++j) {
      const double r = rr.nodes[j];
      const double k = kd.dyadic_piece_radial(n, s, r);
      if (k != 0.0) nodes.push_back({s, r, sr.weights[i] * rr.weights[j] * 4.0 * std::numbers::pi * r * r * k});
    }
  }
  auto W = [&](double u) {
    double acc = 0.0;
    for (const auto& nd : nodes) {
      const double q = q0.at(eps, nd.s + u, nd.r);
      acc += nd.w * q * q;
    }
    return acc;
  };
  std::vector<double> us, ws;
  for (double u = 0.0;;) {
    us.push_back(u);
    ws.push_back(W(u));
    if (u >= T2 + h) break;
    u += std::max(std::min(h, eps * eps) / 8.0, u / 64.0);
  }
  boost::math::interpolators::makima<std::vector<double>> Wi(std::move(us), std::move(ws));

  const long mmax = max_shift_index(n, kd.cutoff().T, kd.s0());
  std::vector<double> out(static_cast<std::size_t>(mmax + 2), 0.0);
  const quad::Rule vr = quad::composite_uniform(-1.0, 1.0, 8, 10);
  for (long m = 0; m <= mmax; ++m) {
    double acc = 0.0;
    for (std::size_t q = 0; q < vr.size(); ++q) {
      const double u = (static_cast<double>(m) + vr.nodes[q]) * h;
      if (u <= 0.0 || u >= T2) continue;
      acc += vr.weights[q] * h * kd.q_piece(n, m, u) * Wi(u);
    }
    out[static_cast<std::size_t>(m + 1)] = acc;
  }
  return out;
}

inline double iq00(const KernelDecomposition& kd, int n, long m, double eps,
                   MollifierProfile profile = MollifierProfile::bump) {
  const auto v = iq00_level(kd, *Q0Table::get(profile), n, eps);
  if (m < -1 || m + 1 >= static_cast<long>(v.size())) throw std::invalid_argument("iq00: (n, m) outside the index set");
  return v[static_cast<std::size_t>(m + 1)];
}

}  // namespace fhn
