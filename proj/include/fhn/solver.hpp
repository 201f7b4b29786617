#pragma once

// Exponential time stepping of the renormalised system
//   du = [Delta u + F(u, v) + c0 + c1 u + c2 v + xi^eps] dt,   dv = [a1 u + a2 v] dt
// on the torus, the S^Q representation of v and a Picard iteration of the mild form.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fhn/fft.hpp"
#include "fhn/kernel.hpp"
#include "fhn/noise.hpp"
#include "fhn/quadrature.hpp"
#include "fhn/renorm.hpp"
#include "fhn/stochastic.hpp"

namespace fhn {

/// phi2(z) = (e^z - 1 - z) / z^2 with phi2(0) = 1/2.
inline double phi2(double z) {
  if (std::abs(z) < 1e-2) return 0.5 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120 + z / 720)));
  return (std::expm1(z) - z) / (z * z);
}

enum class RenormMode { off, lattice, continuum };

inline RenormMode parse_renorm(const std::string& s) {
  if (s == "off") return RenormMode::off;
  if (s == "lattice" || s == "on") return RenormMode::lattice;
  if (s == "continuum") return RenormMode::continuum;
  throw std::invalid_argument("unknown renorm mode '" + s + "' (off | lattice | continuum)");
}
inline std::string renorm_name(RenormMode m) {
  return m == RenormMode::off ? "off" : m == RenormMode::lattice ? "lattice" : "continuum";
}

/// Smooth initial data: zero, cos (cos(2 pi x_0 / L)) or smooth (a few low modes), times amplitude.
inline std::vector<double> preset_field(const std::string& name, double amplitude, const SpectralGrid& g) {
  std::vector<double> f(g.real_size(), 0.0);
  if (name == "zero") return f;
  if (name != "cos" && name != "smooth") throw std::invalid_argument("unknown initial-data preset '" + name + "'");
  const double k0 = 2.0 * std::numbers::pi / g.side();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto x = g.position(i);
    if (name == "cos") {
      f[i] = amplitude * std::cos(k0 * x[0]);
      continue;
    }
    double s = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) s += std::cos(k0 * x[a] + static_cast<double>(a)) / static_cast<double>(a + 1);
    f[i] = amplitude * (s + 0.25 * std::sin(2.0 * k0 * x[0]) * std::cos(k0 * x.back()));
  }
  return f;
}

/// Counterterms at t_k for k = 0..n_steps. Lattice mode follows the exact variance of the lattice
/// stochastic convolution in time; continuum mode uses the constant C1(eps), C2(eps).
struct CountertermSchedule {
  double C2 = 0.0;
  std::vector<double> C1;
  std::vector<DriftConstants> c;
};

struct SolverConfig {
  SpaceTimeLattice lat{3, 32, 1.0, 1.0 / 1024, 256};
  CubicCoefficients coeffs = CubicCoefficients::standard_fhn();
  MollifierSpec mollifier{0.125, 3};
  RenormMode renorm = RenormMode::lattice;
  double horizon = 1.0;  ///< T of the cutoff chi; constants use T_cut = 2 T
  std::uint64_t seed = 1;
  bool noise = true;
  double blowup_threshold = 1e6;
  double aux_step = 0.1;         ///< Q0-table step for C2
  std::vector<double> u0, v0;    ///< empty means zero
  /// Optional deterministic forcing added to the drift on step k (piecewise constant in time).
  std::function<void(long k, double t, std::vector<double>& f)> forcing;
  /// Precomputed counterterms (shared between runs that differ only in seed).
  std::shared_ptr<const CountertermSchedule> counterterms;

  CutoffKernelSpec q() const { return {coeffs.a1, coeffs.a2, horizon}; }

  void validate() const {
    lat.validate();
    if (mollifier.d != lat.d) throw std::invalid_argument("solver: mollifier dimension differs from the lattice");
    if (!(horizon > 0.0)) throw std::invalid_argument("solver: horizon must be positive");
    if (!(blowup_threshold > 0.0)) throw std::invalid_argument("solver: blowup threshold must be positive");
    if (!u0.empty() && u0.size() != lat.sites()) throw std::invalid_argument("solver: u0 size does not match the lattice");
    if (!v0.empty() && v0.size() != lat.sites()) throw std::invalid_argument("solver: v0 size does not match the lattice");
    if (renorm == RenormMode::continuum && lat.d != 3)
      throw std::invalid_argument("solver: continuum constants are available for d = 3 only");
    if (noise || renorm != RenormMode::off) require_resolved(lat, mollifier.eps);
  }
};

/// F(u, v) + c0 + c1 u + c2 v pointwise.
inline void renormalised_drift(std::span<const double> u, std::span<const double> v, const CubicCoefficients& k,
                               const DriftConstants& c, std::span<double> out) {
  if (u.size() != v.size() || out.size() != u.size()) throw std::invalid_argument("drift: field sizes differ");
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = k.F(u[i], v[i]) + c.c0 + c.c1 * u[i] + c.c2 * v[i];
}
inline std::vector<double> renormalised_drift(std::span<const double> u, std::span<const double> v,
                                              const CubicCoefficients& k, const DriftConstants& c) {
  std::vector<double> out(u.size());
  renormalised_drift(u, v, k, c, out);
  return out;
}

inline CountertermSchedule counterterm_schedule(const SolverConfig& cfg, const SpectralGrid& g) {
  const auto n = static_cast<std::size_t>(cfg.lat.n_steps) + 1;
  CountertermSchedule s;
  s.C1.assign(n, 0.0);
  s.c.assign(n, DriftConstants{});
  if (cfg.renorm == RenormMode::off) return s;
  const double eps = cfg.mollifier.eps, T_cut = 2.0 * cfg.horizon;
  if (cfg.lat.d == 3) s.C2 = c2_constant(eps, T_cut, cfg.mollifier.profile, cfg.aux_step);
  if (cfg.renorm == RenormMode::lattice)
    s.C1 = c1_lattice_series(cfg.mollifier, cfg.lat, g, cfg.lat.n_steps, true);
  else
    s.C1.assign(n, c1_continuum(eps, T_cut, cfg.mollifier.profile));
  for (std::size_t k = 0; k < n; ++k) s.c[k] = drift_constants(cfg.coeffs, s.C1[k], s.C2);
  return s;
}

struct Observables {
  long step = 0;
  double t = 0, sup_u = 0, l2_u = 0, sup_v = 0, l2_v = 0;
};

inline std::pair<double, double> sup_and_l2(std::span<const double> f, double cell) {
  double sup = 0.0;
  quad::KahanSum s;
  for (double x : f) {
    if (!std::isfinite(x)) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    sup = std::max(sup, std::abs(x));
    s.add(x * x);
  }
  return {sup, std::sqrt(s.value() * cell)};
}

struct SimulateOptions {
  long snapshot_every = 0;  ///< 0: no snapshots
  std::function<void(long k, double t, std::span<const double> u, std::span<const double> v)> on_snapshot;
  bool record_forcing = false;  ///< keep the spectral forcing of every step (for v_via_sq)
  bool track_psi = false;       ///< also evolve Psi = K * xi^eps from zero with the same noise
};

struct RunResult {
  bool blew_up = false;
  long blowup_step = -1;
  double blowup_sup = 0.0;
  long steps_done = 0;
  std::vector<Observables> observables;
  std::vector<double> u, v;  ///< fields at the last completed step
  std::vector<double> psi;   ///< Psi at the last completed step, if tracked
  CountertermSchedule counterterms;
  std::vector<std::vector<cplx>> forcing_hat;  ///< per step, if recorded

  double t_final(const SpaceTimeLattice& lat) const { return lat.dt * static_cast<double>(steps_done); }
};

/// Per-mode coefficients of the exact v update over one step when u solves
/// u' = -lambda u + g with g constant on the step:
///   v_hat <- e^{a2 h} v_hat + a1 (alpha u_hat + beta g_hat).
struct VStepCoefficients {
  double ev = 1.0;
  std::vector<double> alpha, beta;

  VStepCoefficients(const SpectralGrid& g, double a2, double h) : ev(std::exp(a2 * h)) {
    alpha.resize(g.spec_size());
    beta.resize(g.spec_size());
    const auto rule = quad::gauss_legendre(16, 0.0, h);
    for (std::size_t q = 0; q < g.spec_size(); ++q) {
      const double lam = g.lambda()[q];
      alpha[q] = h * ev * phi1(-(lam + a2) * h);
      if (lam * h >= 0.1) {
        beta[q] = (h * phi1(a2 * h) - alpha[q]) / lam;
      } else {
        beta[q] = rule.apply([&](double s) { return std::exp(a2 * (h - s)) * s * phi1(-lam * s); });
      }
    }
  }
};

/// Runs the exponential scheme up to n_steps or the first blow-up.
inline RunResult simulate(const SolverConfig& cfg, const SimulateOptions& opt = {}) {
  cfg.validate();
  const auto& lat = cfg.lat;
  const SpectralGrid g(lat.d, lat.N, lat.L);
  const std::size_t S = lat.sites();
  const double h = lat.dt, cell = g.cell_volume();
  const auto& k = cfg.coeffs;
  const bool coupled = k.a1 != 0.0;

  RunResult res;
  if (cfg.counterterms && cfg.counterterms->c.size() == static_cast<std::size_t>(lat.n_steps) + 1)
    res.counterterms = *cfg.counterterms;
  else
    res.counterterms = counterterm_schedule(cfg, g);
  std::vector<double> u = cfg.u0.empty() ? std::vector<double>(S, 0.0) : cfg.u0;
  std::vector<double> v = cfg.v0.empty() ? std::vector<double>(S, 0.0) : cfg.v0;
  const std::vector<double> v0 = v;
  auto uhat = g.forward(u);
  auto vhat = g.forward(v);
  std::vector<cplx> ghat(g.spec_size()), psihat;
  if (opt.track_psi) psihat.assign(g.spec_size(), cplx(0.0));
  std::vector<double> drift(S);

  const HeatStepper heat(g, h);
  const VStepCoefficients vc(g, k.a2, h);
  std::optional<MollifiedNoiseStream> stream;
  if (cfg.noise) stream.emplace(g, lat, cfg.mollifier, cfg.seed);

  auto observe = [&](long step) {
    const auto [su, lu] = sup_and_l2(u, cell);
    const auto [sv, lv] = sup_and_l2(v, cell);
    res.observables.push_back({step, h * static_cast<double>(step), su, lu, sv, lv});
    if (opt.on_snapshot && opt.snapshot_every > 0 && step % opt.snapshot_every == 0)
      opt.on_snapshot(step, h * static_cast<double>(step), u, v);
    if (!(su <= cfg.blowup_threshold) || !(sv <= cfg.blowup_threshold)) {
      res.blew_up = true;
      res.blowup_step = step;
      res.blowup_sup = std::max(su, sv);
    }
  };

  observe(0);
  for (long n = 0; n < lat.n_steps && !res.blew_up; ++n) {
    const double t = h * static_cast<double>(n);
    renormalised_drift(u, v, k, res.counterterms.c[static_cast<std::size_t>(n)], drift);
    if (cfg.forcing) cfg.forcing(n, t, drift);
    g.forward(drift.data(), ghat.data());
    if (stream) {
      const auto xi = stream->next();
      for (std::size_t q = 0; q < ghat.size(); ++q) ghat[q] += xi[q];
      if (opt.track_psi) heat.step(psihat, xi);
    }
    if (opt.record_forcing) res.forcing_hat.push_back(ghat);
    if (coupled)
      for (std::size_t q = 0; q < vhat.size(); ++q)
        vhat[q] = vc.ev * vhat[q] + k.a1 * (vc.alpha[q] * uhat[q] + vc.beta[q] * ghat[q]);
    heat.step(uhat, ghat);
    g.inverse(uhat.data(), u.data());
    if (coupled) {
      g.inverse(vhat.data(), v.data());
    } else {
      const double ev = std::exp(k.a2 * (t + h));
      for (std::size_t i = 0; i < S; ++i) v[i] = ev * v0[i];
    }
    res.steps_done = n + 1;
    observe(n + 1);
  }
  if (opt.track_psi) res.psi = g.inverse(psihat);
  res.u = std::move(u);
  res.v = std::move(v);
  return res;
}

// --- S^Q representation of v -----------------------------------------------------

/// sigma(lambda, tau) = int_0^tau Q(tau - w) e^{-lambda w} dw, the symbol of S^Q(tau).
class SQSymbol {
 public:
  explicit SQSymbol(const CutoffKernelSpec& q) : q_(q) {}

  double sigma(double lam, double tau) const {
    if (tau <= 0.0) return 0.0;
    if (tau <= q_.T) return q_.a1 * tau * std::exp(q_.a2 * tau) * phi1(-(lam + q_.a2) * tau);
    std::vector<double> edges{0.0};
    for (double b : {tau - 2.0 * q_.T, tau - q_.T})
      if (b > 0.0) edges.push_back(b);
    edges.push_back(tau);
    return quad::integrate([&](double w) { return q_.q(tau - w) * std::exp(-lam * w); }, edges, 1e-12).value;
  }

  /// int_{tau0}^{tau0 + h} sigma(lambda, tau) dtau.
  double step_integral(double lam, double tau0, double h) const {
    const double tau1 = tau0 + h, a1 = q_.a1, a2 = q_.a2;
    if (tau1 <= q_.T && std::abs(lam + a2) * tau1 >= 0.05)
      return a1 * h / (lam + a2) * (std::exp(a2 * tau0) * phi1(a2 * h) - std::exp(-lam * tau0) * phi1(-lam * h));
    return quad::gauss_legendre(16, tau0, tau1).apply([&](double tau) { return sigma(lam, tau); });
  }

 private:
  CutoffKernelSpec q_;
};

/// v(t_end) = S^Q(t_end) u0 + int_0^{t_end} S^Q(t_end - s) g_s ds + e^{t_end a2} v0, with g the recorded
/// spectral forcing (drift + noise), piecewise constant on the steps.
inline std::vector<double> v_via_sq(const SolverConfig& cfg, const RunResult& run) {
  const auto& lat = cfg.lat;
  if (run.blew_up || run.steps_done != lat.n_steps)
    throw std::invalid_argument("v_via_sq: the run did not complete");
  if (static_cast<long>(run.forcing_hat.size()) != lat.n_steps)
    throw std::invalid_argument("v_via_sq: the run must record its forcing");
  const SpectralGrid g(lat.d, lat.N, lat.L);
  const std::size_t S = lat.sites();
  const double h = lat.dt, T = lat.T_end();
  const SQSymbol sym(cfg.q());
  const auto u0hat = g.forward(cfg.u0.empty() ? std::vector<double>(S, 0.0) : cfg.u0);
  const auto v0hat = g.forward(cfg.v0.empty() ? std::vector<double>(S, 0.0) : cfg.v0);

  const double k0sq = std::pow(2.0 * std::numbers::pi / lat.L, 2);
  std::map<long, std::vector<double>> gamma;  // |k|^2 shell -> step integrals
  std::vector<cplx> vhat(g.spec_size());
  for (std::size_t q = 0; q < g.spec_size(); ++q) {
    const double lam = g.lambda()[q];
    auto& gm = gamma[std::lround(lam / k0sq)];
    if (gm.empty()) {
      gm.resize(static_cast<std::size_t>(lat.n_steps + 1));
      for (long n = 0; n < lat.n_steps; ++n)
        gm[static_cast<std::size_t>(n)] = sym.step_integral(lam, T - h * static_cast<double>(n + 1), h);
      gm.back() = sym.sigma(lam, T);
    }
    cplx acc = std::exp(cfg.coeffs.a2 * T) * v0hat[q] + gm.back() * u0hat[q];
    for (long n = 0; n < lat.n_steps; ++n)
      acc += gm[static_cast<std::size_t>(n)] * run.forcing_hat[static_cast<std::size_t>(n)][q];
    vhat[q] = acc;
  }
  return g.inverse(vhat);
}

// --- Picard iteration of the mild form ----------------------------------------------

struct PicardResult {
  std::vector<double> residuals;  ///< sup-norm change of u per iteration
  std::vector<double> u, v;       ///< at t_end
  bool converged = false;
  bool non_contraction = false;   ///< residual grew on 3 consecutive iterations
  int iterations = 0;
};

/// Fixed-point iteration u <- S(t)u0 + int S(t-s)[F^(u_s, v_s) + xi_s] ds, v = e^{t a2}v0 + int Q(t-s)u_s ds
/// on the step grid. The drift is product-integrated as linear in time on each step, the noise and
/// deterministic forcing as piecewise constant. Starts from the constant-in-time initial data;
/// converged once the residual is below tol * max(1, sup |u(t_end)|).
inline PicardResult picard_mild(const SolverConfig& cfg, int max_iterations = 50, double tol = 1e-13) {
  cfg.validate();
  const auto& lat = cfg.lat;
  const SpectralGrid g(lat.d, lat.N, lat.L);
  const std::size_t S = lat.sites(), M = g.spec_size();
  const auto n_steps = static_cast<std::size_t>(lat.n_steps);
  const double h = lat.dt;
  const auto& k = cfg.coeffs;
  const auto ct = counterterm_schedule(cfg, g);

  std::vector<std::vector<cplx>> fixed(n_steps, std::vector<cplx>(M, cplx(0.0)));
  if (cfg.noise || cfg.forcing) {
    std::optional<MollifiedNoiseStream> stream;
    if (cfg.noise) stream.emplace(g, lat, cfg.mollifier, cfg.seed);
    std::vector<double> f(S);
    for (std::size_t n = 0; n < n_steps; ++n) {
      if (cfg.forcing) {
        std::fill(f.begin(), f.end(), 0.0);
        cfg.forcing(static_cast<long>(n), h * static_cast<double>(n), f);
        g.forward(f.data(), fixed[n].data());
      }
      if (stream) {
        const auto xi = stream->next();
        for (std::size_t q = 0; q < M; ++q) fixed[n][q] += xi[q];
      }
    }
  }

  std::vector<double> E(M), P1(M), P2(M);
  for (std::size_t q = 0; q < M; ++q) {
    const double z = -g.lambda()[q] * h;
    E[q] = std::exp(z);
    P1[q] = h * phi1(z);
    P2[q] = h * phi2(z);
  }
  const double ev = std::exp(k.a2 * h), w1 = k.a1 * h * phi1(k.a2 * h), w2 = k.a1 * h * phi2(k.a2 * h);

  const std::vector<double> u0 = cfg.u0.empty() ? std::vector<double>(S, 0.0) : cfg.u0;
  const std::vector<double> v0 = cfg.v0.empty() ? std::vector<double>(S, 0.0) : cfg.v0;
  std::vector<std::vector<double>> u(n_steps + 1, u0), v(n_steps + 1, v0);
  std::vector<std::vector<cplx>> ghat(n_steps + 1, std::vector<cplx>(M));
  std::vector<double> drift(S);
  std::vector<cplx> uh(M);

  PicardResult res;
  int growth = 0;
  for (int it = 0; it < max_iterations; ++it) {
    for (std::size_t n = 0; n <= n_steps; ++n) {
      renormalised_drift(u[n], v[n], k, ct.c[n], drift);
      g.forward(drift.data(), ghat[n].data());
    }
    double resid = 0.0;
    uh = g.forward(u0);
    std::vector<double> un(S);
    for (std::size_t n = 0; n < n_steps; ++n) {
      for (std::size_t q = 0; q < M; ++q)
        uh[q] = E[q] * uh[q] + P1[q] * (ghat[n][q] + fixed[n][q]) + P2[q] * (ghat[n + 1][q] - ghat[n][q]);
      g.inverse(uh.data(), un.data());
      for (std::size_t i = 0; i < S; ++i) resid = std::max(resid, std::abs(un[i] - u[n + 1][i]));
      u[n + 1].swap(un);
    }
    for (std::size_t n = 0; n < n_steps; ++n)
      for (std::size_t i = 0; i < S; ++i)
        v[n + 1][i] = ev * v[n][i] + w1 * u[n][i] + w2 * (u[n + 1][i] - u[n][i]);
    double scale = 1.0;
    for (double x : u.back()) scale = std::max(scale, std::abs(x));
    res.residuals.push_back(resid);
    res.iterations = it + 1;
    if (!std::isfinite(resid)) {
      res.non_contraction = true;
      break;
    }
    if (resid <= tol * scale) {
      res.converged = true;
      break;
    }
    if (res.residuals.size() >= 2 && resid > res.residuals[res.residuals.size() - 2]) {
      if (++growth >= 3) {
        res.non_contraction = true;
        break;
      }
    } else {
      growth = 0;
    }
  }
  res.u = u.back();
  res.v = v.back();
  return res;
}

}  // namespace fhn
