#pragma once

// Lattice stochastic objects: Psi = K * xi^eps (heat semigroup from zero data), Psi^Q = K^Q * xi^eps,
// the Wick square and cube, and Monte Carlo statistics over realisations.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fhn/fft.hpp"
#include "fhn/kernel.hpp"
#include "fhn/noise.hpp"
#include "fhn/parallel.hpp"
#include "fhn/quadrature.hpp"
#include "fhn/renorm.hpp"
#include "fhn/rng.hpp"

namespace fhn {

/// Lattice field at t_k = k dt for k = 0..n_steps.
struct FieldSeries {
  SpaceTimeLattice lat;
  std::vector<double> values;

  explicit FieldSeries(const SpaceTimeLattice& l)
      : lat(l), values((static_cast<std::size_t>(l.n_steps) + 1) * l.sites(), 0.0) {}

  std::span<double> at(long k) { return {values.data() + static_cast<std::size_t>(k) * lat.sites(), lat.sites()}; }
  std::span<const double> at(long k) const {
    return {values.data() + static_cast<std::size_t>(k) * lat.sites(), lat.sites()};
  }
};

/// phi1(z) = (e^z - 1) / z with phi1(0) = 1.
inline double phi1(double z) { return z == 0.0 ? 1.0 : std::expm1(z) / z; }

/// Exponential step for d Psi = Delta Psi dt + f dt: Psi_hat <- E Psi_hat + dt phi1(-lambda dt) f_hat.
class HeatStepper {
 public:
  HeatStepper(const SpectralGrid& g, double dt) : decay_(g.spec_size()), gain_(g.spec_size()) {
    for (std::size_t q = 0; q < g.spec_size(); ++q) {
      const double z = -g.lambda()[q] * dt;
      decay_[q] = std::exp(z);
      gain_[q] = dt * phi1(z);
    }
  }

  void step(std::vector<cplx>& state, const std::vector<cplx>& forcing) const {
    for (std::size_t q = 0; q < state.size(); ++q) state[q] = decay_[q] * state[q] + gain_[q] * forcing[q];
  }
  const std::vector<double>& decay() const { return decay_; }
  const std::vector<double>& gain() const { return gain_; }

 private:
  std::vector<double> decay_, gain_;
};

enum class ConvolutionKind { heat, q_convolved };

/// Psi^Q(t_n) = int_0^{t_n} Q(u) Psi(t_n - u) du by the trapezoidal rule on the step grid.
/// If exponential_path and t_end <= T (so Q = a1 e^{a2 u} on the window) a two-term recursion
/// is used; otherwise the sum is evaluated directly.
inline FieldSeries q_time_convolution(const FieldSeries& psi, const CutoffKernelSpec& q, bool exponential_path = true) {
  const auto& lat = psi.lat;
  const double h = lat.dt;
  const std::size_t S = lat.sites();
  FieldSeries out(lat);
  if (exponential_path && static_cast<double>(lat.n_steps) * h <= q.T) {
    // R_n = h sum_{k=0}^{n} Q(kh) Psi_{n-k} = h a1 Psi_n + e^{a2 h} R_{n-1}
    const double E = std::exp(q.a2 * h);
    std::vector<double> R(S, 0.0);
    for (long n = 0; n <= lat.n_steps; ++n) {
      const auto p = psi.at(n);
      const auto p0 = psi.at(0);
      const double qn = q.q(static_cast<double>(n) * h);
      auto o = out.at(n);
      for (std::size_t i = 0; i < S; ++i) {
        R[i] = h * q.a1 * p[i] + E * R[i];
        o[i] = n == 0 ? 0.0 : R[i] - 0.5 * h * (q.a1 * p[i] + qn * p0[i]);
      }
    }
    return out;
  }
  std::vector<double> qv(static_cast<std::size_t>(lat.n_steps) + 1);
  for (long k = 0; k <= lat.n_steps; ++k) qv[static_cast<std::size_t>(k)] = q.q(static_cast<double>(k) * h);
  for (long n = 1; n <= lat.n_steps; ++n) {
    auto o = out.at(n);
    for (long k = 0; k <= n; ++k) {
      const double w = (k == 0 || k == n ? 0.5 : 1.0) * h * qv[static_cast<std::size_t>(k)];
      if (w == 0.0) continue;
      const auto p = psi.at(n - k);
      for (std::size_t i = 0; i < S; ++i) o[i] += w * p[i];
    }
  }
  return out;
}

/// Psi driven by the forcing xi_eps (n_steps slabs; slab k acts on step k -> k+1) from Psi(0) = 0,
/// or its time convolution with Q. With remove_mean the spatial mean of the forcing is dropped.
inline FieldSeries stochastic_convolution(const std::vector<double>& xi_eps, const SpaceTimeLattice& lat,
                                          const SpectralGrid& g, ConvolutionKind kind,
                                          const CutoffKernelSpec& q = {}, bool remove_mean = false) {
  lat.validate();
  if (xi_eps.size() != static_cast<std::size_t>(lat.n_steps) * lat.sites())
    throw std::invalid_argument("stochastic_convolution: forcing size does not match the lattice");
  FieldSeries psi(lat);
  HeatStepper stepper(g, lat.dt);
  std::vector<cplx> state(g.spec_size(), cplx(0.0)), f(g.spec_size());
  for (long k = 0; k < lat.n_steps; ++k) {
    g.forward(xi_eps.data() + static_cast<std::size_t>(k) * lat.sites(), f.data());
    if (remove_mean) f[0] = 0.0;
    stepper.step(state, f);
    g.inverse(state.data(), psi.at(k + 1).data());
  }
  if (kind == ConvolutionKind::heat) return psi;
  return q_time_convolution(psi, q);
}

/// Pointwise Psi^2 - C1 and Psi^3 - 3 C1 Psi.
inline std::pair<std::vector<double>, std::vector<double>> wick_powers(std::span<const double> psi, double C1) {
  std::vector<double> w2(psi.size()), w3(psi.size());
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double p = psi[i];
    w2[i] = p * p - C1;
    w3[i] = p * (p * p - 3.0 * C1);
  }
  return {std::move(w2), std::move(w3)};
}

// --- Monte Carlo statistics ----------------------------------------------------

struct Estimate {
  double mean = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();  ///< NaN with fewer than 2 samples
  bool has_se() const { return std::isfinite(se); }
};

/// Mean and standard error of per-realisation values.
inline Estimate estimate(const std::vector<double>& samples) {
  Estimate e;
  if (samples.empty()) return e;
  quad::KahanSum s;
  for (double v : samples) s.add(v);
  e.mean = s.value() / static_cast<double>(samples.size());
  if (samples.size() >= 2) {
    quad::KahanSum d;
    for (double v : samples) d.add((v - e.mean) * (v - e.mean));
    e.se = std::sqrt(d.value() / static_cast<double>(samples.size() - 1) / static_cast<double>(samples.size()));
  }
  return e;
}

/// |a - b| <= z * sqrt(se_a^2 + se_b^2)
inline bool agree(const Estimate& a, const Estimate& b, double z = 3.0) {
  return std::abs(a.mean - b.mean) <= z * std::hypot(a.se, b.se);
}
inline bool consistent_with(const Estimate& a, double value, double z = 3.0) {
  return std::abs(a.mean - value) <= z * a.se;
}

struct ObjectsConfig {
  SpaceTimeLattice lat{3, 32, 1.0, 1.0 / 1024, 256};
  MollifierSpec mollifier{0.125, 3};
  CutoffKernelSpec q{};
  std::uint64_t seed = 1;
  int realisations = 64;
  int workers = 1;
  double burn_in = 0.5;  ///< statistics use t >= burn_in * t_end
};

struct WindowStats {
  Estimate mean;           ///< space-time mean of the object over the window
  Estimate second_moment;  ///< space-time mean of its square
};

struct ObjectStats {
  std::string name;
  WindowStats early, late;  ///< two halves of the post-burn-in window
};

struct ObjectSummary {
  std::vector<double> c1_series;  ///< lattice C1(t_k), spatial mean removed
  double c1_window = 0.0;         ///< mean of C1(t_k) over the late window
  Estimate psi_variance;          ///< mean of Psi^2 over the late window
  std::vector<ObjectStats> objects;
  int realisations = 0;

  bool has_verdict() const { return realisations >= 2; }
  /// Wick means within 3 SE of 0 in both windows.
  bool wick_mean_ok() const;
  /// Psi^2 mean consistent with the lattice C1.
  bool variance_ok() const { return consistent_with(psi_variance, c1_window); }
  /// Means and second moments agree between the two windows. Psi^Q is excluded: its time window
  /// int_0^t Q(u) du still grows before t = 2T.
  bool translation_ok() const;
};

inline bool ObjectSummary::wick_mean_ok() const {
  for (const auto& o : objects)
    if (o.name.rfind("wick", 0) == 0 && !(consistent_with(o.early.mean, 0.0) && consistent_with(o.late.mean, 0.0)))
      return false;
  return true;
}

inline bool ObjectSummary::translation_ok() const {
  for (const auto& o : objects)
    if (o.name != "psi_q" && (!agree(o.early.mean, o.late.mean) || !agree(o.early.second_moment, o.late.second_moment)))
      return false;
  return true;
}

/// Psi, Psi^Q, Wick2 and Wick3 over independent realisations, driven by mean-free mollified noise
/// so that Psi is stationary after the burn-in. Realisation r uses seed derive_seed(seed, r).
inline ObjectSummary object_statistics(const ObjectsConfig& cfg) {
  if (cfg.realisations < 1) throw std::invalid_argument("object_statistics: need at least one realisation");
  if (!(cfg.burn_in >= 0.0 && cfg.burn_in < 1.0)) throw std::invalid_argument("object_statistics: burn_in in [0, 1)");
  const auto& lat = cfg.lat;
  lat.validate();
  require_resolved(lat, cfg.mollifier.eps);
  SpectralGrid g(lat.d, lat.N, lat.L);

  ObjectSummary out;
  out.realisations = cfg.realisations;
  out.c1_series = c1_lattice_series(cfg.mollifier, lat, g, lat.n_steps, false);

  const long k0 = static_cast<long>(std::ceil(cfg.burn_in * static_cast<double>(lat.n_steps)));
  const long kmid = (k0 + lat.n_steps + 1) / 2;
  if (kmid <= k0 || kmid > lat.n_steps) throw std::invalid_argument("object_statistics: window too short");
  {
    quad::KahanSum s;
    for (long k = kmid; k <= lat.n_steps; ++k) s.add(out.c1_series[static_cast<std::size_t>(k)]);
    out.c1_window = s.value() / static_cast<double>(lat.n_steps + 1 - kmid);
  }

  static const char* names[] = {"psi", "psi_q", "wick2", "wick3"};
  const std::size_t R = static_cast<std::size_t>(cfg.realisations);
  // samples[object][window][moment][realisation]
  std::vector<double> samples(4 * 2 * 2 * R, 0.0);
  auto slot = [&](std::size_t obj, std::size_t win, std::size_t mom, std::size_t r) -> double& {
    return samples[((obj * 2 + win) * 2 + mom) * R + r];
  };

  parallel_for(R, cfg.workers, [&](std::size_t r) {
    const auto xi = mollify_noise(rng::derive_seed(cfg.seed, r), lat, cfg.mollifier, g);
    const FieldSeries psi = stochastic_convolution(xi, lat, g, ConvolutionKind::heat, cfg.q, true);
    const FieldSeries psiq = q_time_convolution(psi, cfg.q);
    for (std::size_t win = 0; win < 2; ++win) {
      const long a = win == 0 ? k0 : kmid, b = win == 0 ? kmid : lat.n_steps + 1;
      std::array<quad::KahanSum, 8> acc;
      for (long k = a; k < b; ++k) {
        const double C1 = out.c1_series[static_cast<std::size_t>(k)];
        const auto p = psi.at(k), pq = psiq.at(k);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double v = p[i], w2 = v * v - C1, w3 = v * (v * v - 3.0 * C1);
          acc[0].add(v);
          acc[1].add(v * v);
          acc[2].add(pq[i]);
          acc[3].add(pq[i] * pq[i]);
          acc[4].add(w2);
          acc[5].add(w2 * w2);
          acc[6].add(w3);
          acc[7].add(w3 * w3);
        }
      }
      const double count = static_cast<double>(b - a) * static_cast<double>(lat.sites());
      for (std::size_t obj = 0; obj < 4; ++obj)
        for (std::size_t mom = 0; mom < 2; ++mom) slot(obj, win, mom, r) = acc[obj * 2 + mom].value() / count;
    }
  });

  for (std::size_t obj = 0; obj < 4; ++obj) {
    ObjectStats s;
    s.name = names[obj];
    auto est = [&](std::size_t win, std::size_t mom) {
      return estimate(std::vector<double>(&slot(obj, win, mom, 0), &slot(obj, win, mom, 0) + R));
    };
    s.early = {est(0, 0), est(0, 1)};
    s.late = {est(1, 0), est(1, 1)};
    out.objects.push_back(s);
  }
  out.psi_variance = out.objects[0].late.second_moment;
  return out;
}

}  // namespace fhn
