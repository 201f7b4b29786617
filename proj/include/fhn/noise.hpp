#pragma once

// Lattice space-time white noise, the parabolic mollifier and the mollified noise.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fhn/fft.hpp"
#include "fhn/kernel.hpp"
#include "fhn/quadrature.hpp"
#include "fhn/rng.hpp"

namespace fhn {

struct SpaceTimeLattice {
  int d = 3;
  int N = 32;
  double L = 1.0;
  double dt = 1.0 / 1024;
  long n_steps = 256;

  double dx() const { return L / N; }
  double T_end() const { return dt * static_cast<double>(n_steps); }
  std::size_t sites() const {
    std::size_t s = 1;
    for (int i = 0; i < d; ++i) s *= static_cast<std::size_t>(N);
    return s;
  }
  double cell_volume() const { return dt * std::pow(dx(), d); }

  void validate() const {
    if (d != 2 && d != 3) throw std::invalid_argument("lattice: d must be 2 or 3");
    if (N < 4 || (N & (N - 1)) != 0) throw std::invalid_argument("lattice: N must be a power of two >= 4");
    if (!(L > 0.0)) throw std::invalid_argument("lattice: L must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("lattice: dt must be positive");
    if (n_steps < 1) throw std::invalid_argument("lattice: n_steps must be >= 1");
  }
};

class ResolutionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MollifierProfile { bump, bump_squared };

inline MollifierProfile parse_profile(const std::string& s) {
  if (s == "bump") return MollifierProfile::bump;
  if (s == "bump_squared") return MollifierProfile::bump_squared;
  throw std::invalid_argument("unknown mollifier profile '" + s + "' (bump | bump_squared)");
}

inline std::string profile_name(MollifierProfile p) { return p == MollifierProfile::bump ? "bump" : "bump_squared"; }

/// rho(t,x) = f(t) f(|x|) / (m_t m_x) with f = phi or phi^2; support |t| <= 1, |x| <= 1.
struct MollifierSpec {
  double eps = 0.125;
  int d = 3;
  MollifierProfile profile = MollifierProfile::bump;

  double shape(double theta) const {
    const double p = bump_phi(theta);
    return profile == MollifierProfile::bump ? p : p * p;
  }
  double sphere_area() const { return d == 3 ? 4.0 * std::numbers::pi : 2.0 * std::numbers::pi; }
  double time_mass() const { return masses()[0]; }
  double space_mass() const { return masses()[1]; }
  int total_degree() const { return 2 + d; }

  /// ||rho_eps||_{L^2}^2 of the continuum mollifier.
  double l2_squared() const {
    const auto m = masses();
    return std::pow(eps, -total_degree()) * m[2] * m[3] / (m[0] * m[0] * m[1] * m[1]);
  }

  /// {int f, int_{R^d} f(|x|), int f^2, int_{R^d} f(|x|)^2}, cached per (profile, d).
  std::array<double, 4> masses() const {
    static const auto table = [] {
      std::array<std::array<double, 4>, 4> t{};
      for (int pi = 0; pi < 2; ++pi)
        for (int dd = 2; dd <= 3; ++dd) {
          MollifierSpec s{1.0, dd, pi == 0 ? MollifierProfile::bump : MollifierProfile::bump_squared};
          auto I = [&](auto f) { return quad::integrate(f, 0.0, 1.0, 1e-13).value; };
          auto& row = t[static_cast<std::size_t>(2 * pi + dd - 2)];
          row[0] = 2.0 * I([&](double x) { return s.shape(x); });
          row[1] = s.sphere_area() * I([&](double r) { return s.shape(r) * std::pow(r, dd - 1); });
          row[2] = 2.0 * I([&](double x) { return std::pow(s.shape(x), 2); });
          row[3] = s.sphere_area() * I([&](double r) { return std::pow(s.shape(r), 2) * std::pow(r, dd - 1); });
        }
      return t;
    }();
    return table[static_cast<std::size_t>(2 * (profile == MollifierProfile::bump ? 0 : 1) + d - 2)];
  }

  void validate() const {
    if (!(eps > 0.0)) throw std::invalid_argument("mollifier: eps must be positive");
    if (d != 2 && d != 3) throw std::invalid_argument("mollifier: d must be 2 or 3");
  }
};

/// Continuum rho_eps(t, x).
inline double mollifier_eval(const MollifierSpec& spec, double t, const double* x) {
  const double r = euclidean_norm(x, spec.d) / spec.eps;
  const double s = std::abs(t) / (spec.eps * spec.eps);
  if (r >= 1.0 || s >= 1.0) return 0.0;
  return std::pow(spec.eps, -spec.total_degree()) * spec.shape(s) * spec.shape(r) /
         (spec.time_mass() * spec.space_mass());
}

inline double mollifier_eval(const MollifierSpec& spec, const SpacetimePoint& z) {
  if (z.dim() != spec.d) throw std::invalid_argument("mollifier_eval: dimension mismatch");
  return mollifier_eval(spec, z.t, z.x.data());
}

/// Throws ResolutionError unless eps >= 2 max(dt^{1/2}, dx) and eps <= L/2.
inline void require_resolved(const SpaceTimeLattice& lat, double eps) {
  const double need = 2.0 * std::max(std::sqrt(lat.dt), lat.dx());
  if (eps + 1e-15 < need) {
    std::ostringstream os;
    const int n_req = static_cast<int>(std::bit_ceil(static_cast<unsigned>(std::ceil(2.0 * lat.L / eps))));
    os << "eps=" << eps << " not resolved by the lattice (need eps >= " << need << "); use N >= " << n_req
       << " and dt <= " << eps * eps / 4.0;
    throw ResolutionError(os.str());
  }
  if (!(eps <= 0.5 * lat.L)) throw ResolutionError("eps must not exceed L/2");
}

/// Discrete time weights w[j], j = -J..J, summing to 1 (stored at index j+J).
inline std::vector<double> mollifier_time_weights(const MollifierSpec& spec, double dt) {
  const long J = static_cast<long>(std::ceil(spec.eps * spec.eps / dt));
  std::vector<double> w(static_cast<std::size_t>(2 * J + 1));
  double sum = 0.0;
  for (long j = -J; j <= J; ++j) {
    const double v = spec.shape(std::abs(static_cast<double>(j)) * dt / (spec.eps * spec.eps));
    w[static_cast<std::size_t>(j + J)] = v;
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

/// Discrete spatial weights on the torus lattice (minimal image), summing to 1.
inline std::vector<double> mollifier_space_weights(const MollifierSpec& spec, const SpectralGrid& g) {
  std::vector<double> w(g.real_size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto x = g.position(i);
    for (double& xi : x) xi = wrap_minimal(xi, g.side());
    const double v = spec.shape(euclidean_norm(x.data(), g.dim()) / spec.eps);
    w[i] = v;
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

/// Lattice density rho_eps at the nodes; its lattice integral is 1 up to rounding.
inline std::vector<double> mollifier_lattice_density(const MollifierSpec& spec, const SpectralGrid& g, double dt,
                                                     std::vector<double>* time_density = nullptr) {
  auto wx = mollifier_space_weights(spec, g);
  for (double& v : wx) v /= g.cell_volume();
  if (time_density) {
    *time_density = mollifier_time_weights(spec, dt);
    for (double& v : *time_density) v /= dt;
  }
  return wx;
}

/// Real spectral multiplier of the discrete spatial weights.
inline std::vector<double> mollifier_space_multiplier(const MollifierSpec& spec, const SpectralGrid& g) {
  const auto w = mollifier_space_weights(spec, g);
  const auto hat = g.forward(w);
  std::vector<double> out(hat.size());
  for (std::size_t s = 0; s < hat.size(); ++s) out[s] = hat[s].real();
  return out;
}

/// Exact variance of the discrete mollified noise at one node.
inline double discrete_mollified_variance(const MollifierSpec& spec, const SpaceTimeLattice& lat,
                                          const SpectralGrid& g) {
  double st = 0.0, sx = 0.0;
  for (double w : mollifier_time_weights(spec, lat.dt)) st += w * w;
  for (double w : mollifier_space_weights(spec, g)) sx += w * w;
  return st * sx / lat.cell_volume();
}

// --- white noise ---------------------------------------------------------

inline constexpr std::int64_t kTimeCellOffset = std::int64_t{1} << 31;

/// White-noise cell values of time cell k (any integer) into out[0..sites).
inline void white_noise_slab(std::uint64_t seed, const SpaceTimeLattice& lat, long k, double* out) {
  const std::size_t S = lat.sites();
  const double sd = 1.0 / std::sqrt(lat.cell_volume());
  const std::uint64_t base = static_cast<std::uint64_t>(k + kTimeCellOffset) * S;
  for (std::size_t i = 0; i < S; i += 2) {
    const auto z = rng::normal2(seed, (base + i) >> 1);
    out[i] = sd * z[0];
    if (i + 1 < S) out[i + 1] = sd * z[1];
  }
}

struct NoiseRealization {
  std::uint64_t seed = 0;
  SpaceTimeLattice lattice;
  long k_begin = 0;
  std::vector<double> values;  // (k - k_begin) * sites + site

  std::size_t slabs() const { return values.size() / lattice.sites(); }
  const double* slab(long k) const {
    return values.data() + static_cast<std::size_t>(k - k_begin) * lattice.sites();
  }
};

/// Cells k in [k_begin, k_begin + count); default covers the lattice time window.
inline NoiseRealization sample_white_noise(std::uint64_t seed, const SpaceTimeLattice& lat, long k_begin = 0,
                                           long count = -1) {
  lat.validate();
  if (count < 0) count = lat.n_steps;
  NoiseRealization r{seed, lat, k_begin, std::vector<double>(static_cast<std::size_t>(count) * lat.sites())};
  for (long k = 0; k < count; ++k)
    white_noise_slab(seed, lat, k_begin + k, r.values.data() + static_cast<std::size_t>(k) * lat.sites());
  return r;
}

// --- mollified noise ------------------------------------------------------

/// Sequential generator of spectral xi^eps at step midpoints t_k + dt/2, k = 0, 1, ...
/// Mixes time cells k-J..k+J with the discrete time weights. Steps are produced in batches so each
/// cell slab is read once per batch.
class MollifiedNoiseStream {
 public:
  static constexpr long kBatch = 16;

  MollifiedNoiseStream(const SpectralGrid& g, const SpaceTimeLattice& lat, const MollifierSpec& spec,
                       std::uint64_t seed)
      : g_(g), lat_(lat), seed_(seed), wt_(mollifier_time_weights(spec, lat.dt)),
        mult_(mollifier_space_multiplier(spec, g)) {
    require_resolved(lat, spec.eps);
    J_ = static_cast<long>(wt_.size() / 2);
    for (long k = -J_; k <= J_; ++k) ring_.push_back(slab_hat(k));
    next_cell_ = J_ + 1;
  }

  /// Spectral mollified noise for the next step.
  std::vector<cplx> next() {
    if (pending_.empty()) fill_batch();
    auto out = std::move(pending_.front());
    pending_.pop_front();
    return out;
  }

  std::vector<double> next_real() { return g_.inverse(next()); }

 private:
  std::vector<cplx> slab_hat(long k) const {
    std::vector<double> xi(g_.real_size());
    white_noise_slab(seed_, lat_, k, xi.data());
    auto hat = g_.forward(xi);
    for (std::size_t q = 0; q < hat.size(); ++q) hat[q] *= mult_[q];
    return hat;
  }

  // ring_ holds cells k0-J..k0+J on entry; outputs k0..k0+B-1 need cells up to k0+B-1+J
  void fill_batch() {
    const long B = kBatch;
    for (long b = 1; b < B; ++b) ring_.push_back(slab_hat(next_cell_++));
    const std::size_t M2 = 2 * g_.spec_size(), tile = 1024;
    std::vector<std::vector<cplx>> outs(static_cast<std::size_t>(B), std::vector<cplx>(g_.spec_size(), cplx(0.0)));
    for (std::size_t i0 = 0; i0 < M2; i0 += tile) {
      const std::size_t i1 = std::min(M2, i0 + tile);
      for (long c = 0; c < static_cast<long>(ring_.size()); ++c) {
        const double* s = reinterpret_cast<const double*>(ring_[static_cast<std::size_t>(c)].data());
        // cell index relative to k0 is c - J; output b uses weight index J + (b - (c - J))
        for (long b = std::max(0L, c - 2 * J_); b <= std::min(B - 1, c); ++b) {
          const double w = wt_[static_cast<std::size_t>(2 * J_ + b - c)];
          if (w == 0.0) continue;
          double* o = reinterpret_cast<double*>(outs[static_cast<std::size_t>(b)].data());
          for (std::size_t i = i0; i < i1; ++i) o[i] += w * s[i];
        }
      }
    }
    for (long b = 0; b < B; ++b) ring_.pop_front();
    ring_.push_back(slab_hat(next_cell_++));
    for (auto& o : outs) pending_.push_back(std::move(o));
  }

  const SpectralGrid& g_;
  SpaceTimeLattice lat_;
  std::uint64_t seed_;
  std::vector<double> wt_, mult_;
  long J_ = 0;
  long next_cell_ = 0;
  std::deque<std::vector<cplx>> ring_, pending_;
};

/// Real-space xi^eps at the midpoints of every step of the lattice window.
inline std::vector<double> mollify_noise(std::uint64_t seed, const SpaceTimeLattice& lat, const MollifierSpec& spec,
                                         const SpectralGrid& g) {
  MollifiedNoiseStream stream(g, lat, spec, seed);
  std::vector<double> out(static_cast<std::size_t>(lat.n_steps) * lat.sites());
  for (long k = 0; k < lat.n_steps; ++k) {
    const auto f = stream.next_real();
    std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * lat.sites()));
  }
  return out;
}

// --- binary field dump ----------------------------------------------------
// Layout (little-endian): char[8] "FHNFIELD", int32 d, int32 N, f64 L, f64 dt, int64 n_steps,
// uint64 seed, uint64 value_count, then value_count f64.

struct FieldDumpHeader {
  std::int32_t d = 3;
  std::int32_t N = 32;
  double L = 1.0;
  double dt = 0.0;
  std::int64_t n_steps = 0;
  std::uint64_t seed = 0;
};

namespace detail {
template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}
template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("field dump: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}
}  // namespace detail

inline void write_field_dump(const std::string& path, const FieldDumpHeader& h, const std::vector<double>& values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("FHNFIELD", 8);
  detail::put_le(os, h.d);
  detail::put_le(os, h.N);
  detail::put_le(os, h.L);
  detail::put_le(os, h.dt);
  detail::put_le(os, h.n_steps);
  detail::put_le(os, h.seed);
  detail::put_le(os, static_cast<std::uint64_t>(values.size()));
  for (double v : values) detail::put_le(os, v);
  if (!os) throw std::runtime_error("write failed for " + path);
}

inline std::vector<double> read_field_dump(const std::string& path, FieldDumpHeader& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "FHNFIELD") throw std::runtime_error("field dump: bad magic");
  h.d = detail::get_le<std::int32_t>(is);
  h.N = detail::get_le<std::int32_t>(is);
  h.L = detail::get_le<double>(is);
  h.dt = detail::get_le<double>(is);
  h.n_steps = detail::get_le<std::int64_t>(is);
  h.seed = detail::get_le<std::uint64_t>(is);
  const auto n = detail::get_le<std::uint64_t>(is);
  std::vector<double> v(n);
  for (auto& x : v) x = detail::get_le<double>(is);
  return v;
}

}  // namespace fhn
