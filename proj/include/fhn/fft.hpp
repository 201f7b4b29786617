#pragma once

// Periodic lattice [0,L)^d with N points per axis and FFTW r2c/c2r transforms.

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace fhn {

using cplx = std::complex<double>;

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
struct PlanDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};
using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;
}  // namespace detail

class SpectralGrid {
 public:
  SpectralGrid(int d, int N, double L) : d_(d), N_(N), L_(L) {
    if (d != 2 && d != 3) throw std::invalid_argument("grid: d must be 2 or 3");
    if (N < 4 || (N & (N - 1)) != 0) throw std::invalid_argument("grid: N must be a power of two >= 4");
    if (!(L > 0.0)) throw std::invalid_argument("grid: L must be positive");
    real_size_ = 1;
    for (int i = 0; i < d; ++i) real_size_ *= static_cast<std::size_t>(N);
    spec_size_ = real_size_ / static_cast<std::size_t>(N) * static_cast<std::size_t>(N / 2 + 1);

    std::vector<int> dims(static_cast<std::size_t>(d), N);
    std::vector<double> r(real_size_);
    std::vector<cplx> c(spec_size_);
    auto* cc = reinterpret_cast<fftw_complex*>(c.data());
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
      fwd_.reset(fftw_plan_dft_r2c(d, dims.data(), r.data(), cc, flags));
      inv_.reset(fftw_plan_dft_c2r(d, dims.data(), cc, r.data(), flags | FFTW_DESTROY_INPUT));
    }
    if (!fwd_ || !inv_) throw std::runtime_error("grid: FFTW planning failed");

    lambda_.resize(spec_size_);
    knorm_.resize(spec_size_);
    weight_.resize(spec_size_);
    const double k0 = 2.0 * std::numbers::pi / L;
    const int nz = N / 2 + 1;
    for (std::size_t s = 0; s < spec_size_; ++s) {
      std::size_t rest = s;
      const int jz = static_cast<int>(rest % static_cast<std::size_t>(nz));
      rest /= static_cast<std::size_t>(nz);
      double k2 = static_cast<double>(jz) * jz;
      for (int a = 0; a < d - 1; ++a) {
        const int j = static_cast<int>(rest % static_cast<std::size_t>(N));
        rest /= static_cast<std::size_t>(N);
        const int f = j <= N / 2 ? j : j - N;
        k2 += static_cast<double>(f) * f;
      }
      lambda_[s] = k0 * k0 * k2;
      knorm_[s] = k0 * std::sqrt(k2);
      weight_[s] = (jz == 0 || jz == N / 2) ? 1.0 : 2.0;
    }
  }

  int dim() const { return d_; }
  int points() const { return N_; }
  double side() const { return L_; }
  double dx() const { return L_ / N_; }
  double cell_volume() const {
    double v = 1.0;
    for (int i = 0; i < d_; ++i) v *= dx();
    return v;
  }
  std::size_t real_size() const { return real_size_; }
  std::size_t spec_size() const { return spec_size_; }

  /// -Laplacian eigenvalue |2πk/L|^2 per half-spectrum index.
  const std::vector<double>& lambda() const { return lambda_; }
  /// |2πk/L| per half-spectrum index.
  const std::vector<double>& wavenumber() const { return knorm_; }
  /// Multiplicity of a half-spectrum mode in full-spectrum sums (1 or 2).
  const std::vector<double>& mode_weight() const { return weight_; }

  /// Unnormalised forward transform.
  void forward(const double* in, cplx* out) const {
    fftw_execute_dft_r2c(fwd_.get(), const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
  }
  std::vector<cplx> forward(const std::vector<double>& in) const {
    check_real(in);
    std::vector<cplx> out(spec_size_);
    forward(in.data(), out.data());
    return out;
  }

  /// Inverse transform including the 1/N^d normalisation. `in` is preserved.
  void inverse(const cplx* in, double* out) const {
    thread_local std::vector<cplx> scratch;
    scratch.assign(in, in + spec_size_);
    fftw_execute_dft_c2r(inv_.get(), reinterpret_cast<fftw_complex*>(scratch.data()), out);
    const double s = 1.0 / static_cast<double>(real_size_);
    for (std::size_t i = 0; i < real_size_; ++i) out[i] *= s;
  }
  std::vector<double> inverse(const std::vector<cplx>& in) const {
    if (in.size() != spec_size_) throw std::invalid_argument("grid: spectral size mismatch");
    std::vector<double> out(real_size_);
    inverse(in.data(), out.data());
    return out;
  }

  /// Coordinates of flat real index i (row-major, last axis fastest).
  std::vector<double> position(std::size_t i) const {
    std::vector<double> x(static_cast<std::size_t>(d_));
    for (int a = d_ - 1; a >= 0; --a) {
      x[static_cast<std::size_t>(a)] = dx() * static_cast<double>(i % static_cast<std::size_t>(N_));
      i /= static_cast<std::size_t>(N_);
    }
    return x;
  }

 private:
  void check_real(const std::vector<double>& v) const {
    if (v.size() != real_size_) throw std::invalid_argument("grid: real size mismatch");
  }

  int d_, N_;
  double L_;
  std::size_t real_size_ = 0, spec_size_ = 0;
  detail::PlanPtr fwd_, inv_;
  std::vector<double> lambda_, knorm_, weight_;
};

}  // namespace fhn
