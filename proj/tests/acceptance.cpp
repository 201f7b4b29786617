// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 once every criterion has been
// evaluated; with --strict it is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fhn/experiments.hpp"

using namespace fhn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

SolverConfig deterministic(int d, int N, double dt, long steps) {
  SolverConfig cfg;
  cfg.lat = {d, N, 1.0, dt, steps};
  cfg.mollifier = {0.25, d};
  cfg.noise = false;
  cfg.renorm = RenormMode::off;
  return cfg;
}

Outcome partition_of_unity() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = u(rng);
    double sum = 0.0;
    for (int m = -3; m <= 3; ++m) sum += bump_phi(m + t);
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return {worst <= 1e-10, fmt("max |sum - 1| = %.3g", worst)};
}

Outcome kernel_support() {
  exp::KernelVerifySettings s;
  s.n_max = 6;
  s.support_samples = 1000000;
  s.derivatives = s.moments = false;
  s.workers = workers();
  const auto rep = exp::kernel_verify(s);
  return {rep.support_pass, fmt("%zu pieces, %zu exterior samples", rep.support.size(), rep.support_samples)};
}

Outcome derivative_bounds() {
  exp::KernelVerifySettings s;
  s.n_max = 6;
  s.support = s.moments = false;
  s.workers = workers();
  const auto v = exp::kernel_verify(s).derivative_verdict;
  return {v.pass, fmt("%zu ratios, worst/median %.3g at n=%d m=%ld k=%s", v.count, v.worst, v.witness.n, v.witness.m,
                          v.witness.label.c_str())};
}

Outcome moment_bounds() {
  exp::KernelVerifySettings s;
  s.n_max = 5;
  s.support = s.derivatives = false;
  s.workers = workers();
  const auto v = exp::kernel_verify(s).moment_verdict;
  return {v.pass, fmt("%zu ratios, worst/median %.3g at n=%d m=%ld k=%s", v.count, v.worst, v.witness.n, v.witness.m,
                          v.witness.label.c_str())};
}

Outcome reconstruction() {
  const KernelDecomposition kd(3, CutoffKernelSpec{1.0, 0.0, 1.0}, 5);
  const int N = 5;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ut(0.0, 1.2), ur(0.0, 0.6);
  std::vector<double> err(100);
  parallel_for(err.size(), workers(), [&](std::size_t i) {
    std::mt19937_64 local(rng::derive_seed(17, i));
    const double t = ut(local);
    const double x[3] = {ur(local), ur(local) * 0.5, ur(local) * 0.25};
    double sum = 0.0;
    for (int n = 0; n <= N; ++n) {
      const double h = kd.level_time(n);
      const long mc = static_cast<long>(std::floor(t / h));
      for (long m = std::max(-1L, mc - 3); m <= std::min(max_shift_index(n, 1.0, 2), mc + 3); ++m)
        sum += kd.kq_piece(n, m, t, x);
    }
    const double direct = kd.kq_truncated_direct(N, t, x, 1e-11);
    err[i] = std::abs(sum - direct) / std::max(1.0, std::abs(direct));
  });
  const double worst = *std::max_element(err.begin(), err.end());
  return {worst <= 1e-8, fmt("100 points, max error %.3g", worst)};
}

Outcome c1_divergence() {
  std::vector<std::pair<double, double>> pts;
  for (int j = 2; j <= 6; ++j) pts.emplace_back(std::ldexp(1.0, -j), c1_continuum(std::ldexp(1.0, -j), 1.0));
  const auto fit = divergence_fit(pts, FitModel::power);
  double self = 0.0;
  for (auto [d, T] : {std::pair{1e-4, 1.0}, std::pair{1e-2, 2.0}, std::pair{0.3, 5.0}}) {
    const double closed = c1_unmollified_closed_form(d, T);
    self = std::max(self, std::abs(c1_unmollified_truncated(d, T) - closed) / closed);
  }
  return {fit.slope >= -1.15 && fit.slope <= -0.85 && self <= 1e-6,
          fmt("slope %.4f, closed-form self-test rel %.3g", fit.slope, self)};
}

Outcome c2_divergence() {
  const auto fine = Q0Table::get(MollifierProfile::bump, 0.1);
  const auto coarse = Q0Table::get(MollifierProfile::bump, 0.2);
  double lo = INFINITY, hi = 0.0, self = 0.0;
  for (int j = 4; j <= 6; ++j) {
    const double eps = std::ldexp(1.0, -j);
    const double c = c2_with_table(*fine, eps, 1.0).value;
    lo = std::min(lo, c / std::log(1.0 / eps));
    hi = std::max(hi, c / std::log(1.0 / eps));
    self = std::max(self, std::abs(c2_with_table(*coarse, eps, 1.0).value - c) / std::abs(c));
  }
  const double spread = (hi - lo) / lo;
  return {spread < 0.25 && self < 0.02, fmt("C2/log(1/eps) spread %.3g, halving change %.3g", spread, self)};
}

Outcome lemma_iq00() {
  KernelDecomposition kd(3, CutoffKernelSpec{}, 5);
  const auto tab = Q0Table::get(MollifierProfile::bump);
  const std::vector<double> eps_set{0.2, 0.1, 0.05};
  std::vector<std::vector<double>> per(eps_set.size());
  parallel_for(eps_set.size(), workers(), [&](std::size_t e) {
    for (int n = 0; n <= 5; ++n) {
      const auto v = iq00_level(kd, *tab, n, eps_set[e]);
      for (std::size_t i = 1; i < v.size(); ++i)
        per[e].push_back(std::abs(v[i]) * (static_cast<double>(i) + 1.0) * std::ldexp(1.0, 2 * n));
    }
  });
  std::vector<double> all, meds;
  for (const auto& r : per) {
    all.insert(all.end(), r.begin(), r.end());
    meds.push_back(median(r));
  }
  const double med = median(all), worst = *std::max_element(all.begin(), all.end());
  double drift = 0.0;
  for (double m : meds) drift = std::max(drift, std::abs(m / meds[0] - 1.0));
  return {worst <= 10.0 * med && drift <= 0.5,
          fmt("max/median %.3g, per-eps median drift %.3g", worst / med, drift)};
}

Outcome drift_constants_identities() {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    CubicCoefficients k;
    for (double* p : {&k.alpha1, &k.alpha2, &k.beta1, &k.beta2, &k.beta3, &k.gamma1, &k.gamma2, &k.gamma3, &k.gamma4})
      *p = u(gen);
    const auto c = drift_constants(k, 0.5 + u(gen) + 2.0, u(gen));
    worst = std::max(worst, std::abs(c.c0 * 3.0 * k.gamma1 - c.c1 * k.beta1) / (1.0 + std::abs(c.c1 * k.beta1)));
    worst = std::max(worst, std::abs(c.c1 * k.gamma2 - c.c2 * 3.0 * k.gamma1) / (1.0 + std::abs(c.c2 * k.gamma1)));
  }
  const auto std_c = drift_constants(CubicCoefficients::standard_fhn(), 2.5, 0.3);
  return {worst <= 1e-13 && std_c.c0 == 0.0 && std_c.c2 == 0.0,
          fmt("100 draws, max relative identity error %.3g; standard FHN c0 = %g, c2 = %g", worst, std_c.c0 + 0.0, std_c.c2 + 0.0)};
}

Outcome wick_cancellation() {
  ObjectsConfig cfg;
  cfg.lat = {3, 32, 1.0, 1.0 / 1024, 256};
  cfg.mollifier = {0.125, 3};
  cfg.realisations = 64;
  cfg.seed = 1;
  cfg.workers = workers();
  const auto s = object_statistics(cfg);
  const double z = std::abs(s.psi_variance.mean - s.c1_window) / s.psi_variance.se;
  return {s.variance_ok(), fmt("mean Psi^2 %.6g +- %.3g vs C1_lattice %.6g (%.2f SE)", s.psi_variance.mean,
                               s.psi_variance.se, s.c1_window, z)};
}

Outcome solver_exactness() {
  constexpr double kPi = std::numbers::pi;
  auto cfg = deterministic(3, 16, 1.0 / 256, 64);
  cfg.coeffs = CubicCoefficients{};
  cfg.coeffs.a1 = 0.0;
  const SpectralGrid g(3, 16, 1.0);
  cfg.u0.resize(g.real_size());
  for (std::size_t i = 0; i < g.real_size(); ++i) {
    const auto x = g.position(i);
    cfg.u0[i] = std::cos(2.0 * kPi * (2.0 * x[0] + x[2]));
  }
  const double lam = 4.0 * kPi * kPi * 5.0;
  double worst = 0.0;
  SimulateOptions opt;
  opt.snapshot_every = 1;
  opt.on_snapshot = [&](long, double t, std::span<const double> u, std::span<const double>) {
    for (std::size_t i = 0; i < u.size(); ++i) worst = std::max(worst, std::abs(u[i] - std::exp(-lam * t) * cfg.u0[i]));
  };
  simulate(cfg, opt);

  auto vc = deterministic(2, 16, 1.0 / 128, 50);
  vc.coeffs = CubicCoefficients::standard_fhn();
  vc.coeffs.a1 = 0.0;
  vc.coeffs.a2 = -0.7;
  const SpectralGrid g2(2, 16, 1.0);
  vc.u0 = preset_field("smooth", 1.0, g2);
  vc.v0 = preset_field("cos", 0.5, g2);
  const auto r = simulate(vc);
  const double ev = std::exp(vc.coeffs.a2 * vc.lat.T_end());
  double vworst = 0.0;
  for (std::size_t i = 0; i < r.v.size(); ++i) vworst = std::max(vworst, std::abs(r.v[i] - ev * vc.v0[i]));
  return {worst <= 1e-12 && vworst == 0.0, fmt("heat mode error %.3g per step, |v - e^{a2 t} v0| = %.3g", worst, vworst)};
}

Outcome sq_equivalence() {
  constexpr double kPi = std::numbers::pi;
  auto cfg = deterministic(2, 16, 1.0 / 1024, 512);
  const SpectralGrid g(2, 16, 1.0);
  cfg.u0 = preset_field("smooth", 1.0, g);
  cfg.v0 = preset_field("cos", 0.3, g);
  cfg.forcing = [&](long, double t, std::vector<double>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto x = g.position(i);
      f[i] += std::sin(3.0 * t + 0.3) * std::cos(2.0 * kPi * x[0]) + 0.5 * std::cos(t) * std::sin(2.0 * kPi * x[1]);
    }
  };
  SimulateOptions opt;
  opt.record_forcing = true;
  const auto r = simulate(cfg, opt);
  const auto v = v_via_sq(cfg, r);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    num += (v[i] - r.v[i]) * (v[i] - r.v[i]);
    den += r.v[i] * r.v[i];
  }
  const double rel = std::sqrt(num / den);
  return {rel <= 1e-6, fmt("relative L2 difference %.3g", rel)};
}

Outcome picard_consistency() {
  const SpectralGrid g(2, 16, 1.0);
  std::vector<double> diff;
  bool converged = true;
  for (long steps : {64L, 128L, 256L}) {
    auto cfg = deterministic(2, 16, 0.25 / static_cast<double>(steps), steps);
    cfg.u0 = preset_field("smooth", 1.0, g);
    cfg.v0 = preset_field("cos", 0.5, g);
    const auto p = picard_mild(cfg, 80);
    converged = converged && p.converged;
    diff.push_back(max_abs_diff(p.u, simulate(cfg).u));
  }
  bool halves = converged;
  std::string ratios;
  for (std::size_t j = 1; j < diff.size(); ++j) {
    const double q = diff[j - 1] / diff[j];
    halves = halves && std::abs(q - 2.0) <= 0.5;
    ratios += fmt("%s%.3f", j > 1 ? "," : "", q);
  }

  auto lin = deterministic(2, 16, 1.0 / 256, 64);
  lin.coeffs = CubicCoefficients{};
  lin.coeffs.alpha1 = 2.0;
  lin.coeffs.alpha2 = 1.0;
  lin.coeffs.a1 = -1.0;
  lin.coeffs.a2 = -1.0;
  lin.u0 = preset_field("smooth", 1.0, g);
  const auto p = picard_mild(lin, 60);
  double worst = 0.0;
  for (std::size_t j = 1; j < p.residuals.size(); ++j)
    if (p.residuals[j - 1] > 1e-11) worst = std::max(worst, p.residuals[j] / p.residuals[j - 1]);
  return {halves && p.converged && worst < 0.8,
          fmt("dt-halving ratios %s, linear-F residual ratio max %.3g", ratios.c_str(), worst)};
}

Outcome coupled_convergence() {
  exp::ConvergeSettings s;
  s.base.lat = {3, 32, 1.0, 1.0 / 1024, 256};
  s.base.mollifier = {0.5, 3};
  s.base.coeffs = CubicCoefficients::standard_fhn();
  s.base.renorm = RenormMode::lattice;
  s.base.seed = 1;
  s.halvings = 3;
  s.realisations = 8;
  s.workers = workers();
  const auto rep = exp::converge(s);
  auto list = [](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += fmt("%s%.3g", i ? "," : "", v[i]);
    return out;
  };
  return {rep.pass() && !rep.any_blowup,
          fmt("r ratios renorm [%s], off [%s], off sup ratios [%s], remainder renorm [%s]",
              list(rep.r_renorm_ratios).c_str(), list(rep.r_off_ratios).c_str(), list(rep.sup_off_ratios).c_str(),
              list(rep.rem_renorm).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0)
      strict = true;
    else
      only.push_back(std::atoi(argv[i]));
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"partition of unity", partition_of_unity},
      {"kernel support", kernel_support},
      {"derivative bounds", derivative_bounds},
      {"moment bounds", moment_bounds},
      {"reconstruction", reconstruction},
      {"C1 divergence", c1_divergence},
      {"C2 divergence", c2_divergence},
      {"I^Q_00 uniformity", lemma_iq00},
      {"drift constants", drift_constants_identities},
      {"Wick cancellation", wick_cancellation},
      {"solver exactness", solver_exactness},
      {"S^Q equivalence", sq_equivalence},
      {"Picard/mild consistency", picard_consistency},
      {"coupled convergence", coupled_convergence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return strict ? failed : 0;
}
