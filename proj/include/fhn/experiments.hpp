#pragma once

// Experiment drivers behind the command-line subcommands: constants, kernel-verify, simulate,
// converge and objects. Each command resolves its configuration, writes the provenance file,
// computes, then writes <command>.csv and <command>.json into the output directory.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhn/config.hpp"
#include "fhn/kernel.hpp"
#include "fhn/noise.hpp"
#include "fhn/parallel.hpp"
#include "fhn/renorm.hpp"
#include "fhn/solver.hpp"
#include "fhn/stochastic.hpp"

namespace fhn::exp {

using json = nlohmann::ordered_json;
using config::ConfigError;
using config::KeySpec;
using config::Resolved;
using config::Schema;

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kBlowUp = 3 };

struct CommandResult {
  int exit_code = kOk;
  std::string pass_fail = "NA";  ///< PASS, FAIL or NA
  json metrics = json::object();
};

/// Raised for numerical failures that are not configuration errors.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- formatting -----------------------------------------------------------------

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v == 0.0 ? 0.0 : v);
  return buf;
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : width_(header.size()) { row(header); }
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw std::logic_error("csv: row width differs from header");
    for (std::size_t i = 0; i < cells.size(); ++i) text_ += (i ? "," : "") + cells[i];
    text_ += "\n";
  }
  void write(const std::filesystem::path& p) const {
    std::ofstream f(p, std::ios::binary);
    f << text_;
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  }
  const std::string& text() const { return text_; }

 private:
  std::size_t width_;
  std::string text_;
};

inline double finite_median(std::vector<double> v) {
  std::erase_if(v, [](double x) { return !std::isfinite(x); });
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- schemas ---------------------------------------------------------------------

inline Schema common_keys() {
  return {{"seed", "1", "base seed of the noise"},
          {"workers", "1", "worker threads for independent runs"},
          {"out_dir", ".", "output directory"},
          {"tolerance", "1e-10", "relative tolerance of adaptive quadratures"}};
}

inline Schema coefficient_keys() {
  return {{"alpha1", "1", "F: u"},          {"alpha2", "1", "F: v"},           {"beta1", "0", "F: u^2"},
          {"beta2", "0", "F: u v"},         {"beta3", "0", "F: v^2"},          {"gamma1", "-1", "F: u^3"},
          {"gamma2", "0", "F: u^2 v"},      {"gamma3", "0", "F: u v^2"},       {"gamma4", "0", "F: v^3"},
          {"a1", "-1", "v' = a1 u + a2 v"}, {"a2", "-1", "v' = a1 u + a2 v"}, {"horizon", "1", "T of the cutoff chi"}};
}

inline Schema lattice_keys(std::optional<std::string> eps) {
  return {{"d", "3", "space dimension (2 or 3)"},
          {"N", "32", "grid points per side (power of two)"},
          {"L", "1", "torus side"},
          {"dt", "1/1024", "time step"},
          {"steps", "256", "number of steps"},
          {"eps", std::move(eps), "mollification scale"},
          {"profile", "bump", "mollifier profile: bump | bump_squared"}};
}

inline Schema simulation_keys() {
  return {{"renorm", "lattice", "counterterms: off | lattice | continuum"},
          {"noise", "true", "drive with mollified noise"},
          {"u0", "zero", "initial u: zero | cos | smooth"},
          {"u0_amplitude", "1", "amplitude of u0"},
          {"v0", "zero", "initial v: zero | cos | smooth"},
          {"v0_amplitude", "1", "amplitude of v0"},
          {"blowup_threshold", "1e6", "sup-norm that counts as blow-up"},
          {"aux_step", "0.1", "step of the auxiliary Q0 table used for C2"}};
}

inline Schema join(std::initializer_list<Schema> parts) {
  Schema out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"constants", "kernel-verify", "simulate", "converge", "objects"};
  return c;
}

inline Schema schema_for(const std::string& command) {
  if (command == "constants")
    return join({common_keys(), coefficient_keys(),
                 {{"eps_list", "0.25,0.125,0.0625,0.03125", "comma-separated eps values"},
                  {"modes", "continuum,lattice", "constant families: continuum, lattice"},
                  {"profile", "bump", "mollifier profile: bump | bump_squared"},
                  {"aux_step", "0.1", "step of the auxiliary Q0 table used for C2"},
                  {"L", "1", "torus side (lattice mode)"},
                  {"lattice_N", "0", "grid points per side in lattice mode (0: smallest with dx <= eps/2)"},
                  {"lattice_T", "0.25", "time at which the lattice C1 is evaluated"}}});
  if (command == "kernel-verify")
    return join({common_keys(),
                 {{"d", "3", "space dimension (2 or 3)"},
                  {"n_max", "5", "largest level n"},
                  {"n_ceiling", "7", "refuse n_max above this (cost grows like 2^{2n})"},
                  {"T", "1", "horizon of the cutoff chi"},
                  {"a1", "1", "Q(t) = a1 e^{a2 t} chi(t)"},
                  {"a2", "0", "Q(t) = a1 e^{a2 t} chi(t)"},
                  {"k_degree", "2", "largest parabolic degree of derivative multiindices"},
                  {"ell_degree", "2", "largest parabolic degree of moment multiindices"},
                  {"support_samples", "10000", "exterior samples for the support check (at least 4 per piece)"},
                  {"debug_corrupt_shift", "false", "negative control: centre every support check at h_nm = 0"}}});
  if (command == "simulate")
    return join({common_keys(), lattice_keys(std::nullopt), coefficient_keys(), simulation_keys(),
                 {{"snapshot_every", "0", "write u and v dumps every k steps (0: never)"}}});
  if (command == "converge")
    return join({common_keys(), lattice_keys(std::nullopt), coefficient_keys(), simulation_keys(),
                 {{"eps_halvings", "3", "number of halvings of eps (>= 2)"},
                  {"realisations", "8", "coupled noise realisations (medians are reported)"}}});
  if (command == "objects")
    return join({common_keys(), lattice_keys("0.125"),
                 {{"realisations", "64", "independent noise realisations"},
                  {"burn_in", "0.5", "statistics use t >= burn_in * t_end"},
                  {"a1", "-1", "Q(t) = a1 e^{a2 t} chi(t) for Psi^Q"},
                  {"a2", "-1", "Q(t) = a1 e^{a2 t} chi(t) for Psi^Q"},
                  {"horizon", "1", "T of the cutoff chi"}}});
  throw ConfigError("unknown command '" + command + "'");
}

// --- builders --------------------------------------------------------------------

inline CubicCoefficients coefficients_from(const Resolved& r) {
  CubicCoefficients c;
  c.alpha1 = r.num("alpha1");
  c.alpha2 = r.num("alpha2");
  c.beta1 = r.num("beta1");
  c.beta2 = r.num("beta2");
  c.beta3 = r.num("beta3");
  c.gamma1 = r.num("gamma1");
  c.gamma2 = r.num("gamma2");
  c.gamma3 = r.num("gamma3");
  c.gamma4 = r.num("gamma4");
  c.a1 = r.num("a1");
  c.a2 = r.num("a2");
  return c;
}

inline SpaceTimeLattice lattice_from(const Resolved& r) {
  SpaceTimeLattice lat{static_cast<int>(r.integer("d")), static_cast<int>(r.integer("N")), r.num("L"), r.num("dt"),
                       r.integer("steps")};
  lat.validate();
  return lat;
}

inline std::uint64_t seed_from(const Resolved& r) {
  const long s = r.integer("seed");
  if (s < 0) throw ConfigError("key 'seed': must be non-negative");
  return static_cast<std::uint64_t>(s);
}

inline int workers_from(const Resolved& r) {
  const long w = r.integer("workers");
  if (w < 1) throw ConfigError("key 'workers': must be >= 1");
  return static_cast<int>(w);
}

inline SolverConfig solver_config_from(const Resolved& r) {
  SolverConfig cfg;
  cfg.lat = lattice_from(r);
  cfg.coeffs = coefficients_from(r);
  cfg.mollifier = {r.num("eps"), cfg.lat.d, parse_profile(r.str("profile"))};
  cfg.renorm = parse_renorm(r.str("renorm"));
  cfg.horizon = r.num("horizon");
  cfg.seed = seed_from(r);
  cfg.noise = r.flag("noise");
  cfg.blowup_threshold = r.num("blowup_threshold");
  cfg.aux_step = r.num("aux_step");
  const SpectralGrid g(cfg.lat.d, cfg.lat.N, cfg.lat.L);
  cfg.u0 = preset_field(r.str("u0"), r.num("u0_amplitude"), g);
  cfg.v0 = preset_field(r.str("v0"), r.num("v0_amplitude"), g);
  cfg.validate();
  return cfg;
}

inline json constants_json(const DriftConstants& c) {
  auto z = [](double v) { return v == 0.0 ? 0.0 : v; };
  return {{"c0", z(c.c0)}, {"c1", z(c.c1)}, {"c2", z(c.c2)}};
}

// --- constants -----------------------------------------------------------------------

struct ConstantsRow {
  double eps = 0;
  std::string mode;
  double C1 = 0, C2 = 0;
  DriftConstants c;
  int N = 0;       ///< lattice mode only
  double dt = 0;   ///< lattice mode only
};

struct ConstantsReport {
  std::vector<ConstantsRow> rows;
  bool dyadic = false;
  std::map<std::string, FitResult> c1_fits;  ///< per mode, power model
  std::optional<FitResult> c2_fit;           ///< log model
};

struct ConstantsSettings {
  std::vector<double> eps;
  std::vector<std::string> modes{"continuum", "lattice"};
  CubicCoefficients coeffs = CubicCoefficients::standard_fhn();
  double horizon = 1.0;
  MollifierProfile profile = MollifierProfile::bump;
  double aux_step = 0.1;
  double L = 1.0;
  int lattice_N = 0;
  double lattice_T = 0.25;
  int workers = 1;
};

/// Lattice used for the lattice constant at eps: dx <= eps/2 and dt <= eps^2/4 with t_end = lattice_T.
inline SpaceTimeLattice constants_lattice(const ConstantsSettings& s, double eps) {
  int N = s.lattice_N;
  if (N <= 0) N = std::max(16, static_cast<int>(std::bit_ceil(static_cast<unsigned>(std::ceil(2.0 * s.L / eps - 1e-9)))));
  const long steps = static_cast<long>(std::ceil(s.lattice_T / (eps * eps / 4.0) - 1e-9));
  SpaceTimeLattice lat{3, N, s.L, s.lattice_T / static_cast<double>(steps), steps};
  lat.validate();
  require_resolved(lat, eps);
  return lat;
}

inline ConstantsReport constants_table(const ConstantsSettings& s) {
  if (s.eps.empty()) throw ConfigError("key 'eps_list': need at least one eps");
  for (double e : s.eps)
    if (!(e > 0.0)) throw ConfigError("key 'eps_list': eps must be positive");
  for (const auto& m : s.modes)
    if (m != "continuum" && m != "lattice") throw ConfigError("key 'modes': unknown mode '" + m + "'");
  const double T_cut = 2.0 * s.horizon;

  ConstantsReport rep;
  rep.rows.resize(s.eps.size() * s.modes.size());
  std::vector<double> c2(s.eps.size());
  for (std::size_t i = 0; i < s.eps.size(); ++i) c2[i] = c2_constant(s.eps[i], T_cut, s.profile, s.aux_step);
  parallel_for(rep.rows.size(), s.workers, [&](std::size_t j) {
    const std::size_t i = j / s.modes.size();
    ConstantsRow row;
    row.eps = s.eps[i];
    row.mode = s.modes[j % s.modes.size()];
    row.C2 = c2[i];
    if (row.mode == "continuum") {
      row.C1 = c1_continuum(row.eps, T_cut, s.profile);
    } else {
      const auto lat = constants_lattice(s, row.eps);
      const SpectralGrid g(3, lat.N, lat.L);
      row.C1 = c1_lattice({row.eps, 3, s.profile}, lat, g, lat.n_steps, true);
      row.N = lat.N;
      row.dt = lat.dt;
    }
    row.c = drift_constants(s.coeffs, row.C1, row.C2);
    rep.rows[j] = row;
  });

  auto sorted = s.eps;
  std::sort(sorted.begin(), sorted.end());
  rep.dyadic = sorted.size() >= 3;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (std::abs(sorted[i] / sorted[i - 1] - 2.0) > 1e-9) rep.dyadic = false;
  if (rep.dyadic) {
    for (const auto& m : s.modes) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& r : rep.rows)
        if (r.mode == m) pts.emplace_back(r.eps, r.C1);
      rep.c1_fits[m] = divergence_fit(pts, FitModel::power);
    }
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.eps.size(); ++i) pts.emplace_back(s.eps[i], c2[i]);
    rep.c2_fit = divergence_fit(pts, FitModel::log);
  }
  return rep;
}

inline CommandResult cmd_constants(const Resolved& r, const std::filesystem::path& out) {
  ConstantsSettings s;
  s.eps = r.nums("eps_list");
  s.modes.clear();
  {
    std::istringstream is(r.str("modes"));
    std::string m;
    while (std::getline(is, m, ','))
      if (!config::trim(m).empty()) s.modes.push_back(config::trim(m));
  }
  s.coeffs = coefficients_from(r);
  s.horizon = r.num("horizon");
  s.profile = parse_profile(r.str("profile"));
  s.aux_step = r.num("aux_step");
  s.L = r.num("L");
  s.lattice_N = static_cast<int>(r.integer("lattice_N"));
  s.lattice_T = r.num("lattice_T");
  s.workers = workers_from(r);
  const auto rep = constants_table(s);

  Csv csv({"eps", "mode", "C1", "C2", "c0", "c1", "c2", "lattice_N", "lattice_dt"});
  for (const auto& row : rep.rows)
    csv.row({num(row.eps), row.mode, num(row.C1), num(row.C2), num(row.c.c0), num(row.c.c1), num(row.c.c2),
             row.mode == "lattice" ? std::to_string(row.N) : "", row.mode == "lattice" ? num(row.dt) : ""});
  csv.write(out / "constants.csv");

  CommandResult res;
  res.metrics["rows"] = rep.rows.size();
  res.metrics["dyadic"] = rep.dyadic;
  if (rep.dyadic) {
    bool ok = true;
    for (const auto& [mode, fit] : rep.c1_fits) {
      res.metrics["c1_power_fit"][mode] = {{"slope", fit.slope}, {"max_rel_residual", fit.max_rel_residual}};
      ok = ok && fit.slope >= -1.15 && fit.slope <= -0.85;
    }
    res.metrics["c2_log_fit"] = {{"coefficient", rep.c2_fit->slope}, {"max_rel_residual", rep.c2_fit->max_rel_residual}};
    res.metrics["c1_slope_band"] = {-1.15, -0.85};
    res.pass_fail = ok ? "PASS" : "FAIL";
  }
  return res;
}

// --- kernel-verify ----------------------------------------------------------------------

struct KernelVerifySettings {
  int d = 3;
  int n_max = 5;
  int n_max_derivatives = -1;  ///< -1: n_max
  int n_max_moments = -1;      ///< -1: n_max
  CutoffKernelSpec q{1.0, 0.0, 1.0};
  int k_degree = 2, ell_degree = 2;
  std::size_t support_samples = 10000;
  bool corrupt_shift = false;
  double tolerance = 1e-10;
  int workers = 1;
  bool support = true, derivatives = true, moments = true;
};

struct SupportRow {
  PieceIndex piece;
  SupportCheck check;
};

struct KernelVerifyReport {
  std::vector<SupportRow> support;
  std::size_t support_samples = 0;
  bool support_pass = true;
  std::vector<BoundRow> derivatives, moments;
  UniformityVerdict derivative_verdict, moment_verdict;
  bool pass() const { return support_pass && derivative_verdict.pass && moment_verdict.pass; }
};

inline KernelVerifyReport kernel_verify(const KernelVerifySettings& s) {
  const int nd = s.n_max_derivatives < 0 ? s.n_max : s.n_max_derivatives;
  const int nm = s.n_max_moments < 0 ? s.n_max : s.n_max_moments;
  const KernelDecomposition kd(s.d, s.q, std::max({s.n_max, nd, nm}));
  KernelVerifyReport rep;

  if (s.support) {
    const auto pieces = index_set(s.n_max, s.q.T, kd.scaling());
    const std::size_t per = std::max<std::size_t>(4, (s.support_samples + pieces.size() - 1) / pieces.size());
    const SpacetimePoint origin(0.0, std::vector<double>(static_cast<std::size_t>(s.d), 0.0));
    rep.support.resize(pieces.size());
    parallel_for(pieces.size(), s.workers, [&](std::size_t i) {
      const auto [n, m] = pieces[i];
      rep.support[i] = {pieces[i], verify_support(kd, n, m, per, 1.0, 12345, s.corrupt_shift ? &origin : nullptr)};
    });
    for (const auto& r : rep.support) {
      rep.support_samples += r.check.samples;
      rep.support_pass = rep.support_pass && r.check.pass;
    }
  }

  if (s.derivatives) {
    const auto ks = multiindices_up_to(s.d, s.k_degree, kd.scaling());
    std::vector<std::vector<BoundRow>> per_level(static_cast<std::size_t>(nd) + 1);
    parallel_for(per_level.size(), s.workers, [&](std::size_t n) {
      per_level[n] = verify_derivative_bounds(kd, static_cast<int>(n), static_cast<int>(n), ks);
    });
    for (auto& v : per_level) rep.derivatives.insert(rep.derivatives.end(), v.begin(), v.end());
    rep.derivative_verdict = derivative_uniformity(rep.derivatives);
  }

  if (s.moments) {
    const auto ls = multiindices_up_to(s.d, s.ell_degree, kd.scaling());
    std::vector<std::vector<BoundRow>> per_level(static_cast<std::size_t>(nm) + 1);
    parallel_for(per_level.size(), s.workers, [&](std::size_t n) {
      per_level[n] = verify_moment_bounds(kd, static_cast<int>(n), static_cast<int>(n), ls, s.tolerance);
    });
    for (auto& v : per_level) rep.moments.insert(rep.moments.end(), v.begin(), v.end());
    rep.moment_verdict = moment_uniformity(rep.moments);
  }
  return rep;
}

inline json verdict_json(const UniformityVerdict& v) {
  return {{"pass", v.pass},
          {"rows", v.count},
          {"max_over_median", v.worst},
          {"worst_piece", {{"n", v.witness.n}, {"m", v.witness.m}, {"index", v.witness.label}}}};
}

inline CommandResult cmd_kernel_verify(const Resolved& r, const std::filesystem::path& out) {
  KernelVerifySettings s;
  s.d = static_cast<int>(r.integer("d"));
  s.n_max = static_cast<int>(r.integer("n_max"));
  if (s.n_max < 0) throw ConfigError("key 'n_max': must be >= 0");
  if (s.n_max > r.integer("n_ceiling"))
    throw ConfigError("key 'n_max': " + std::to_string(s.n_max) + " exceeds n_ceiling = " + r.str("n_ceiling"));
  s.q = {r.num("a1"), r.num("a2"), r.num("T")};
  s.q.validate();
  s.k_degree = static_cast<int>(r.integer("k_degree"));
  s.ell_degree = static_cast<int>(r.integer("ell_degree"));
  const long samples = r.integer("support_samples");
  if (samples < 1) throw ConfigError("key 'support_samples': must be >= 1");
  s.support_samples = static_cast<std::size_t>(samples);
  s.corrupt_shift = r.flag("debug_corrupt_shift");
  s.tolerance = r.num("tolerance");
  s.workers = workers_from(r);
  const auto rep = kernel_verify(s);

  Csv csv({"check", "n", "m", "index", "degree", "raw", "ratio", "pass"});
  for (const auto& row : rep.support)
    csv.row({"support", std::to_string(row.piece.n), std::to_string(row.piece.m), "", "",
             num(row.check.max_violation), std::to_string(row.check.samples), row.check.pass ? "1" : "0"});
  auto bound_rows = [&](const char* name, const std::vector<BoundRow>& rows) {
    for (const auto& b : rows)
      csv.row({name, std::to_string(b.n), std::to_string(b.m), b.label, std::to_string(b.degree), num(b.raw),
               num(b.ratio), ""});
  };
  bound_rows("derivative", rep.derivatives);
  bound_rows("moment", rep.moments);
  csv.write(out / "kernel-verify.csv");

  CommandResult res;
  res.metrics["pieces"] = rep.support.size();
  res.metrics["support"] = {{"pass", rep.support_pass}, {"samples", rep.support_samples}};
  res.metrics["derivatives"] = verdict_json(rep.derivative_verdict);
  res.metrics["moments"] = verdict_json(rep.moment_verdict);
  res.metrics["factor"] = 10.0;
  res.pass_fail = rep.pass() ? "PASS" : "FAIL";
  return res;
}

// --- simulate ---------------------------------------------------------------------------

inline CommandResult cmd_simulate(const Resolved& r, const std::filesystem::path& out) {
  const auto cfg = solver_config_from(r);
  const long every = r.integer("snapshot_every");
  if (every < 0) throw ConfigError("key 'snapshot_every': must be >= 0");
  SimulateOptions opt;
  opt.snapshot_every = every;
  if (every > 0) {
    std::filesystem::create_directories(out / "snapshots");
    opt.on_snapshot = [&](long k, double, std::span<const double> u, std::span<const double> v) {
      const FieldDumpHeader h{cfg.lat.d, cfg.lat.N, cfg.lat.L, cfg.lat.dt, k, cfg.seed};
      char name[32];
      std::snprintf(name, sizeof name, "u_%06ld.bin", k);
      write_field_dump((out / "snapshots" / name).string(), h, {u.begin(), u.end()});
      std::snprintf(name, sizeof name, "v_%06ld.bin", k);
      write_field_dump((out / "snapshots" / name).string(), h, {v.begin(), v.end()});
    };
  }
  const auto run = simulate(cfg, opt);

  Csv csv({"step", "t", "sup_u", "l2_u", "sup_v", "l2_v"});
  for (const auto& o : run.observables)
    csv.row({std::to_string(o.step), num(o.t), num(o.sup_u), num(o.l2_u), num(o.sup_v), num(o.l2_v)});
  csv.write(out / "simulate.csv");

  CommandResult res;
  const auto& last = run.observables.back();
  const auto k_last = static_cast<std::size_t>(run.steps_done);
  res.metrics["steps_done"] = run.steps_done;
  res.metrics["blew_up"] = run.blew_up;
  if (run.blew_up) {
    res.metrics["blowup_step"] = run.blowup_step;
    res.metrics["blowup_sup"] = run.blowup_sup;
  }
  res.metrics["t_final"] = last.t;
  res.metrics["sup_u"] = last.sup_u;
  res.metrics["l2_u"] = last.l2_u;
  res.metrics["sup_v"] = last.sup_v;
  res.metrics["l2_v"] = last.l2_v;
  res.metrics["renorm"] = renorm_name(cfg.renorm);
  res.metrics["C1_final"] = run.counterterms.C1[k_last];
  res.metrics["C2"] = run.counterterms.C2;
  res.metrics["constants_final"] = constants_json(run.counterterms.c[k_last]);
  res.pass_fail = run.blew_up ? "FAIL" : "PASS";
  res.exit_code = run.blew_up ? kBlowUp : kOk;
  return res;
}

// --- converge ---------------------------------------------------------------------------

struct ConvergeSettings {
  SolverConfig base;          ///< mollifier.eps is the largest eps
  int halvings = 3;
  int realisations = 8;
  int workers = 1;
};

struct ConvergeReport {
  std::vector<double> eps;
  // per eps (medians over realisations) and per consecutive pair (eps_j, eps_j / 2)
  std::vector<double> sup_renorm, sup_off, r_renorm, r_off, rem_renorm, rem_off;
  std::vector<int> blowups_renorm, blowups_off;
  std::vector<double> r_renorm_ratios, r_off_ratios, sup_off_ratios;
  bool renorm_decreasing = false;  ///< each r ratio <= 0.85
  bool off_diverging = false;      ///< r non-decreasing or sup ratio >= 2 per halving
  bool any_blowup = false;
  bool pass() const { return renorm_decreasing && off_diverging; }
};

inline ConvergeReport converge(const ConvergeSettings& s) {
  if (s.halvings < 2) throw ConfigError("key 'eps_halvings': must be >= 2");
  if (s.realisations < 1) throw ConfigError("key 'realisations': must be >= 1");
  ConvergeReport rep;
  for (int j = 0; j <= s.halvings; ++j) rep.eps.push_back(std::ldexp(s.base.mollifier.eps, -j));
  require_resolved(s.base.lat, rep.eps.back());
  const std::size_t E = rep.eps.size(), R = static_cast<std::size_t>(s.realisations);
  const SpectralGrid g(s.base.lat.d, s.base.lat.N, s.base.lat.L);

  // counterterms depend on eps and the mode only
  std::vector<std::shared_ptr<const CountertermSchedule>> sched(2 * E);
  parallel_for(2 * E, s.workers, [&](std::size_t i) {
    SolverConfig cfg = s.base;
    cfg.mollifier.eps = rep.eps[i / 2];
    cfg.renorm = i % 2 ? RenormMode::off : s.base.renorm;
    sched[i] = std::make_shared<const CountertermSchedule>(counterterm_schedule(cfg, g));
  });

  struct Outcome {
    bool blew_up = false;
    double sup = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> u, rem;
  };
  std::vector<Outcome> runs(R * 2 * E);
  parallel_for(runs.size(), s.workers, [&](std::size_t idx) {
    const std::size_t rr = idx / (2 * E), i = idx % (2 * E);
    SolverConfig cfg = s.base;
    cfg.mollifier.eps = rep.eps[i / 2];
    cfg.renorm = i % 2 ? RenormMode::off : s.base.renorm;
    cfg.seed = rng::derive_seed(s.base.seed, rr);
    cfg.counterterms = sched[i];
    SimulateOptions opt;
    opt.track_psi = cfg.noise;
    auto run = simulate(cfg, opt);
    Outcome& o = runs[idx];
    o.blew_up = run.blew_up;
    if (run.blew_up) return;
    o.sup = run.observables.back().sup_u;
    o.rem = run.u;
    if (!run.psi.empty())
      for (std::size_t k = 0; k < o.rem.size(); ++k) o.rem[k] -= run.psi[k];
    o.u = std::move(run.u);
  });

  const double cell = g.cell_volume();
  auto l2_diff = [&](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) return std::numeric_limits<double>::quiet_NaN();
    quad::KahanSum acc;
    for (std::size_t k = 0; k < a.size(); ++k) acc.add((a[k] - b[k]) * (a[k] - b[k]));
    return std::sqrt(acc.value() * cell);
  };
  auto at = [&](std::size_t rr, std::size_t j, int mode) -> const Outcome& { return runs[rr * 2 * E + 2 * j + mode]; };
  for (int mode = 0; mode < 2; ++mode) {
    auto& sup = mode ? rep.sup_off : rep.sup_renorm;
    auto& rr_out = mode ? rep.r_off : rep.r_renorm;
    auto& rem_out = mode ? rep.rem_off : rep.rem_renorm;
    auto& blow = mode ? rep.blowups_off : rep.blowups_renorm;
    for (std::size_t j = 0; j < E; ++j) {
      std::vector<double> sv;
      int b = 0;
      for (std::size_t rr = 0; rr < R; ++rr) {
        sv.push_back(at(rr, j, mode).sup);
        b += at(rr, j, mode).blew_up;
      }
      sup.push_back(finite_median(sv));
      blow.push_back(b);
      rep.any_blowup = rep.any_blowup || b > 0;
      if (j + 1 == E) continue;
      std::vector<double> rv, mv;
      for (std::size_t rr = 0; rr < R; ++rr) {
        rv.push_back(l2_diff(at(rr, j, mode).u, at(rr, j + 1, mode).u));
        mv.push_back(l2_diff(at(rr, j, mode).rem, at(rr, j + 1, mode).rem));
      }
      rr_out.push_back(finite_median(rv));
      rem_out.push_back(finite_median(mv));
    }
  }

  rep.renorm_decreasing = true;
  bool r_nondecreasing = true, sup_doubling = true;
  for (std::size_t j = 1; j < rep.r_renorm.size(); ++j) {
    rep.r_renorm_ratios.push_back(rep.r_renorm[j] / rep.r_renorm[j - 1]);
    rep.r_off_ratios.push_back(rep.r_off[j] / rep.r_off[j - 1]);
    rep.renorm_decreasing = rep.renorm_decreasing && rep.r_renorm_ratios.back() <= 0.85;
    r_nondecreasing = r_nondecreasing && rep.r_off[j] >= rep.r_off[j - 1];
  }
  for (std::size_t j = 1; j < E; ++j) {
    rep.sup_off_ratios.push_back(rep.sup_off[j] / rep.sup_off[j - 1]);
    sup_doubling = sup_doubling && rep.sup_off_ratios.back() >= 2.0;
  }
  rep.off_diverging = r_nondecreasing || sup_doubling;
  return rep;
}

inline CommandResult cmd_converge(const Resolved& r, const std::filesystem::path& out) {
  const long halvings = r.integer("eps_halvings");
  if (halvings < 2) throw ConfigError("key 'eps_halvings': must be >= 2 (got " + std::to_string(halvings) + ")");
  ConvergeSettings s;
  s.base = solver_config_from(r);
  if (s.base.renorm == RenormMode::off) throw ConfigError("key 'renorm': converge compares a renormalised run with renorm off");
  s.halvings = static_cast<int>(halvings);
  s.realisations = static_cast<int>(r.integer("realisations"));
  s.workers = workers_from(r);
  const auto rep = converge(s);

  Csv csv({"eps", "sup_renorm", "sup_off", "r_renorm", "r_off", "r_remainder_renorm", "r_remainder_off",
           "blowups_renorm", "blowups_off"});
  for (std::size_t j = 0; j < rep.eps.size(); ++j) {
    const bool pair = j < rep.r_renorm.size();
    csv.row({num(rep.eps[j]), num(rep.sup_renorm[j]), num(rep.sup_off[j]), pair ? num(rep.r_renorm[j]) : "",
             pair ? num(rep.r_off[j]) : "", pair ? num(rep.rem_renorm[j]) : "", pair ? num(rep.rem_off[j]) : "",
             std::to_string(rep.blowups_renorm[j]), std::to_string(rep.blowups_off[j])});
  }
  csv.write(out / "converge.csv");

  CommandResult res;
  res.metrics["eps"] = rep.eps;
  res.metrics["r_renorm"] = rep.r_renorm;
  res.metrics["r_off"] = rep.r_off;
  res.metrics["r_remainder_renorm"] = rep.rem_renorm;
  res.metrics["r_renorm_ratios"] = rep.r_renorm_ratios;
  res.metrics["r_off_ratios"] = rep.r_off_ratios;
  res.metrics["sup_off_ratios"] = rep.sup_off_ratios;
  res.metrics["renorm_decreasing"] = rep.renorm_decreasing;
  res.metrics["off_diverging"] = rep.off_diverging;
  res.metrics["any_blowup"] = rep.any_blowup;
  res.pass_fail = rep.pass() ? "PASS" : "FAIL";
  res.exit_code = rep.any_blowup ? kBlowUp : kOk;
  return res;
}

// --- objects ----------------------------------------------------------------------------

inline CommandResult cmd_objects(const Resolved& r, const std::filesystem::path& out) {
  ObjectsConfig cfg;
  cfg.lat = lattice_from(r);
  cfg.mollifier = {r.num("eps"), cfg.lat.d, parse_profile(r.str("profile"))};
  cfg.q = {r.num("a1"), r.num("a2"), r.num("horizon")};
  cfg.seed = seed_from(r);
  const long R = r.integer("realisations");
  if (R < 1) throw ConfigError("key 'realisations': must be >= 1");
  cfg.realisations = static_cast<int>(R);
  cfg.workers = workers_from(r);
  cfg.burn_in = r.num("burn_in");
  if (!(cfg.burn_in >= 0.0 && cfg.burn_in < 1.0)) throw ConfigError("key 'burn_in': must lie in [0, 1)");
  const auto sm = object_statistics(cfg);
  const bool verdict = sm.has_verdict();

  auto se = [](const Estimate& e) { return e.has_se() ? num(e.se) : std::string("n/a"); };
  auto word = [&](bool ok) { return verdict ? std::string(ok ? "PASS" : "FAIL") : std::string("n/a"); };
  Csv csv({"row", "object", "window", "mean", "mean_se", "second_moment", "second_moment_se", "reference", "verdict"});
  for (const auto& o : sm.objects)
    for (const auto& [wname, w] : {std::pair{"early", &o.early}, std::pair{"late", &o.late}})
      csv.row({"stat", o.name, wname, num(w->mean.mean), se(w->mean), num(w->second_moment.mean), se(w->second_moment),
               "", ""});
  for (const auto& o : sm.objects) {
    if (o.name.rfind("wick", 0) == 0)
      csv.row({"wick_mean", o.name, "both", "", "", "", "", "0",
               word(consistent_with(o.early.mean, 0.0) && consistent_with(o.late.mean, 0.0))});
    const bool same = agree(o.early.mean, o.late.mean) && agree(o.early.second_moment, o.late.second_moment);
    csv.row({"translation", o.name, "early_vs_late", "", "", "", "", "",
             o.name == "psi_q" ? std::string("excluded") : word(same)});
  }
  csv.row({"psi_variance_vs_c1_lattice", "psi", "late", num(sm.psi_variance.mean), se(sm.psi_variance), "", "",
           num(sm.c1_window), word(sm.variance_ok())});
  csv.write(out / "objects.csv");

  CommandResult res;
  res.metrics["realisations"] = sm.realisations;
  res.metrics["psi_variance"] = sm.psi_variance.mean;
  res.metrics["psi_variance_se"] = sm.psi_variance.has_se() ? json(sm.psi_variance.se) : json(nullptr);
  res.metrics["c1_lattice_window"] = sm.c1_window;
  if (verdict) {
    res.metrics["wick_mean_ok"] = sm.wick_mean_ok();
    res.metrics["variance_ok"] = sm.variance_ok();
    res.metrics["translation_ok"] = sm.translation_ok();
    res.pass_fail = sm.wick_mean_ok() && sm.variance_ok() && sm.translation_ok() ? "PASS" : "FAIL";
  }
  return res;
}

// --- dispatch ---------------------------------------------------------------------------

inline void write_summary(const std::filesystem::path& path, const std::string& command, const std::string& hash,
                          const CommandResult& res) {
  json j;
  j["command"] = command;
  j["config_hash"] = hash;
  j["pass_fail"] = res.pass_fail;
  j["metrics"] = res.metrics;
  j["metrics"]["exit_code"] = res.exit_code;
  std::ofstream f(path, std::ios::binary);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
}

/// Writes the provenance file, runs the command and writes the summary. Configuration errors
/// raised during the run give exit code 1, other failures exit code 2; both still leave a summary.
inline CommandResult run_command(const std::string& command, const Resolved& r) {
  const std::filesystem::path out = r.str("out_dir");
  std::filesystem::create_directories(out);
  config::write_provenance((out / (command + ".config")).string(), command, r);
  CommandResult res;
  try {
    if (command == "constants")
      res = cmd_constants(r, out);
    else if (command == "kernel-verify")
      res = cmd_kernel_verify(r, out);
    else if (command == "simulate")
      res = cmd_simulate(r, out);
    else if (command == "converge")
      res = cmd_converge(r, out);
    else if (command == "objects")
      res = cmd_objects(r, out);
    else
      throw ConfigError("unknown command '" + command + "'");
  } catch (const std::invalid_argument& e) {
    res = {kUsage, "FAIL", {{"error", e.what()}}};
  } catch (const std::exception& e) {
    res = {kNumerical, "FAIL", {{"error", e.what()}}};
  }
  write_summary(out / (command + ".json"), command, r.hash(), res);
  return res;
}

}  // namespace fhn::exp
