#pragma once

// Quadrature helpers: adaptive Gauss-Kronrod over breakpoint-split intervals and
// fixed composite Gauss-Legendre rules for sweeps that must be smooth in their
// parameters (finite differences of a fixed rule are well behaved, adaptive ones are not).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace fhn::quad {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }

  template <class F>
  double apply(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) sum += weights[i] * f(nodes[i]);
    return sum;
  }
};

namespace detail {
template <unsigned N>
Rule gauss_on(double a, double b) {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& x = G::abscissa();
  const auto& w = G::weights();
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  Rule r;
  // boost stores the non-negative half of a symmetric rule
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      r.nodes.push_back(c);
      r.weights.push_back(h * w[i]);
    } else {
      r.nodes.push_back(c - h * x[i]);
      r.weights.push_back(h * w[i]);
      r.nodes.push_back(c + h * x[i]);
      r.weights.push_back(h * w[i]);
    }
  }
  return r;
}
}  // namespace detail

/// Gauss-Legendre rule with `order` nodes on [a, b]. Supported orders: 8, 10, 16, 20, 30.
inline Rule gauss_legendre(int order, double a, double b) {
  switch (order) {
    case 8: return detail::gauss_on<8>(a, b);
    case 10: return detail::gauss_on<10>(a, b);
    case 16: return detail::gauss_on<16>(a, b);
    case 20: return detail::gauss_on<20>(a, b);
    case 30: return detail::gauss_on<30>(a, b);
    default: throw std::invalid_argument("gauss_legendre: unsupported order " + std::to_string(order));
  }
}

/// Composite Gauss-Legendre over the panels delimited by `edges` (sorted).
inline Rule composite(const std::vector<double>& edges, int order) {
  Rule out;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i + 1] > edges[i])) continue;
    Rule p = gauss_legendre(order, edges[i], edges[i + 1]);
    out.nodes.insert(out.nodes.end(), p.nodes.begin(), p.nodes.end());
    out.weights.insert(out.weights.end(), p.weights.begin(), p.weights.end());
  }
  return out;
}

inline Rule composite_uniform(double a, double b, int panels, int order) {
  std::vector<double> edges(static_cast<std::size_t>(panels) + 1);
  for (int i = 0; i <= panels; ++i) edges[static_cast<std::size_t>(i)] = a + (b - a) * i / panels;
  return composite(edges, order);
}

/// Sorted, de-duplicated breakpoints of [a, b] including the interior points in `interior`.
inline std::vector<double> breakpoints(double a, double b, std::vector<double> interior) {
  std::vector<double> pts{a, b};
  for (double p : interior)
    if (p > a && p < b) pts.push_back(p);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](double x, double y) { return std::abs(x - y) <= 1e-15 * std::max(1.0, std::abs(x)); }),
            pts.end());
  return pts;
}

struct Result {
  double value = 0.0;
  double error = 0.0;
};

/// Adaptive 61-point Gauss-Kronrod on each panel between consecutive breakpoints.
/// `rel_tol` is relative to the L1 norm over all panels, so panels where the integrand is
/// negligible are not refined. The returned error is the sum of panel estimates.
template <class F>
Result integrate(F&& f, const std::vector<double>& edges, double rel_tol = 1e-10, double abs_tol = 0.0,
                 unsigned max_depth = 15) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  struct Panel {
    double c, hw, value, err, l1;
  };
  std::vector<Panel> panels;
  double total_l1 = 0.0;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i + 1] > edges[i])) continue;
    // boost's error estimate degrades on short unscaled panels, so map each panel to [-1, 1]
    Panel p{0.5 * (edges[i] + edges[i + 1]), 0.5 * (edges[i + 1] - edges[i]), 0.0, 0.0, 0.0};
    auto g = [&](double y) { return f(p.c + p.hw * y); };
    p.value = p.hw * GK::integrate(g, -1.0, 1.0, 0, 0.0, &p.err, &p.l1);
    p.err *= p.hw;
    p.l1 *= p.hw;
    if (!std::isfinite(p.value)) throw QuadratureError("integrate: non-finite panel value");
    total_l1 += p.l1;
    panels.push_back(p);
  }
  Result r;
  for (auto& p : panels) {
    const double target = std::max(rel_tol * total_l1, abs_tol);
    if (p.err > target && p.l1 > 0.0) {
      auto g = [&](double y) { return f(p.c + p.hw * y); };
      double err = 0.0;
      p.value = p.hw * GK::integrate(g, -1.0, 1.0, max_depth, std::max(target / p.l1, 1e-15), &err);
      p.err = p.hw * err;
      if (!std::isfinite(p.value)) throw QuadratureError("integrate: non-finite panel value");
    }
    r.value += p.value;
    r.error += p.err;
  }
  return r;
}

template <class F>
Result integrate(F&& f, double a, double b, double rel_tol = 1e-10, double abs_tol = 0.0, unsigned max_depth = 15) {
  return integrate(std::forward<F>(f), std::vector<double>{a, b}, rel_tol, abs_tol, max_depth);
}

/// Cumulative trapezoid with uniform spacing h; out[0] = 0.
inline std::vector<double> cumulative_trapezoid(const std::vector<double>& y, double h) {
  std::vector<double> out(y.size(), 0.0);
  for (std::size_t i = 1; i < y.size(); ++i) out[i] = out[i - 1] + 0.5 * h * (y[i - 1] + y[i]);
  return out;
}

/// Neumaier-compensated accumulator.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace fhn::quad
