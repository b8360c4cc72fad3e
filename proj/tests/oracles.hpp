// Independent numeric oracles for the test suite.
//
// Everything here is deliberately implemented with different algorithms than
// the library under test: composite Gauss-Legendre quadrature instead of the
// adaptive scheme, and a Runge-Kutta shooting method instead of the grid
// eigensolver.  Expected values frozen in the tests either come from closed
// forms (derived in comments at the point of use) or from these oracles.

#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracles {

using Fn = std::function<double(double)>;

// ---------------------------------------------------------------------------
// Composite 16-point Gauss-Legendre quadrature on [a, b].

inline double gauss_legendre(const Fn& f, double a, double b, int panels = 64) {
  // Nodes/weights for [-1, 1], 16 points (symmetric; positive half listed).
  static const double xs[8] = {
      0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
      0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
      0.9445750230732326, 0.9894009349916499};
  static const double ws[8] = {
      0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
      0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
      0.0622535239386479, 0.0271524594117541};
  double total = 0.0;
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * h;
    const double half = 0.5 * h;
    double acc = 0.0;
    for (int k = 0; k < 8; ++k) {
      acc += ws[k] * (f(mid + half * xs[k]) + f(mid - half * xs[k]));
    }
    total += acc * half;
  }
  return total;
}

// Mean and variance of the probability density proportional to e^{-V} on
// [lo, hi], by quadrature.
struct Moments1D {
  double mass = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

inline Moments1D density_moments(const Fn& V, double lo, double hi, int panels = 256) {
  // Shift by the minimum over a scan so the exponentials stay in range.
  double vmin = 1e300;
  for (int i = 0; i <= 512; ++i) {
    vmin = std::min(vmin, V(lo + (hi - lo) * i / 512.0));
  }
  const Fn rho = [&](double t) { return std::exp(-(V(t) - vmin)); };
  Moments1D m;
  m.mass = gauss_legendre(rho, lo, hi, panels);
  m.mean = gauss_legendre([&](double t) { return t * rho(t); }, lo, hi, panels) / m.mass;
  const double mu = m.mean;
  m.variance = gauss_legendre([&](double t) { return (t - mu) * (t - mu) * rho(t); }, lo,
                              hi, panels) /
               m.mass;
  return m;
}

// ---------------------------------------------------------------------------
// Shooting oracle for the first nonzero Neumann eigenvalue of the operator
//   L u = u'' - V' u'   on [lo, hi],  u'(lo) = u'(hi) = 0,
// i.e. the spectral gap of the probability measure e^{-V} dt restricted to
// the interval.  Integrates u'' = V' u' - lambda u with classical RK4 from a
// unit start and bisects on the sign of u'(hi); the first sign change above
// lambda = 0 locates lambda_1.

inline double shoot_terminal_slope(const Fn& Vp, double lo, double hi, double lambda,
                                   int steps) {
  double u = 1.0, w = 0.0;  // w = u'
  const double h = (hi - lo) / steps;
  auto f = [&](double t, double uu, double ww, double& du, double& dw) {
    du = ww;
    dw = Vp(t) * ww - lambda * uu;
  };
  double t = lo;
  for (int i = 0; i < steps; ++i) {
    double k1u, k1w, k2u, k2w, k3u, k3w, k4u, k4w;
    f(t, u, w, k1u, k1w);
    f(t + 0.5 * h, u + 0.5 * h * k1u, w + 0.5 * h * k1w, k2u, k2w);
    f(t + 0.5 * h, u + 0.5 * h * k2u, w + 0.5 * h * k2w, k3u, k3w);
    f(t + h, u + h * k3u, w + h * k3w, k4u, k4w);
    u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    w += h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
    t += h;
    // Renormalize to avoid overflow for large lambda.
    const double scale = std::max(std::abs(u), std::abs(w));
    if (scale > 1e12) {
      u /= scale;
      w /= scale;
    }
  }
  return w;
}

inline double shooting_gap(const Fn& Vp, double lo, double hi, double lambda_hi = 64.0,
                           int steps = 20000) {
  const double s0 = shoot_terminal_slope(Vp, lo, hi, 1e-9, steps);
  double prev = s0;
  double a = 1e-9, b = 0.0;
  bool bracketed = false;
  const int scan = 4096;
  for (int i = 1; i <= scan; ++i) {
    const double lam = lambda_hi * i / scan;
    const double s = shoot_terminal_slope(Vp, lo, hi, lam, steps);
    if ((s <= 0.0) != (prev <= 0.0)) {
      a = lambda_hi * (i - 1) / scan;
      if (a <= 0.0) a = 1e-9;
      b = lam;
      bracketed = true;
      break;
    }
    prev = s;
  }
  if (!bracketed) throw std::runtime_error("shooting oracle: no eigenvalue in range");
  for (int it = 0; it < 200 && (b - a) > 1e-13 * std::max(1.0, b); ++it) {
    const double mid = 0.5 * (a + b);
    const double s = shoot_terminal_slope(Vp, lo, hi, mid, steps);
    if ((s <= 0.0) == (shoot_terminal_slope(Vp, lo, hi, a, steps) <= 0.0)) {
      a = mid;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

// Central finite difference, for potentials without a closed-form derivative.
inline Fn numeric_derivative(const Fn& V, double h = 1e-6) {
  return [V, h](double t) { return (V(t + h) - V(t - h)) / (2.0 * h); };
}

}  // namespace oracles
