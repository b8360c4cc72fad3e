#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace symvar {

// Adaptive Gauss-Kronrod (G7,K15) quadrature on a finite interval.
// Templated on the integrand; Scalar stays a template parameter so the kernel
// can be reused at other precisions.
template <class Scalar = double, class F>
Scalar integrate(F&& f, Scalar a, Scalar b, Scalar tol = Scalar(1e-10),
                 int max_depth = 60) {
  // K15 abscissae on [0,1] side (symmetric) and weights; G7 weights interleave.
  static const double xk[8] = {0.0,
                               0.2077849550078985,
                               0.4058451513773972,
                               0.5860872354676911,
                               0.7415311855993944,
                               0.8648644233597691,
                               0.9491079123427585,
                               0.9914553711208126};
  static const double wk[8] = {0.2094821410847278, 0.2044329400752989,
                               0.1903505780647854, 0.1690047266392679,
                               0.1406532597155259, 0.1047900103222502,
                               0.0630920926299786, 0.0229353220105292};
  static const double wg[4] = {0.4179591836734694, 0.3818300505051189,
                               0.2797053914892767, 0.1294849661688697};

  struct Segment {
    Scalar a, b, value, error;
    int depth;
  };

  auto rule = [&](Scalar lo, Scalar hi, Scalar& val, Scalar& err) {
    const Scalar c = Scalar(0.5) * (lo + hi);
    const Scalar h = Scalar(0.5) * (hi - lo);
    Scalar resk = Scalar(wk[0]) * f(c);
    Scalar resg = Scalar(wg[0]) * f(c);
    for (int j = 1; j < 8; ++j) {
      const Scalar dx = h * Scalar(xk[j]);
      const Scalar fsum = f(c - dx) + f(c + dx);
      resk += Scalar(wk[j]) * fsum;
      if (j % 2 == 0) resg += Scalar(wg[j / 2]) * fsum;
    }
    val = resk * h;
    err = std::abs((resk - resg) * h);
  };

  std::vector<Segment> stack;
  Segment s0;
  rule(a, b, s0.value, s0.error);
  s0.a = a;
  s0.b = b;
  s0.depth = 0;
  stack.push_back(s0);

  Scalar total = Scalar(0);
  while (!stack.empty()) {
    Segment s = stack.back();
    stack.pop_back();
    const Scalar local_tol =
        std::max(tol * std::abs(s.b - s.a) / std::abs(b - a), Scalar(1e-300));
    if (s.error <= local_tol || s.depth >= max_depth) {
      total += s.value;
      continue;
    }
    const Scalar mid = Scalar(0.5) * (s.a + s.b);
    Segment l, r;
    rule(s.a, mid, l.value, l.error);
    rule(mid, s.b, r.value, r.error);
    l.a = s.a;
    l.b = mid;
    r.a = mid;
    r.b = s.b;
    l.depth = r.depth = s.depth + 1;
    stack.push_back(l);
    stack.push_back(r);
  }
  return total;
}

// Integral of f over [a, inf) for integrands that eventually decay.
// The domain is extended by doubling; if the last-segment mass fails to
// decrease over `divergence_doublings` successive doublings the integral is
// declared divergent and +inf is returned.
template <class F>
double integrate_to_infinity(F&& f, double a, double tol = 1e-12,
                             double initial_width = 1.0,
                             int divergence_doublings = 3) {
  double total = 0.0;
  double lo = a;
  double width = initial_width;
  double prev_segment = -1.0;
  int non_decreasing = 0;
  for (int k = 0; k < 200; ++k) {
    const double hi = lo + width;
    const double seg = integrate(f, lo, hi, tol);
    total += seg;
    if (prev_segment >= 0.0 && seg >= prev_segment && seg > tol) {
      if (++non_decreasing >= divergence_doublings)
        return std::numeric_limits<double>::infinity();
    } else {
      non_decreasing = 0;
    }
    if (seg < tol && std::abs(f(hi)) < 1e-14) return total;
    prev_segment = seg;
    lo = hi;
    width *= 2.0;
  }
  throw std::runtime_error("integrate_to_infinity: no convergence within 200 doublings");
}

}  // namespace symvar
