#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "symvar/types.hpp"

namespace symvar::gap1d {

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Potential1D = std::function<double(double)>;
using Potential2D = std::function<double(double, double)>;

// Uniform grids. `n` counts nodes. The Neumann solvers require the density
// mass outside the box to be negligible: the potential must exceed its grid
// minimum by >= 40 at the boundary and grow outward (tail certificate).
struct Grid1D {
  double lo = 0.0, hi = 1.0;
  Index n = 0;
  double h() const { return (hi - lo) / static_cast<double>(n - 1); }
  double node(Index i) const { return lo + h() * static_cast<double>(i); }
};

struct Grid2D {
  double lox = 0.0, hix = 1.0, loy = 0.0, hiy = 1.0;
  Index nx = 0, ny = 0;
  double hx() const { return (hix - lox) / static_cast<double>(nx - 1); }
  double hy() const { return (hiy - loy) / static_cast<double>(ny - 1); }
  double xnode(Index i) const { return lox + hx() * static_cast<double>(i); }
  double ynode(Index j) const { return loy + hy() * static_cast<double>(j); }
  Index size() const { return nx * ny; }
};

struct Spectrum {
  double lambda1 = 0.0;            // smallest nonzero Neumann eigenvalue
  double poincare_constant = 0.0;  // 1 / lambda1
  Vector eigenfunction;            // node values, unit L2(mu) norm (may be empty)
  double residual = 0.0;           // ||L u + lambda u||_mu / ||u||_mu
  double richardson_error = 0.0;   // |lambda(h) - lambda(2h)| / 3
};

struct SolveOptions {
  bool eigenfunction = true;
  bool richardson = true;
  // Treat the box as the measure's exact support (e.g. uniform on an
  // interval): skips the outside-mass tail certificate.
  bool restricted = false;
};

// Spectral gap of the divergence-form Neumann operator for density e^{-phi}
// restricted to the grid box. Second-order accurate; the Richardson estimate
// compares against the half-resolution solve.
Spectrum neumann_gap(const Potential1D& phi, const Grid1D& grid, SolveOptions opts = {});
Spectrum neumann_gap(const Potential2D& phi, const Grid2D& grid, SolveOptions opts = {});

// Box construction: centers on the potential mode and expands until the tail
// certificate holds with margin. Throws DomainError if no bounded box exists.
Grid1D auto_grid1d(const Potential1D& phi, Index resolution, double center_hint = 0.0,
                   double scale_hint = 1.0);
Grid2D auto_grid2d(const Potential2D& phi, Index resolution_per_axis,
                   double center_x = 0.0, double center_y = 0.0, double scale_hint = 1.0);

// 4 * (variance about the mean) — the one-dimensional Kannan-Lovasz-Simonovits
// style upper bound for c_P of a log-concave measure, by adaptive quadrature.
double kls_bound(const Potential1D& phi, double lo, double hi);
double kls_bound(const Potential2D& phi, double lox, double hix, double loy, double hiy);
// Sample version: 4 * sum of coordinate variances (rows of `batch` are points).
double kls_bound(const Matrix& batch);

// J(m) = integral_0^inf exp(-[V(m+t) + V(m-t) - 2V(m)]) dt; +inf when the
// integrand fails to decay (three successive non-decreasing doublings).
double spin_j(const Potential1D& V, double m);

// c_P of the two-site conditional measure: the 1D measure with potential
// t -> V(m + t/sqrt(2)) + V(m - t/sqrt(2)).
double two_site_gap(const Potential1D& V, double m, Index resolution = 2049);

// f(0)^2 * int t^2 f / (int f)^3 for an even log-concave density given on
// [0, upper]. Throws if the value escapes [1/3 - tol, 2 + tol].
double moment_ratio(const Potential1D& density, double upper);

struct AntiInvariantReport {
  double lambda1 = 0.0;
  double measured_cp = 0.0;       // 1 / lambda1 on the 2D grid
  double grid_tol = 0.0;          // Richardson estimate for lambda1
  bool found = false;             // some u∘R - u is a nonzero eigenfunction
  int witness = -1;               // index of the witnessing isometry
  double witness_norm = 0.0;      // L2(mu) norm of u∘R - u (u normalized)
  double witness_residual = 0.0;  // eigen-residual of the witness
  double corollary_rhs = 0.0;     // max_i sup over fixed-line anchors of slice gaps
};

// Checks that the gap eigenfunction of e^{-phi} on a symmetric 2D grid is
// genuinely non-invariant under the given orthogonal 2x2 maps (each must map
// the node set to itself), and evaluates the slice-gap upper bound
// c_P(mu) <= max_i sup_x c_P(mu_{x, E_i}).
AntiInvariantReport anti_invariant_eigenfunction_check(const Potential2D& phi,
                                                       const Grid2D& grid,
                                                       const std::vector<Matrix>& maps);

}  // namespace symvar::gap1d
