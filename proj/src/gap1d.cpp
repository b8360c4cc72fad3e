#include "symvar/gap1d.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <sstream>

#include "symvar/quadrature.hpp"
#include "symvar/rng.hpp"

namespace symvar::gap1d {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

// exp(-23) ~ 1e-10: the relative density allowed at the box edge, matching the
// documented outside-mass budget.  Boxes are *built* with a much larger rise so
// auto-grids clear the check with margin.
constexpr double kCertificateRise = 23.0;  // potential rise demanded at the box edge
constexpr double kBuildRise = 46.0;        // margin used when constructing boxes

// ---------------------------------------------------------------------------
// Symmetric tridiagonal eigensolver: Sturm-count bisection + inverse iteration.

Index sturm_count(const Vector& diag, const Vector& off, double sigma) {
  Index count = 0;
  double d = diag[0] - sigma;
  if (d < 0.0) ++count;
  for (Index j = 1; j < diag.size(); ++j) {
    double denom = d;
    if (std::abs(denom) < 1e-300) denom = (denom < 0.0) ? -1e-300 : 1e-300;
    d = diag[j] - sigma - off[j - 1] * off[j - 1] / denom;
    if (d < 0.0) ++count;
  }
  return count;
}

// k-th smallest eigenvalue (k is 1-based) by bisection on the Sturm count.
double tridiag_kth_eigenvalue(const Vector& diag, const Vector& off, Index k) {
  double lo = diag[0], hi = diag[0];
  for (Index j = 0; j < diag.size(); ++j) {
    const double radius = (j > 0 ? std::abs(off[j - 1]) : 0.0) +
                          (j + 1 < diag.size() ? std::abs(off[j]) : 0.0);
    lo = std::min(lo, diag[j] - radius);
    hi = std::max(hi, diag[j] + radius);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sturm_count(diag, off, mid) >= k)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

// Solve (T - sigma I) x = b for symmetric tridiagonal T, Gaussian elimination
// with partial pivoting (stable near-singular solves for inverse iteration).
Vector tridiag_shifted_solve(const Vector& diag, const Vector& off, double sigma, Vector b) {
  const Index n = diag.size();
  Vector d(n), du = Vector::Zero(n), du2 = Vector::Zero(n), dl = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) d[i] = diag[i] - sigma;
  for (Index i = 0; i + 1 < n; ++i) du[i] = dl[i] = off[i];

  for (Index i = 0; i + 1 < n; ++i) {
    if (std::abs(d[i]) >= std::abs(dl[i])) {
      double piv = d[i];
      if (std::abs(piv) < 1e-300) piv = (piv < 0.0) ? -1e-300 : 1e-300;
      const double factor = dl[i] / piv;
      d[i + 1] -= factor * du[i];
      b[i + 1] -= factor * b[i];
      dl[i] = 0.0;
    } else {  // swap rows i and i+1
      const double factor = d[i] / dl[i];
      std::swap(b[i], b[i + 1]);
      const double old_d1 = d[i + 1], old_du1 = (i + 2 < n) ? du[i + 1] : 0.0;
      d[i] = dl[i];
      du2[i] = old_du1;
      const double new_du = old_d1;
      d[i + 1] = du[i] - factor * old_d1;
      if (i + 2 < n) du[i + 1] = -factor * old_du1;
      du[i] = new_du;
      b[i + 1] -= factor * b[i];
      dl[i] = 0.0;
    }
  }
  Vector x(n);
  for (Index i = n - 1; i >= 0; --i) {
    double rhs = b[i];
    if (i + 1 < n) rhs -= du[i] * x[i + 1];
    if (i + 2 < n) rhs -= du2[i] * x[i + 2];
    double piv = d[i];
    if (std::abs(piv) < 1e-300) piv = (piv < 0.0) ? -1e-300 : 1e-300;
    x[i] = rhs / piv;
  }
  return x;
}

struct Tridiag1D {
  Vector diag, off;   // symmetrized operator B = M^{-1/2} A M^{-1/2}
  Vector mass;        // lumped masses m_j
  Vector kernel;      // unit kernel vector of B (proportional to sqrt(m))
};

void check_certificate_1d(const Vector& node_values, const char* what) {
  const Index n = node_values.size();
  const double vmin = node_values.minCoeff();
  std::ostringstream msg;
  if (node_values[0] - vmin < kCertificateRise || node_values[n - 1] - vmin < kCertificateRise) {
    msg << what << ": tail certificate failed (potential rise "
        << std::min(node_values[0] - vmin, node_values[n - 1] - vmin) << " < "
        << kCertificateRise << " at the box edge); enlarge the box";
    throw DomainError(msg.str());
  }
  if (node_values[0] <= node_values[1] || node_values[n - 1] <= node_values[n - 2]) {
    msg << what << ": tail certificate failed (potential not growing outward at the box edge)";
    throw DomainError(msg.str());
  }
}

Tridiag1D assemble_1d(const Potential1D& phi, const Grid1D& grid, bool restricted = false) {
  const Index n = grid.n;
  if (n < 8) throw DomainError("neumann_gap: need at least 8 grid nodes");
  const double h = grid.h();

  Vector node_values(n), mid_values(n - 1);
  for (Index i = 0; i < n; ++i) node_values[i] = phi(grid.node(i));
  for (Index i = 0; i + 1 < n; ++i) mid_values[i] = phi(grid.node(i) + 0.5 * h);
  if (!restricted) check_certificate_1d(node_values, "neumann_gap");

  const double shift = std::min(node_values.minCoeff(), mid_values.minCoeff());
  Vector rho(n), w(n - 1);
  for (Index i = 0; i < n; ++i) rho[i] = std::exp(-(node_values[i] - shift));
  for (Index i = 0; i + 1 < n; ++i) w[i] = std::exp(-(mid_values[i] - shift));

  Tridiag1D out;
  out.mass.resize(n);
  for (Index i = 0; i < n; ++i)
    out.mass[i] = h * rho[i] * ((i == 0 || i == n - 1) ? 0.5 : 1.0);

  Vector a_diag = Vector::Zero(n), a_off(n - 1);
  for (Index i = 0; i + 1 < n; ++i) {
    a_diag[i] += w[i] / h;
    a_diag[i + 1] += w[i] / h;
    a_off[i] = -w[i] / h;
  }
  out.diag.resize(n);
  out.off.resize(n - 1);
  for (Index i = 0; i < n; ++i) out.diag[i] = a_diag[i] / out.mass[i];
  for (Index i = 0; i + 1 < n; ++i)
    out.off[i] = a_off[i] / std::sqrt(out.mass[i] * out.mass[i + 1]);
  out.kernel = out.mass.cwiseSqrt();
  out.kernel.normalize();
  return out;
}

double solve_1d_lambda(const Tridiag1D& op, Vector* eigvec_b) {
  const double lambda0 = tridiag_kth_eigenvalue(op.diag, op.off, 1);
  const double scale = op.diag.cwiseAbs().maxCoeff();
  if (std::abs(lambda0) > 1e-9 * std::max(1.0, scale))
    throw SolveError("neumann_gap: discrete kernel missing (lambda0 = " +
                     std::to_string(lambda0) + ")");
  const double lambda1 = tridiag_kth_eigenvalue(op.diag, op.off, 2);
  if (eigvec_b) {
    Rng rng(0x9151d1e5u);
    Vector v = rng.gaussian_vector(op.diag.size());
    const double sigma = lambda1 * (1.0 + 1e-13) + 1e-300;
    for (int it = 0; it < 4; ++it) {
      v = tridiag_shifted_solve(op.diag, op.off, sigma, v);
      v -= op.kernel.dot(v) * op.kernel;
      v.normalize();
    }
    *eigvec_b = v;
  }
  return lambda1;
}

Spectrum solve_1d(const Potential1D& phi, const Grid1D& grid, bool eigenfunction,
                  bool restricted = false) {
  const Tridiag1D op = assemble_1d(phi, grid, restricted);
  Spectrum spec;
  Vector v;
  spec.lambda1 = solve_1d_lambda(op, eigenfunction ? &v : nullptr);
  spec.poincare_constant = 1.0 / spec.lambda1;
  if (eigenfunction) {
    // Residual in the symmetrized frame equals the mu-norm residual.
    const Index n = op.diag.size();
    Vector bv(n);
    for (Index i = 0; i < n; ++i) {
      bv[i] = op.diag[i] * v[i];
      if (i > 0) bv[i] += op.off[i - 1] * v[i - 1];
      if (i + 1 < n) bv[i] += op.off[i] * v[i + 1];
    }
    spec.residual = (bv - spec.lambda1 * v).norm();
    spec.eigenfunction = v.cwiseQuotient(op.mass.cwiseSqrt());
    Index peak = 0;
    spec.eigenfunction.cwiseAbs().maxCoeff(&peak);
    if (spec.eigenfunction[peak] < 0.0) spec.eigenfunction = -spec.eigenfunction;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// 2D assembly and solvers

struct Operator2D {
  SpMat B;        // symmetrized operator
  Vector mass;    // lumped masses
  Vector kernel;  // unit kernel of B
  double gersh = 0.0;
};

Operator2D assemble_2d(const Potential2D& phi, const Grid2D& grid, bool restricted = false) {
  const Index nx = grid.nx, ny = grid.ny;
  if (nx < 8 || ny < 8) throw DomainError("neumann_gap: need at least 8x8 grid nodes");
  const double hx = grid.hx(), hy = grid.hy();
  const Index n = nx * ny;
  auto idx = [nx](Index i, Index j) { return i + nx * j; };

  Matrix node_values(nx, ny);
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i < nx; ++i) node_values(i, j) = phi(grid.xnode(i), grid.ynode(j));

  // Tail certificate on the boundary ring.
  const double vmin = node_values.minCoeff();
  double boundary_min = 1e300;
  for (Index i = 0; i < nx; ++i)
    boundary_min = std::min({boundary_min, node_values(i, 0), node_values(i, ny - 1)});
  for (Index j = 0; j < ny; ++j)
    boundary_min = std::min({boundary_min, node_values(0, j), node_values(nx - 1, j)});
  if (!restricted && boundary_min - vmin < kCertificateRise)
    throw DomainError("neumann_gap: 2D tail certificate failed (rise " +
                      std::to_string(boundary_min - vmin) + " at the box edge)");

  double shift = vmin;
  Operator2D op;
  op.mass.resize(n);
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i < nx; ++i) {
      const double sx = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
      const double sy = (j == 0 || j == ny - 1) ? 0.5 : 1.0;
      op.mass[idx(i, j)] = hx * hy * sx * sy * std::exp(-(node_values(i, j) - shift));
    }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(5 * n));
  Vector a_diag = Vector::Zero(n);
  auto add_edge = [&](Index p, Index q, double weight) {
    a_diag[p] += weight;
    a_diag[q] += weight;
    trips.emplace_back(p, q, -weight);
    trips.emplace_back(q, p, -weight);
  };
  for (Index j = 0; j < ny; ++j) {
    const double ty = (j == 0 || j == ny - 1) ? 0.5 : 1.0;
    for (Index i = 0; i + 1 < nx; ++i) {
      const double w = std::exp(-(phi(grid.xnode(i) + 0.5 * hx, grid.ynode(j)) - shift));
      add_edge(idx(i, j), idx(i + 1, j), w * hy * ty / hx);
    }
  }
  for (Index i = 0; i < nx; ++i) {
    const double tx = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
    for (Index j = 0; j + 1 < ny; ++j) {
      const double w = std::exp(-(phi(grid.xnode(i), grid.ynode(j) + 0.5 * hy) - shift));
      add_edge(idx(i, j), idx(i, j + 1), w * hx * tx / hy);
    }
  }
  for (Index p = 0; p < n; ++p) trips.emplace_back(p, p, a_diag[p]);

  SpMat A(n, n);
  A.setFromTriplets(trips.begin(), trips.end());
  const Vector inv_sqrt_mass = op.mass.cwiseSqrt().cwiseInverse();
  op.B = inv_sqrt_mass.asDiagonal() * A * inv_sqrt_mass.asDiagonal();
  op.kernel = op.mass.cwiseSqrt();
  op.kernel.normalize();
  for (Index p = 0; p < n; ++p) {
    double row = 0.0;
    for (SpMat::InnerIterator it(op.B, p); it; ++it) row += std::abs(it.value());
    op.gersh = std::max(op.gersh, row);
  }
  return op;
}

// Number of eigenvalues of B strictly below c, via LDL^T inertia.
Index inertia_below(const SpMat& B, double c) {
  SpMat shifted = B;
  for (Index p = 0; p < B.rows(); ++p) shifted.coeffRef(p, p) -= c;
  Eigen::SimplicialLDLT<SpMat> ldlt(shifted);
  if (ldlt.info() != Eigen::Success)
    throw SolveError("neumann_gap: LDLT factorization failed in inertia probe");
  const Vector d = ldlt.vectorD();
  Index count = 0;
  for (Index i = 0; i < d.size(); ++i)
    if (d[i] < 0.0) ++count;
  return count;
}

std::pair<double, Vector> sparse_second_smallest(const Operator2D& op) {
  const Index n = op.B.rows();
  Rng rng(0x2d2d2d2dull);
  Vector v = rng.gaussian_vector(n);
  v -= op.kernel.dot(v) * op.kernel;
  v.normalize();

  SpMat identity(n, n);
  identity.setIdentity();

  // Phase 1: inverse iteration with a tiny positive shift (PD system).
  {
    Eigen::SimplicialLDLT<SpMat> solver(op.B + (1e-8 * op.gersh) * identity);
    if (solver.info() != Eigen::Success)
      throw SolveError("neumann_gap: LDLT failed on the shifted operator");
    for (int it = 0; it < 25; ++it) {
      v = solver.solve(v);
      v -= op.kernel.dot(v) * op.kernel;
      v.normalize();
    }
  }
  double theta = v.dot(op.B * v);

  // Phase 2: Rayleigh-quotient iteration with jittered shifts.
  double residual = (op.B * v - theta * v).norm();
  for (int round = 0; round < 10 && residual > std::max(1e-11, 1e-14 * op.gersh); ++round) {
    double shift = theta * (1.0 - 1e-9) - 1e-14 * op.gersh;
    Vector w;
    bool ok = false;
    for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
      SpMat shifted = op.B;
      for (Index p = 0; p < n; ++p) shifted.coeffRef(p, p) -= shift;
      Eigen::SimplicialLDLT<SpMat> solver(shifted);
      if (solver.info() == Eigen::Success) {
        w = solver.solve(v);
        ok = w.allFinite() && w.norm() > 0.0;
      }
      if (!ok) shift *= (1.0 - 1e-7 * (attempt + 1));
    }
    if (!ok) break;  // keep the phase-1 vector; residual check below decides
    w -= op.kernel.dot(w) * op.kernel;
    w.normalize();
    v = w;
    theta = v.dot(op.B * v);
    residual = (op.B * v - theta * v).norm();
  }

  // Verify nothing sits between the kernel and theta (degeneracy-aware).
  const double probe = theta - std::max(1e-6 * theta, 10.0 * residual);
  if (probe > 0.0 && inertia_below(op.B, probe) > 1) {
    // Converged onto a higher eigenvalue: bisect down to the second smallest.
    double lo = 1e-8 * op.gersh, hi = probe;
    for (int it = 0; it < 80 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (inertia_below(op.B, mid) > 1)
        hi = mid;
      else
        lo = mid;
    }
    const double lambda = 0.5 * (lo + hi);
    SpMat shifted = op.B;
    for (Index p = 0; p < n; ++p) shifted.coeffRef(p, p) -= lambda * (1.0 - 1e-10);
    Eigen::SimplicialLDLT<SpMat> solver(shifted);
    if (solver.info() != Eigen::Success)
      throw SolveError("neumann_gap: LDLT failed during bisection refinement");
    v = rng.gaussian_vector(n);
    for (int it = 0; it < 4; ++it) {
      v = solver.solve(v);
      v -= op.kernel.dot(v) * op.kernel;
      v.normalize();
    }
    theta = v.dot(op.B * v);
  }
  return {theta, v};
}

Spectrum solve_2d(const Potential2D& phi, const Grid2D& grid, bool eigenfunction,
                  bool restricted = false) {
  const Operator2D op = assemble_2d(phi, grid, restricted);
  const Index n = op.B.rows();

  Spectrum spec;
  Vector v;
  if (n <= 1600) {
    const Matrix dense(op.B);
    Eigen::SelfAdjointEigenSolver<Matrix> es(dense);
    if (std::abs(es.eigenvalues()[0]) > 1e-9 * std::max(1.0, op.gersh))
      throw SolveError("neumann_gap: discrete kernel missing in 2D operator");
    spec.lambda1 = es.eigenvalues()[1];
    v = es.eigenvectors().col(1);
  } else {
    auto [lambda, vec] = sparse_second_smallest(op);
    spec.lambda1 = lambda;
    v = vec;
  }
  spec.poincare_constant = 1.0 / spec.lambda1;
  if (eigenfunction) {
    spec.residual = (op.B * v - spec.lambda1 * v).norm();
    spec.eigenfunction = v.cwiseQuotient(op.mass.cwiseSqrt());
    Index peak = 0;
    spec.eigenfunction.cwiseAbs().maxCoeff(&peak);
    if (spec.eigenfunction[peak] < 0.0) spec.eigenfunction = -spec.eigenfunction;
  }
  return spec;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points

Spectrum neumann_gap(const Potential1D& phi, const Grid1D& grid, SolveOptions opts) {
  Spectrum spec = solve_1d(phi, grid, opts.eigenfunction, opts.restricted);
  if (opts.richardson) {
    Grid1D coarse{grid.lo, grid.hi, (grid.n + 1) / 2};
    const Spectrum cspec = solve_1d(phi, coarse, false, opts.restricted);
    spec.richardson_error = std::abs(spec.lambda1 - cspec.lambda1) / 3.0;
  }
  return spec;
}

Spectrum neumann_gap(const Potential2D& phi, const Grid2D& grid, SolveOptions opts) {
  Spectrum spec = solve_2d(phi, grid, opts.eigenfunction, opts.restricted);
  if (opts.richardson) {
    Grid2D coarse{grid.lox, grid.hix, grid.loy, grid.hiy, (grid.nx + 1) / 2, (grid.ny + 1) / 2};
    const Spectrum cspec = solve_2d(phi, coarse, false, opts.restricted);
    spec.richardson_error = std::abs(spec.lambda1 - cspec.lambda1) / 3.0;
  }
  return spec;
}

namespace {

// Bracket and refine the minimizer of a 1D potential.
double find_mode(const Potential1D& phi, double center, double scale) {
  double a = center - scale, m = center, b = center + scale;
  double fa = phi(a), fm = phi(m), fb = phi(b);
  for (int it = 0; it < 240 && !(fm <= fa && fm <= fb); ++it) {
    if (fa < fb) {
      b = m;
      fb = fm;
      m = a;
      fm = fa;
      a -= 2.0 * (b - a);
      fa = phi(a);
    } else {
      a = m;
      fa = fm;
      m = b;
      fm = fb;
      b += 2.0 * (b - a);
      fb = phi(b);
    }
    if (!std::isfinite(fa) || !std::isfinite(fb))
      throw DomainError("auto_grid: potential not finite during mode search");
  }
  if (!(fm <= fa && fm <= fb))
    throw DomainError("auto_grid: failed to bracket the potential mode");
  const double gold = 0.5 * (3.0 - std::sqrt(5.0));
  double x1 = a + gold * (b - a), x2 = b - gold * (b - a);
  double f1 = phi(x1), f2 = phi(x2);
  for (int it = 0; it < 120; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = a + gold * (b - a);
      f1 = phi(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = b - gold * (b - a);
      f2 = phi(x2);
    }
  }
  return 0.5 * (a + b);
}

double expand_until_rise(const Potential1D& phi, double from, double direction,
                         double base_value, double scale) {
  double step = 0.5 * scale;
  double t = from;
  for (int it = 0; it < 400; ++it) {
    t += direction * step;
    if (phi(t) - base_value >= kBuildRise) return t;
    step *= 1.3;
  }
  throw DomainError("auto_grid: potential does not confine (no bounded box found)");
}

}  // namespace

Grid1D auto_grid1d(const Potential1D& phi, Index resolution, double center_hint,
                   double scale_hint) {
  const double mode = find_mode(phi, center_hint, scale_hint);
  const double fmode = phi(mode);
  Grid1D grid;
  grid.lo = expand_until_rise(phi, mode, -1.0, fmode, scale_hint);
  grid.hi = expand_until_rise(phi, mode, +1.0, fmode, scale_hint);
  grid.n = resolution;
  return grid;
}

Grid2D auto_grid2d(const Potential2D& phi, Index resolution_per_axis, double center_x,
                   double center_y, double scale_hint) {
  double mx = center_x, my = center_y;
  for (int sweep = 0; sweep < 3; ++sweep) {
    mx = find_mode([&](double t) { return phi(t, my); }, mx, scale_hint);
    my = find_mode([&](double t) { return phi(mx, t); }, my, scale_hint);
  }
  const double fmode = phi(mx, my);
  Grid2D grid;
  grid.lox = expand_until_rise([&](double t) { return phi(t, my); }, mx, -1.0, fmode, scale_hint);
  grid.hix = expand_until_rise([&](double t) { return phi(t, my); }, mx, +1.0, fmode, scale_hint);
  grid.loy = expand_until_rise([&](double t) { return phi(mx, t); }, my, -1.0, fmode, scale_hint);
  grid.hiy = expand_until_rise([&](double t) { return phi(mx, t); }, my, +1.0, fmode, scale_hint);
  grid.nx = grid.ny = resolution_per_axis;
  return grid;
}

// ---------------------------------------------------------------------------
// KLS-style bounds

double kls_bound(const Potential1D& phi, double lo, double hi) {
  double vmin = 1e300;
  for (int i = 0; i <= 64; ++i)
    vmin = std::min(vmin, phi(lo + (hi - lo) * i / 64.0));
  auto density = [&](double t) { return std::exp(-(phi(t) - vmin)); };
  const double z = integrate(density, lo, hi, 1e-12);
  const double m1 = integrate([&](double t) { return t * density(t); }, lo, hi, 1e-12) / z;
  const double m2 = integrate([&](double t) { return t * t * density(t); }, lo, hi, 1e-12) / z;
  return 4.0 * (m2 - m1 * m1);
}

double kls_bound(const Potential2D& phi, double lox, double hix, double loy, double hiy) {
  double vmin = 1e300;
  for (int i = 0; i <= 32; ++i)
    for (int j = 0; j <= 32; ++j)
      vmin = std::min(vmin, phi(lox + (hix - lox) * i / 32.0, loy + (hiy - loy) * j / 32.0));
  auto moment = [&](auto&& weight) {
    return integrate(
        [&](double x) {
          return integrate(
              [&](double y) { return weight(x, y) * std::exp(-(phi(x, y) - vmin)); }, loy, hiy,
              1e-11);
        },
        lox, hix, 1e-11);
  };
  const double z = moment([](double, double) { return 1.0; });
  const double ex = moment([](double x, double) { return x; }) / z;
  const double ey = moment([](double, double y) { return y; }) / z;
  const double exx = moment([](double x, double) { return x * x; }) / z;
  const double eyy = moment([](double, double y) { return y * y; }) / z;
  return 4.0 * ((exx - ex * ex) + (eyy - ey * ey));
}

double kls_bound(const Matrix& batch) {
  const Index n = batch.rows();
  if (n < 2) throw DomainError("kls_bound: need at least 2 samples");
  double total = 0.0;
  for (Index j = 0; j < batch.cols(); ++j) {
    const double mean = batch.col(j).mean();
    total += (batch.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
  }
  return 4.0 * total;
}

// ---------------------------------------------------------------------------
// Spin helpers

double spin_j(const Potential1D& V, double m) {
  const double v0 = 2.0 * V(m);
  auto integrand = [&](double t) { return std::exp(-(V(m + t) + V(m - t) - v0)); };
  return integrate_to_infinity(integrand, 0.0, 1e-12, std::max(1.0, std::abs(m)));
}

double two_site_gap(const Potential1D& V, double m, Index resolution) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  auto psi = [&, m](double t) { return V(m + t * inv_sqrt2) + V(m - t * inv_sqrt2); };
  const Grid1D grid = auto_grid1d(psi, resolution, 0.0, 1.0 + std::abs(m));
  return neumann_gap(psi, grid, {.eigenfunction = false, .richardson = false})
      .poincare_constant;
}

double moment_ratio(const Potential1D& density, double upper) {
  const double f0 = density(0.0);
  const double i0 = integrate(density, 0.0, upper, 1e-13);
  const double i2 =
      integrate([&](double t) { return t * t * density(t); }, 0.0, upper, 1e-13);
  const double ratio = f0 * f0 * i2 / (i0 * i0 * i0);
  if (ratio < 1.0 / 3.0 - 1e-6 || ratio > 2.0 + 1e-6)
    throw SolveError("moment_ratio: value " + std::to_string(ratio) +
                     " escapes [1/3, 2]; input is not an even log-concave density");
  return ratio;
}

// ---------------------------------------------------------------------------
// Anti-invariance of the gap eigenfunction

AntiInvariantReport anti_invariant_eigenfunction_check(const Potential2D& phi,
                                                       const Grid2D& grid,
                                                       const std::vector<Matrix>& maps) {
  const Spectrum spec = neumann_gap(phi, grid, {.eigenfunction = true, .richardson = true});
  const Operator2D op = assemble_2d(phi, grid);
  const Index nx = grid.nx, ny = grid.ny;
  auto idx = [nx](Index i, Index j) { return i + nx * j; };

  AntiInvariantReport report;
  report.lambda1 = spec.lambda1;
  report.measured_cp = spec.poincare_constant;
  report.grid_tol = spec.richardson_error;

  const Vector& u = spec.eigenfunction;
  const double tol_norm = 1e-3;
  const double residual_budget = 5.0 * std::max(spec.richardson_error, 1e-9);

  for (std::size_t k = 0; k < maps.size(); ++k) {
    const Matrix& R = maps[k];
    if (R.rows() != 2 || R.cols() != 2)
      throw DomainError("anti_invariant_eigenfunction_check: maps must be 2x2");
    // Build the node permutation; every node must land on a node.
    std::vector<Index> perm(static_cast<std::size_t>(grid.size()));
    bool grid_ok = true;
    for (Index j = 0; j < ny && grid_ok; ++j)
      for (Index i = 0; i < nx && grid_ok; ++i) {
        const double qx = R(0, 0) * grid.xnode(i) + R(0, 1) * grid.ynode(j);
        const double qy = R(1, 0) * grid.xnode(i) + R(1, 1) * grid.ynode(j);
        const auto i2 = static_cast<Index>(std::llround((qx - grid.lox) / grid.hx()));
        const auto j2 = static_cast<Index>(std::llround((qy - grid.loy) / grid.hy()));
        if (i2 < 0 || i2 >= nx || j2 < 0 || j2 >= ny ||
            std::abs(grid.xnode(i2) - qx) > 1e-9 * (1.0 + std::abs(qx)) ||
            std::abs(grid.ynode(j2) - qy) > 1e-9 * (1.0 + std::abs(qy))) {
          grid_ok = false;
          break;
        }
        perm[static_cast<std::size_t>(idx(i, j))] = idx(i2, j2);
      }
    if (!grid_ok)
      throw DomainError("anti_invariant_eigenfunction_check: map does not preserve the grid");

    Vector diff(grid.size());
    for (Index p = 0; p < grid.size(); ++p) diff[p] = u[perm[static_cast<std::size_t>(p)]] - u[p];
    const double norm_mu = std::sqrt(diff.cwiseAbs2().dot(op.mass));
    if (norm_mu <= tol_norm) continue;

    // Residual of diff as a discrete eigenfunction, in the mu norm.
    const Vector diff_b = diff.cwiseProduct(op.mass.cwiseSqrt());
    const double res = (op.B * diff_b - spec.lambda1 * diff_b).norm() / diff_b.norm();
    if (res <= residual_budget && (!report.found || norm_mu > report.witness_norm)) {
      report.found = true;
      report.witness = static_cast<int>(k);
      report.witness_norm = norm_mu;
      report.witness_residual = res;
    }
  }

  // Slice-gap upper bound over the fixed lines of the reflection maps.
  double corollary = 0.0;
  for (const Matrix& R : maps) {
    const Matrix fix_proj = 0.5 * (R + Matrix::Identity(2, 2));
    if (std::abs(fix_proj.trace() - 1.0) > 1e-9) continue;  // not a reflection
    Eigen::SelfAdjointEigenSolver<Matrix> es(fix_proj);
    const Vector fix_dir = es.eigenvectors().col(1);   // eigenvalue 1
    const Vector slice_dir = es.eigenvectors().col(0);  // eigenvalue 0
    // Anchor range: the box projected onto the fixed line.
    const double reach =
        std::abs(fix_dir[0]) * std::max(std::abs(grid.lox), std::abs(grid.hix)) +
        std::abs(fix_dir[1]) * std::max(std::abs(grid.loy), std::abs(grid.hiy));
    const int anchors = 33;
    for (int a = 0; a < anchors; ++a) {
      const double s = -reach + 2.0 * reach * a / (anchors - 1);
      auto slice = [&](double t) {
        return phi(s * fix_dir[0] + t * slice_dir[0], s * fix_dir[1] + t * slice_dir[1]);
      };
      const Grid1D sg = auto_grid1d(slice, 513, 0.0, 1.0);
      const double cp =
          neumann_gap(slice, sg, {.eigenfunction = false, .richardson = false})
              .poincare_constant;
      corollary = std::max(corollary, cp);
    }
  }
  report.corollary_rhs = corollary;
  return report;
}

}  // namespace symvar::gap1d
