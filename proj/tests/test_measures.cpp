// Measure models: calculus validation, conditioning, invariance,
// symmetrization, and the centered-conditional identities.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "symvar/measures.hpp"
#include "symvar/rng.hpp"
#include "symvar/sampling.hpp"
#include "symvar/symmetry.hpp"

using namespace symvar;
using namespace symvar::measures;
using symmetry::FiniteGroup;
using symmetry::Isometry;
using symmetry::Subspace;

namespace {

Subspace axis(Index n, Index i) {
  Subspace e;
  e.basis = Matrix::Zero(n, 1);
  e.basis(i, 0) = 1.0;
  return e;
}

Subspace span1(const Vector& dir) {
  Subspace e;
  e.basis = dir.normalized();
  return e;
}

double maxabs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("smooth models: hessian symmetry, FD gradient, convexity floor") {
  const std::vector<std::string> names = {
      "gaussian:3",          "corr-gaussian:3:0.3",
      "product:3:quartic",   "coupled:2:double-well:0.3:0.1",
      "radial-quartic:2",    "dented-radial:2:0.5",
      "square-sym-2d",       "prod-gauss-quartic-2d",
      "spin:3:0.5:quadratic"};
  Rng rng(11);
  for (const auto& name : names) {
    CAPTURE(name);
    const MeasureModel m = make_model(name);
    REQUIRE(m.potential);
    REQUIRE(m.has_gradient());
    REQUIRE(m.has_hessian());
    for (int probe = 0; probe < 8; ++probe) {
      Vector x = 0.8 * rng.gaussian_vector(m.ambient_dim);
      if (m.kind == MeasureModel::Kind::Spin) {
        // Probe points must live on the spin hyperplane.
        x = m.spin_origin + m.spin_basis * rng.gaussian_vector(m.intrinsic_dim);
      }
      const Matrix h = m.hessian(x);
      CHECK(maxabs(h - h.transpose()) <= tol::hessian_symmetry);
      // Smallest hessian eigenvalue respects the declared floor.
      Eigen::SelfAdjointEigenSolver<Matrix> es(h);
      CHECK(es.eigenvalues().minCoeff() >= m.convexity_floor - 1e-6);
      // Central differences of the potential reproduce the gradient.
      const Vector g = m.gradient(x);
      const double step = 1e-5 * (1.0 + x.norm());
      const double scale = std::max(1.0, g.norm());
      for (Index i = 0; i < m.ambient_dim; ++i) {
        Vector xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        const double fd = (m.potential(xp) - m.potential(xm)) / (2.0 * step);
        CHECK(std::abs(fd - g[i]) <= tol::gradient_fd * scale + 1e-9);
      }
    }
  }
}

TEST_CASE("conditioning a standard gaussian gives a standard gaussian slice") {
  const MeasureModel m = make_model("gaussian:3");
  Rng rng(5);
  const Vector x = rng.gaussian_vector(3);
  const Subspace e = span1(rng.sphere_direction(3));
  const Conditioned c = condition(m, x, e);
  REQUIRE(c.dim == 1);
  REQUIRE(c.psi1);
  // The slice potential is t^2/2 + const: second difference is exactly 1.
  for (double t : {0.3, 1.1, -2.0}) {
    const double second = c.psi1(t) + c.psi1(-t) - 2.0 * c.psi1(0.0);
    CHECK(second == doctest::Approx(t * t).epsilon(1e-10));
  }
}

TEST_CASE("correlated gaussian slice along e_i - e_j has gap 1 - rho") {
  // Covariance (1-rho)I + rho 11^T has precision Lambda with
  // u^T Lambda u = 1/(1-rho) for u = (e_0-e_1)/sqrt(2) (u is orthogonal to
  // the all-ones vector), so the conditional variance is 1-rho.
  const double rho = 0.3;
  const MeasureModel m = make_model("corr-gaussian:4:0.3");
  Vector dir = Vector::Zero(4);
  dir[0] = 1.0;
  dir[1] = -1.0;
  Rng rng(6);
  const Vector x = rng.gaussian_vector(4);
  const Conditioned c = condition(m, x, span1(dir));
  const double curvature = (c.psi1(1.0) + c.psi1(-1.0) - 2.0 * c.psi1(0.0));
  CHECK(curvature == doctest::Approx(1.0 / (1.0 - rho)).epsilon(1e-9));
  // Quadrature of the slice density confirms variance = 1 - rho.
  const auto mom = oracles::density_moments([&](double t) { return c.psi1(t); }, -9.0, 9.0);
  CHECK(mom.variance == doctest::Approx(1.0 - rho).epsilon(1e-6));
}

TEST_CASE("cube axis chord") {
  const MeasureModel m = make_model("cube:3");
  Vector x(3);
  x << 0.2, -0.5, 0.7;
  const Subspace e = axis(3, 0);
  const Conditioned c = condition(m, x, e);
  REQUIRE(c.body);
  // The anchor drops the sliced coordinate, so the chord is exactly [-1, 1].
  const auto [lo, hi] = body_chord(m, c.anchor, Vector(e.basis.col(0)), 0.0);
  CHECK(lo == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-9));
  // A start point outside the body is rejected.
  Vector outside = Vector::Zero(3);
  outside[1] = 5.0;
  CHECK_THROWS(body_chord(m, outside, Vector(e.basis.col(0)), 0.0));
}

TEST_CASE("conditioning depends on the anchor only through its E-perp part") {
  for (const auto& name : {"square-sym-2d", "radial-quartic:2", "gaussian:3"}) {
    CAPTURE(name);
    const MeasureModel m = make_model(name);
    Rng rng(9);
    const Vector x = 0.7 * rng.gaussian_vector(m.ambient_dim);
    const Subspace e = span1(rng.sphere_direction(m.ambient_dim));
    const Conditioned a = condition(m, x, e);
    // Shift the anchor inside E: the slice potential must not move.
    const Vector shifted = x + 1.37 * e.basis.col(0);
    const Conditioned b = condition(m, shifted, e);
    for (double t : {-1.7, 0.0, 0.4, 2.2})
      CHECK(std::abs(a.psi1(t) - b.psi1(t)) <= 1e-12);
  }
}

TEST_CASE("conditioning commutes with isometries of an invariant model") {
  // For R-invariant Phi: conditioning at Rx along R E (with basis R B)
  // produces the identical slice potential.
  const MeasureModel m = make_model("square-sym-2d");
  const auto gens = symmetry::builtin_generators("dihedral:4");
  Rng rng(13);
  for (const auto& r : gens) {
    const Vector x = 0.8 * rng.gaussian_vector(2);
    const Subspace e = span1(rng.sphere_direction(2));
    Subspace re;
    re.basis = r.matrix * e.basis;
    const Conditioned a = condition(m, x, e);
    const Conditioned b = condition(m, Vector(r.matrix * x), re);
    for (double t : {-1.2, 0.15, 0.9})
      CHECK(std::abs(a.psi1(t) - b.psi1(t)) <= 1e-9);
  }
}

TEST_CASE("spin models") {
  SUBCASE("pair potential matches the two-site closed form") {
    const MeasureModel m = make_model("spin:4:0.3:quartic");
    Rng rng(3);
    Vector x = m.spin_origin + m.spin_basis * rng.gaussian_vector(3);
    const ScalarPotential pair = spin_pair_potential(m, x, 1, 3);
    const auto v = scalar_potential("quartic");
    const double s = 0.5 * (x[1] + x[3]);
    for (double t : {-1.0, 0.2, 2.5}) {
      const double expected =
          v.value(s + t / std::sqrt(2.0)) + v.value(s - t / std::sqrt(2.0));
      CHECK(pair.value(t) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("quadratic site potential gives a standard gaussian intrinsically") {
    // sum (m + (Bt)_i)^2/2 = n m^2/2 + |t|^2/2 because B's columns are
    // orthonormal and orthogonal to the all-ones vector.
    const MeasureModel m = make_model("spin:5:0.7:quadratic");
    Rng rng(4);
    for (int probe = 0; probe < 4; ++probe) {
      const Vector t = rng.gaussian_vector(4);
      const Vector amb = m.spin_origin + m.spin_basis * t;
      const double expected = 5.0 * 0.49 / 2.0 + 0.5 * t.squaredNorm();
      CHECK(m.potential(amb) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("two sites with V = |t| condition to exp(-sqrt(2)|t|)") {
    const MeasureModel m = make_model("spin:2:0:abs");
    Subspace e;
    e.basis = m.spin_basis;
    const Conditioned c = condition(m, m.spin_origin, e);
    REQUIRE(c.dim == 1);
    for (double t : {-2.0, -0.3, 0.5, 1.7})
      CHECK(c.psi1(t) - c.psi1(0.0) ==
            doctest::Approx(std::sqrt(2.0) * std::abs(t)).epsilon(1e-12));
  }

  SUBCASE("conditioning must stay on the hyperplane") {
    const MeasureModel m = make_model("spin:3:0:quadratic");
    Vector off = m.spin_origin;
    off[0] += 1.0;  // leaves sum x_i = nm
    Subspace e;
    e.basis = m.spin_basis.col(0);
    CHECK_THROWS_AS(condition(m, off, e), ValidationError);
  }
}

TEST_CASE("invariance defects") {
  const MeasureModel g = make_model("gaussian:3");
  // Any isometry preserves the radial potential exactly.
  const auto swaps = symmetry::builtin_generators("exchangeable:3");
  CHECK(invariance_defect(g, swaps[0]) <= 1e-12);

  const MeasureModel cube = make_model("cube:2");
  const auto flips = symmetry::builtin_generators("unconditional:2");
  CHECK(invariance_defect(cube, flips[0]) == 0.0);

  // Rotating the square by pi/5 moves corners outside: membership mismatches.
  Matrix rot(2, 2);
  const double a = M_PI / 5.0;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  CHECK(invariance_defect(cube, symmetry::make_isometry(rot)) > 0.0);
}

TEST_CASE("fubini consistency through the conditioning plumbing") {
  // E[f] computed by iterating conditional 1D quadratures against the
  // x-marginal equals the direct 2D quadrature, within 1e-6 relative.
  const MeasureModel m = make_model("square-sym-2d");
  const auto f = [](double x, double y) { return x * x + std::sin(y); };
  const double box = 4.0;

  const auto phi = [&](double x, double y) {
    Vector p(2);
    p << x, y;
    return m.potential(p);
  };
  const double direct_mass = oracles::gauss_legendre(
      [&](double x) {
        return oracles::gauss_legendre(
            [&](double y) { return std::exp(-phi(x, y)); }, -box, box, 96);
      },
      -box, box, 96);
  const double direct_int = oracles::gauss_legendre(
      [&](double x) {
        return oracles::gauss_legendre(
            [&](double y) { return f(x, y) * std::exp(-phi(x, y)); }, -box, box, 96);
      },
      -box, box, 96);

  const Subspace e2 = axis(2, 1);
  const auto inner = [&](double x0) {
    Vector anchor(2);
    anchor << x0, 0.0;
    const Conditioned c = condition(m, anchor, e2);
    const double mass = oracles::gauss_legendre(
        [&](double y) { return std::exp(-c.psi1(y)); }, -box, box, 96);
    const double num = oracles::gauss_legendre(
        [&](double y) { return f(x0, y) * std::exp(-c.psi1(y)); }, -box, box, 96);
    return std::make_pair(num, mass);
  };
  // The slice potential equals Phi(x0, .) (no renormalization), so the
  // iterated integral reassembles the 2D one exactly.
  const double iter_int = oracles::gauss_legendre(
      [&](double x0) { return inner(x0).first; }, -box, box, 96);
  const double iter_mass = oracles::gauss_legendre(
      [&](double x0) { return inner(x0).second; }, -box, box, 96);

  const double direct = direct_int / direct_mass;
  const double iterated = iter_int / iter_mass;
  CHECK(std::abs(direct - iterated) <= 1e-6 * std::abs(direct));
}

TEST_CASE("model symmetrization: idempotent and invariant") {
  const MeasureModel m = make_model("prod-gauss-quartic-2d");
  const FiniteGroup group =
      symmetry::enumerate_group(symmetry::builtin_generators("dihedral:4"));
  const MeasureModel once = symmetrize(m, group);
  const MeasureModel twice = symmetrize(once, group);
  Rng rng(21);
  for (int probe = 0; probe < 16; ++probe) {
    const Vector x = rng.gaussian_vector(2);
    CHECK(std::abs(once.potential(x) - twice.potential(x)) <= 1e-12);
  }
  for (const auto& g : group.elements)
    CHECK(invariance_defect(once, g) <= tol::invariance);
}

TEST_CASE("function symmetrization") {
  SUBCASE("odd function against {+-Identity} averages to zero") {
    Matrix neg = -Matrix::Identity(3, 3);
    const FiniteGroup pm = symmetry::enumerate_group({symmetry::make_isometry(neg)});
    TestFunction f;
    f.name = "odd";
    f.value = [](const Vector& x) { return x[0] + x[1] * x[1] * x[1]; };
    f.grad = [](const Vector& x) {
      Vector g = Vector::Zero(3);
      g[0] = 1.0;
      g[1] = 3.0 * x[1] * x[1];
      return g;
    };
    const TestFunction avg = symmetrize(f, pm);
    Rng rng(31);
    for (int probe = 0; probe < 8; ++probe) {
      const Vector x = rng.gaussian_vector(3);
      CHECK(std::abs(avg.value(x)) <= 1e-14);
      CHECK(avg.grad(x).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }

  SUBCASE("an invariant function is a fixed point") {
    const FiniteGroup group =
        symmetry::enumerate_group(symmetry::builtin_generators("dihedral:4"));
    const TestFunction f = test_function("norm2", 2);
    const TestFunction avg = symmetrize(f, group);
    Rng rng(32);
    for (int probe = 0; probe < 8; ++probe) {
      const Vector x = rng.gaussian_vector(2);
      CHECK(avg.value(x) == doctest::Approx(f.value(x)).epsilon(1e-12));
    }
  }

  SUBCASE("x1 against the exchangeable group averages to the mean") {
    const FiniteGroup group =
        symmetry::enumerate_group(symmetry::builtin_generators("exchangeable:3"));
    REQUIRE(group.order() == 6);
    const TestFunction f = test_function("coord:0", 3);
    const TestFunction avg = symmetrize(f, group);
    Rng rng(33);
    for (int probe = 0; probe < 8; ++probe) {
      const Vector x = rng.gaussian_vector(3);
      CHECK(avg.value(x) == doctest::Approx(x.mean()).epsilon(1e-12));
      const Vector g = avg.grad(x);
      for (Index i = 0; i < 3; ++i)
        CHECK(g[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("test function catalog: values and FD gradients") {
  Rng rng(41);
  const Index n = 4;
  for (const auto& name :
       {"norm2", "sum", "coord:2", "hermite:1", "hermite:2", "hermite:3",
        "hermite:4", "spin-linear:1"}) {
    CAPTURE(name);
    const TestFunction f = test_function(name, n);
    for (int probe = 0; probe < 6; ++probe) {
      const Vector x = rng.gaussian_vector(n);
      const Vector g = f.grad(x);
      const double step = 1e-6 * (1.0 + x.norm());
      for (Index i = 0; i < n; ++i) {
        Vector xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        const double fd = (f.value(xp) - f.value(xm)) / (2.0 * step);
        CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(1.0, std::abs(g[i])) + 1e-7);
      }
    }
  }
  // Hermite values in the first coordinate: t^2 - 1 and t^3 - 3t.
  Vector x = Vector::Zero(n);
  x[0] = 1.5;
  CHECK(test_function("hermite:2", n).value(x) == doctest::Approx(1.25));
  CHECK(test_function("hermite:3", n).value(x) ==
        doctest::Approx(1.5 * 1.5 * 1.5 - 4.5));
  CHECK_THROWS_AS(test_function("hermite:5", n), ValidationError);
  CHECK_THROWS_AS(test_function("nope", n), ValidationError);
}

TEST_CASE("quadratic forms built from a decomposition are equivariant") {
  // Q_x = sum_i c_i (1 + |P_i x|^2) P_i satisfies Q_{gx}(gu) = Q_x(u): g
  // permutes the subspaces within orbits and |P_{gE}(gx)| = |P_E x|.
  const auto raw = symmetry::builtin_generators("dihedral:4");
  const FiniteGroup group = symmetry::enumerate_group(raw);
  const auto gens = symmetry::conjugacy_close(raw, group);
  const auto dec = symmetry::identity_decomposition(gens);
  std::vector<Matrix> projectors;
  for (const auto& term : dec.terms) projectors.push_back(term.space.projector());

  const auto q = [&](const Vector& x, const Vector& u) {
    double total = 0.0;
    for (std::size_t i = 0; i < projectors.size(); ++i) {
      const double cx =
          dec.terms[i].coefficient * (1.0 + (projectors[i] * x).squaredNorm());
      total += cx * (projectors[i] * u).squaredNorm();
    }
    return total;
  };
  Rng rng(51);
  for (const auto& g : group.elements) {
    const Vector x = rng.gaussian_vector(2), u = rng.gaussian_vector(2);
    CHECK(q(x, u) ==
          doctest::Approx(q(g.matrix * x, g.matrix * u)).epsilon(1e-9));
  }
}

TEST_CASE("averaging contracts decomposition-built quadratic energies") {
  // E[Q(grad F)] <= E[Q(grad f)] for F the group average of f, tested by
  // Monte-Carlo at 3 sigma on a gaussian with the exchangeable group.
  const MeasureModel m = make_model("gaussian:3");
  const FiniteGroup group =
      symmetry::enumerate_group(symmetry::builtin_generators("exchangeable:3"));
  const auto dec = symmetry::exchangeable_decomposition(3);
  std::vector<Matrix> projectors;
  for (const auto& term : dec.terms) projectors.push_back(term.space.projector());

  TestFunction f;
  f.name = "probe";
  f.value = [](const Vector& x) { return x[0] * x[0] * x[0] / 3.0 + std::sin(x[1]); };
  f.grad = [](const Vector& x) {
    Vector g = Vector::Zero(3);
    g[0] = x[0] * x[0];
    g[1] = std::cos(x[1]);
    return g;
  };
  const TestFunction favg = symmetrize(f, group);

  sampling::SamplerConfig cfg;
  cfg.seed = 101;
  cfg.samples = 8192;
  const auto batch = sampling::sample_model(m, cfg);
  const auto q = [&](const Vector& x, const Vector& u) {
    double total = 0.0;
    for (std::size_t i = 0; i < projectors.size(); ++i)
      total += dec.terms[i].coefficient * (1.0 + (projectors[i] * x).squaredNorm()) *
               (projectors[i] * u).squaredNorm();
    return total;
  };
  Vector diff(batch.samples.rows());
  for (Index r = 0; r < batch.samples.rows(); ++r) {
    const Vector x = batch.samples.row(r).transpose();
    diff[r] = q(x, f.grad(x)) - q(x, favg.grad(x));
  }
  const auto d = sampling::mean_estimate(diff);
  CHECK(d.value >= -3.0 * d.error);
}

TEST_CASE("centered-conditional identities by quadrature") {
  // Reflections: int (u o R - u) d mu_{x,E} = 0 and int P_E grad g d mu_{x,E}
  // = 0 for R-invariant g, on 1D slices (reflections) and the 2D slice of a
  // quarter-turn rotation.
  Rng rng(61);
  SUBCASE("reflection slices of 2D invariant models") {
    for (const auto& name : {"gaussian:2", "square-sym-2d", "radial-quartic:2"}) {
      CAPTURE(name);
      const MeasureModel m = make_model(name);
      for (const auto& r : symmetry::builtin_generators("dihedral:4")) {
        const Vector x = 0.6 * rng.gaussian_vector(2);
        const CenteringDefects d = conditional_centering_defects(m, x, r);
        CHECK(d.mean_zero <= tol::conditional_defect);
        CHECK(d.antisym <= tol::conditional_defect);
      }
    }
  }
  SUBCASE("rotation slice is the whole plane") {
    const MeasureModel m = make_model("square-sym-2d");
    const auto rots = symmetry::builtin_generators("dihedral-rotations:4");
    const CenteringDefects d =
        conditional_centering_defects(m, Vector(0.4 * rng.gaussian_vector(2)), rots[0]);
    CHECK(d.mean_zero <= tol::conditional_defect);
    CHECK(d.antisym <= tol::conditional_defect);
  }
}

TEST_CASE("centered-conditional identities by Monte-Carlo") {
  // Integrated over mu the identities read E[u(Rx) - u(x)] = 0 and
  // E[P_E grad g(x)] = 0; both testable at 3 sigma from samples.
  for (const auto& name : {"gaussian:4", "product:3:quartic"}) {
    CAPTURE(name);
    const MeasureModel m = make_model(name);
    const auto gens = symmetry::builtin_generators(
        "unconditional:" + std::to_string(m.ambient_dim));
    const Isometry& r = gens[0];
    const auto fx = symmetry::fix_subspace(r);

    sampling::SamplerConfig cfg;
    cfg.seed = 77;
    cfg.samples = 16384;
    const auto batch = sampling::sample_model(m, cfg);

    const auto u = [](const Vector& y) {
      double v = 0.0;
      for (Index i = 0; i < y.size(); ++i)
        v += std::sin(y[i] + 0.1 * static_cast<double>(i));
      return v;
    };
    Vector du(batch.samples.rows());
    for (Index row = 0; row < batch.samples.rows(); ++row) {
      const Vector x = batch.samples.row(row).transpose();
      du[row] = u(r.matrix * x) - u(x);
    }
    const auto mean_u = sampling::mean_estimate(du);
    CHECK(std::abs(mean_u.value) <= 3.0 * mean_u.error);

    // g = |x|^2 is invariant; P_E grad g = 2 P_E x has mean zero.
    Vector pg(batch.samples.rows());
    const Matrix pe = fx.complement.projector();
    for (Index row = 0; row < batch.samples.rows(); ++row) {
      const Vector x = batch.samples.row(row).transpose();
      pg[row] = (pe * (2.0 * x))[0];
    }
    const auto mean_g = sampling::mean_estimate(pg);
    CHECK(std::abs(mean_g.value) <= 3.0 * mean_g.error);
  }
}

TEST_CASE("default groups and model validation") {
  CHECK(default_group(make_model("gaussian:3")) == "unconditional:3");
  CHECK(default_group(make_model("square-sym-2d")) == "dihedral:4");
  CHECK(default_group(make_model("spin:4:0:quadratic")) == "exchangeable:4");
  CHECK_THROWS_AS(make_model("no-such-model:3"), ValidationError);
  CHECK_THROWS_AS(make_model("spin:1:0:quadratic"), ValidationError);
  CHECK_THROWS_AS(scalar_potential("bogus"), ValidationError);
}

TEST_CASE("scalar potential catalog shapes") {
  const auto quad = scalar_potential("quadratic");
  CHECK(quad.value(2.0) == doctest::Approx(2.0));
  CHECK(quad.convex);
  const auto abs = scalar_potential("abs");
  CHECK(abs.value(-3.0) == doctest::Approx(3.0));
  CHECK(abs.convex);
  CHECK_FALSE(static_cast<bool>(abs.d1));  // not differentiable at the corner
  const auto dw = scalar_potential("double-well:0.5");
  CHECK(dw.value(0.5) == doctest::Approx(0.0));
  CHECK(dw.value(0.0) == doctest::Approx(0.0625));
  CHECK_FALSE(dw.convex);
  const auto quart = scalar_potential("quartic");
  CHECK(quart.value(2.0) == doctest::Approx(16.0));
}
