// Group construction, fixed subspaces, identity decompositions, Cayley gaps.
//
// Expected constants are closed forms derived in comments at the point of
// use; nothing here depends on the library's own numerics except the value
// under test.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "symvar/rng.hpp"
#include "symvar/symmetry.hpp"

using namespace symvar;
using namespace symvar::symmetry;

namespace {

struct Built {
  FiniteGroup group;
  GeneratorSet gens;
  IdentityDecomposition dec;
  CayleyGap gap;
};

Built build(const std::string& name) {
  const auto raw = builtin_generators(name);
  Built b{enumerate_group(raw), {}, {}, {}};
  b.gens = conjugacy_close(raw, b.group);
  b.dec = identity_decomposition(b.gens);
  b.gap = cayley_spectral_gap(b.group, b.gens);
  return b;
}

double maxabs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("isometry validation and classification") {
  Matrix bad(2, 2);
  bad << 1.0, 0.5, 0.0, 1.0;  // shear: not orthogonal
  CHECK_THROWS_AS(make_isometry(bad), ValidationError);

  Matrix flip = Matrix::Identity(3, 3);
  flip(0, 0) = -1.0;
  const Isometry r = make_isometry(flip);
  CHECK(r.kind == IsometryKind::Reflection);

  Matrix rot(2, 2);
  const double c = std::cos(0.7), s = std::sin(0.7);
  rot << c, -s, s, c;
  CHECK(make_isometry(rot).kind == IsometryKind::Rotation);
}

TEST_CASE("matrix index dedup at 1e-9") {
  MatrixIndex idx(2);
  const Matrix id = Matrix::Identity(2, 2);
  CHECK(idx.insert(id).second);
  // Within the dedup tolerance: identified with the stored element.
  Matrix near = id;
  near(0, 1) += 5e-10;
  CHECK(idx.find(near) == 0);
  // Clearly distinct matrices get their own slot.
  Matrix far = id;
  far(0, 1) += 1e-6;
  CHECK(idx.find(far) == -1);
}

TEST_CASE("group closure, identity first, inverses present (order <= 200)") {
  const std::vector<std::string> names = {
      "unconditional:2", "unconditional:4",      "unconditional:7",
      "simplex:2",       "simplex:3",            "simplex:4",
      "dihedral:3",      "dihedral:4",           "dihedral:12",
      "dihedral-rotations:5", "dihedral-rotations:12",
      "exchangeable:3",  "exchangeable:4",       "schatten-rows:2",
      "schatten-rows:3"};
  for (const auto& name : names) {
    CAPTURE(name);
    const auto raw = builtin_generators(name);
    const FiniteGroup g = enumerate_group(raw);
    REQUIRE(g.order() <= 200);
    const Index n = g.dim();
    CHECK(maxabs(g.elements[0].matrix - Matrix::Identity(n, n)) < 1e-12);
    for (const auto& a : g.elements) {
      // Orthogonal inverse is the transpose.
      CHECK(g.find(Matrix(a.matrix.transpose())) >= 0);
      for (const auto& b : g.elements) {
        CHECK(g.find(Matrix(a.matrix * b.matrix)) >= 0);
      }
    }
  }
}

TEST_CASE("expected group orders") {
  // |{-1,1}^n| = 2^n; |S_{n+1}| = (n+1)!; |D_k| = 2k; |C_k| = k; |S_n| = n!.
  CHECK(build("unconditional:4").group.order() == 16);
  CHECK(build("simplex:3").group.order() == 24);
  CHECK(build("dihedral:6").group.order() == 12);
  CHECK(build("dihedral-rotations:6").group.order() == 6);
  CHECK(build("exchangeable:4").group.order() == 24);
  CHECK(build("schatten-rows:2").group.order() == 4);
}

TEST_CASE("enumerate_group capacity guard") {
  // unconditional:8 generates 2^8 = 256 elements > the cap we pass.
  CHECK_THROWS_AS(enumerate_group(builtin_generators("unconditional:8"), 100),
                  CapacityError);
}

TEST_CASE("fix_subspace projector identities") {
  for (const auto& name : {"unconditional:3", "simplex:3", "dihedral:5",
                           "dihedral-rotations:4", "exchangeable:4"}) {
    CAPTURE(name);
    for (const auto& r : builtin_generators(name)) {
      const FixResult fx = fix_subspace(r);
      const Index n = r.dim();
      const Matrix pf = fx.fixed.projector();
      const Matrix pc = fx.complement.projector();
      CHECK(maxabs(pf + pc - Matrix::Identity(n, n)) < 1e-9);
      CHECK(maxabs(r.matrix * pf - pf) < 1e-9);
      CHECK(fx.fixed.dim() + fx.complement.dim() == n);
      if (r.kind == IsometryKind::Reflection) CHECK(fx.complement.dim() == 1);
      if (r.kind == IsometryKind::Rotation) {
        // A nontrivial 2D rotation fixes only the origin.
        CHECK(fx.fixed.dim() == 0);
        CHECK(fx.complement.dim() == 2);
      }
    }
  }
}

TEST_CASE("identity decompositions: residual, trace, frozen coefficients") {
  struct Case {
    const char* name;
    double coeff;    // expected c_i (same on every orbit for these families)
    Index dim;       // expected dim E_i
    Index terms;     // expected number of terms
    Index target;    // expected dim of the target space
  };
  // c_i closed forms: sign flips give disjoint axes (c = 1); the k lines of
  // the regular k-gon satisfy sum P = (k/2) I (c = 2/k); simplex reflections
  // are S_{n+1} transpositions acting irreducibly (c = 2/(n+1)); nontrivial
  // rotations all have E = R^2, so (k-1) c = 1; coordinate transpositions in
  // R^n give sum P_{ij} = (n/2)(I - P_diag) (c = 2/n); row flips give
  // disjoint row blocks (c = 1).
  const std::vector<Case> cases = {
      {"unconditional:4", 1.0, 1, 4, 4},
      {"dihedral:4", 2.0 / 4.0, 1, 4, 2},
      {"dihedral:5", 2.0 / 5.0, 1, 5, 2},
      {"simplex:3", 2.0 / 4.0, 1, 6, 3},
      {"dihedral-rotations:4", 1.0 / 3.0, 2, 3, 2},
      {"exchangeable:4", 2.0 / 4.0, 1, 6, 3},
      {"schatten-rows:2", 1.0, 2, 2, 4},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const Built b = build(c.name);
    CHECK(b.dec.residual <= tol::decomposition);
    CHECK(static_cast<Index>(b.dec.terms.size()) == c.terms);
    CHECK(b.dec.target.dim() == c.target);
    double trace = 0.0;
    for (const auto& term : b.dec.terms) {
      CHECK(term.coefficient == doctest::Approx(c.coeff).epsilon(1e-9));
      CHECK(term.space.dim() == c.dim);
      CHECK(term.coefficient > 0.0);
      trace += term.coefficient * static_cast<double>(term.space.dim());
    }
    CHECK(std::abs(trace - static_cast<double>(b.dec.target.dim())) <=
          tol::trace_identity);
    // The weighted sum reproduces the target projector entrywise.
    CHECK(maxabs(b.dec.weighted_sum() - b.dec.target.projector()) <=
          tol::decomposition);
    // Coefficients are constant on conjugacy orbits.
    std::vector<double> orbit_coeff(static_cast<std::size_t>(b.gens.num_orbits), -1.0);
    for (const auto& term : b.dec.terms) {
      auto& slot = orbit_coeff[static_cast<std::size_t>(term.orbit)];
      if (slot < 0.0)
        slot = term.coefficient;
      else
        CHECK(term.coefficient == doctest::Approx(slot).epsilon(1e-12));
    }
  }
}

TEST_CASE("exchangeable decomposition closed form") {
  const IdentityDecomposition dec = exchangeable_decomposition(5);
  CHECK(dec.terms.size() == 10);  // n(n-1)/2 pairs
  CHECK(dec.target.dim() == 4);   // complement of the diagonal line
  CHECK(dec.residual <= tol::decomposition);
  for (const auto& term : dec.terms)
    CHECK(term.coefficient == doctest::Approx(2.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("cayley gaps: frozen closed forms") {
  // Hypercube graph on {-1,1}^n: lambda2 = 2, so c_P = 1/(2*2) = 1/4.
  CHECK(build("unconditional:3").gap.poincare_constant ==
        doctest::Approx(0.25).epsilon(1e-10));
  // S_{n+1} with all transpositions: c_P = 1/(2(n+1)).
  CHECK(build("simplex:3").gap.poincare_constant ==
        doctest::Approx(1.0 / 8.0).epsilon(1e-10));
  CHECK(build("exchangeable:3").gap.poincare_constant ==
        doctest::Approx(1.0 / 6.0).epsilon(1e-10));
  // Dihedral reflections: complete bipartite structure gives 1/(2k).
  CHECK(build("dihedral:4").gap.poincare_constant ==
        doctest::Approx(1.0 / 8.0).epsilon(1e-10));
  // All k-1 rotations: complete graph K_k, lambda2 = k, c_P = 1/(2k).
  CHECK(build("dihedral-rotations:4").gap.poincare_constant ==
        doctest::Approx(1.0 / 8.0).epsilon(1e-10));
  CHECK(build("schatten-rows:2").gap.poincare_constant ==
        doctest::Approx(0.25).epsilon(1e-10));
}

TEST_CASE("cayley certificate: 1000 random functions and the eigenvector") {
  Rng rng(20260822);
  for (const auto& name :
       {"unconditional:3", "dihedral:4", "simplex:3", "dihedral-rotations:5",
        "exchangeable:3"}) {
    CAPTURE(name);
    const Built b = build(name);
    CHECK(b.gap.certificate_rel_err <= tol::gap_certificate);

    // The returned eigenvector achieves Var = c_P * Dirichlet.
    const double var_v = discrete_variance(b.gap.eigenvector);
    const double dir_v = dirichlet_form(b.group, b.gens, b.gap.eigenvector);
    REQUIRE(var_v > 0.0);
    CHECK(std::abs(var_v - b.gap.poincare_constant * dir_v) <= 1e-8 * var_v);

    for (int trial = 0; trial < 1000; ++trial) {
      Vector f(b.group.order());
      for (Index i = 0; i < f.size(); ++i) f[i] = rng.uniform(-1.0, 1.0);
      const double var = discrete_variance(f);
      const double dir = dirichlet_form(b.group, b.gens, f);
      CHECK(var <= b.gap.poincare_constant * dir + 1e-10);
    }
  }
}

TEST_CASE("group elements permute the decomposition subspaces") {
  for (const auto& name : {"dihedral:4", "simplex:3", "unconditional:3",
                           "dihedral-rotations:4"}) {
    CAPTURE(name);
    const Built b = build(name);
    std::vector<Matrix> projectors;
    projectors.reserve(b.dec.terms.size());
    for (const auto& term : b.dec.terms) projectors.push_back(term.space.projector());
    for (const auto& g : b.group.elements) {
      std::set<std::size_t> used;
      for (const auto& p : projectors) {
        const Matrix moved = g.matrix * p * g.matrix.transpose();
        bool matched = false;
        for (std::size_t j = 0; j < projectors.size(); ++j) {
          if (used.count(j)) continue;
          if (maxabs(moved - projectors[j]) < 1e-8) {
            used.insert(j);
            matched = true;
            break;
          }
        }
        CHECK(matched);
      }
      CHECK(used.size() == projectors.size());
    }
  }
}

TEST_CASE("kappa: frozen ratios and validation") {
  // kappa = max_i d_i / c_i with d_i the per-orbit weights.
  auto kappa_with_gap = [](Built& b) {
    b.gens.orbit_weight.assign(static_cast<std::size_t>(b.gens.num_orbits),
                               b.gap.poincare_constant);
    return kappa(b.dec, b.gens);
  };
  Built unc = build("unconditional:4");
  CHECK(kappa_with_gap(unc) == doctest::Approx(0.25).epsilon(1e-9));  // (1/4)/1
  Built simp = build("simplex:3");
  CHECK(kappa_with_gap(simp) == doctest::Approx(0.25).epsilon(1e-9));  // (1/8)/(1/2)
  Built exch = build("exchangeable:3");
  CHECK(kappa_with_gap(exch) == doctest::Approx(0.25).epsilon(1e-9));  // (1/6)/(2/3)
  Built rots = build("dihedral-rotations:4");
  CHECK(kappa_with_gap(rots) == doctest::Approx(0.375).epsilon(1e-9));  // (1/8)/(1/3)

  // Single orbit with d = c gives exactly 1.
  Built dih3 = build("dihedral:3");
  REQUIRE(dih3.gens.num_orbits == 1);
  dih3.gens.orbit_weight.assign(1, dih3.dec.terms[0].coefficient);
  CHECK(kappa(dih3.dec, dih3.gens) == doctest::Approx(1.0).epsilon(1e-12));

  // Weights must be assigned before use.
  Built bare = build("unconditional:3");
  CHECK_THROWS_AS(kappa(bare.dec, bare.gens), ValidationError);
}

TEST_CASE("permutation generators preserve coordinate multisets") {
  // Exchangeable generators are permutation matrices: applying one to a
  // vector reorders its entries.
  Rng rng(7);
  for (const auto& r : builtin_generators("exchangeable:4")) {
    const Vector x = rng.gaussian_vector(4);
    Vector y = r.matrix * x;
    std::vector<double> xs(x.data(), x.data() + 4), ys(y.data(), y.data() + 4);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    for (int i = 0; i < 4; ++i) CHECK(xs[i] == doctest::Approx(ys[i]).epsilon(1e-12));
  }
}

TEST_CASE("simplex vertices: unit norm, pairwise dot -1/n") {
  for (Index n : {3, 5}) {
    const Matrix v = simplex_vertices(n);
    REQUIRE(v.cols() == n + 1);
    for (Index i = 0; i <= n; ++i) {
      CHECK(v.col(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
      for (Index j = i + 1; j <= n; ++j)
        CHECK(v.col(i).dot(v.col(j)) ==
              doctest::Approx(-1.0 / static_cast<double>(n)).epsilon(1e-10));
    }
  }
}
