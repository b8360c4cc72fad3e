#pragma once

#include <functional>
#include <string>
#include <vector>

#include "symvar/symmetry.hpp"
#include "symvar/types.hpp"

namespace symvar::measures {

using symmetry::Isometry;
using symmetry::Subspace;
using symmetry::ValidationError;

// A one-dimensional site potential t -> V(t).  Derivative callables are null
// when the potential is not differentiable (e.g. "abs").
struct ScalarPotential {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
  bool convex = true;
};

// Catalog: quadratic, abs, quartic, double-well[:a], perturbed:eps.
ScalarPotential scalar_potential(const std::string& name);

// A probability measure model.  Smooth/Product/Spin carry a log-density
// potential in ambient coordinates; Body carries a membership oracle for the
// uniform measure on a convex body.  Spin lives on the affine hyperplane
// {sum x_i = n m}; its intrinsic frame is (spin_origin, spin_basis).
struct MeasureModel {
  enum class Kind { Smooth, Body, Product, Spin };

  Kind kind = Kind::Smooth;
  std::string name;
  Index ambient_dim = 0;
  Index intrinsic_dim = 0;

  std::function<double(const Vector&)> potential;  // Phi(x); unused for Body
  std::function<Vector(const Vector&)> gradient;   // null when unavailable
  std::function<Matrix(const Vector&)> hessian;    // null when unavailable
  double convexity_floor = 0.0;  // certified lower bound on Hessian eigenvalues

  std::function<bool(const Vector&)> member;       // Body only
  std::function<double(const Vector&)> support;    // Body only, closed form
  double bounding_radius = 0.0;                    // Body only

  std::vector<ScalarPotential> factors;  // per-coordinate, when is_product
  bool is_product = false;
  bool is_gaussian = false;  // standard or correlated gaussian
  Matrix gaussian_precision;  // set when is_gaussian

  Index spin_n = 0;
  double spin_m = 0.0;
  ScalarPotential spin_site;
  Matrix spin_basis;   // ambient x intrinsic, orthonormal columns spanning 1-perp
  Vector spin_origin;  // (m, ..., m)

  bool has_gradient() const { return static_cast<bool>(gradient); }
  bool has_hessian() const { return static_cast<bool>(hessian); }
};

// Parse a model descriptor.  Families:
//   gaussian:n            standard gaussian on R^n
//   corr-gaussian:n:rho   gaussian, covariance (1-rho)I + rho 11^T
//   cube:n                uniform on [-1,1]^n
//   simplex-body:n        uniform on the regular simplex, unit circumradius
//   lp-ball:n:p           uniform on the unit l_p ball
//   schatten-ball:d:p     uniform on the unit Schatten-p ball in R^{d*d}
//   product:n:V           product of n copies of catalog potential V
//   coupled:n:V:eps       sum V(x_i) + eps sum_{i<j} x_i x_j
//   spin:n:m:V            conditioned spin system on {sum x_i = n m}
//   radial-quartic:n      Phi = |x|^4/4 + |x|^2/2
//   dented-radial:n:beta  Phi = |x|^4/4 + |x|^2/2 + beta sum x_i^4/4
//   square-sym-2d         Phi = (x^4+y^4)/4 + (x^2+y^2)/2 + x^2 y^2/2
//   prod-gauss-quartic-2d Phi = x^2/2 + y^4
MeasureModel make_model(const std::string& descriptor);

// Descriptor of the largest builtin symmetry group the model is invariant
// under (used as the scenario default).
std::string default_group(const MeasureModel& model);

// Conditioned measure mu_{x,E}: the measure restricted to the slice x + E,
// parametrized as t -> anchor + basis t with anchor = P_{E-perp} x.
struct Conditioned {
  Index dim = 0;
  Vector anchor;
  Matrix basis;  // ambient x dim
  std::function<double(const Vector&)> psi;  // potential on the slice (non-Body)
  std::function<double(double)> psi1;        // dim == 1 convenience
  std::function<double(double, double)> psi2;  // dim == 2 convenience
  bool body = false;
  const MeasureModel* model = nullptr;  // for Body membership on the slice
};

Conditioned condition(const MeasureModel& model, const Vector& x, const Subspace& E);

// Chord of a convex body along anchor + t * dir, starting from an interior
// parameter t_inside; returns (t_lo, t_hi).  Throws if the start is outside.
std::pair<double, double> body_chord(const MeasureModel& model, const Vector& anchor,
                                     const Vector& dir, double t_inside);

// Max invariance defect of the model under R over deterministic probe points:
// |Phi(Rx) - Phi(x)| for density models, membership disagreement for bodies.
double invariance_defect(const MeasureModel& model, const Isometry& R, int probes = 64,
                         std::uint64_t seed = 7);

// Group-average symmetrization: potentials are averaged over the orbit,
// bodies are intersected.  Preserves convexity and log-concavity.
MeasureModel symmetrize(const MeasureModel& model, const symmetry::FiniteGroup& group);

// Group average of an observable: F(x) = avg_g f(gx), with chain-rule
// gradient avg_g g^T grad f(gx).  Idempotent; the result is group-invariant.
struct TestFunction;
TestFunction symmetrize(const TestFunction& f, const symmetry::FiniteGroup& group);

// Quadrature check of the centering identities of conditioned measures for a
// reflection R with E = Fix(R)-perp (dim 1) or a 2D slice for rotations:
//   mean_zero:  integral of (u o R - u) d mu_{x,E}  = 0
//   antisym:    integral of P_E grad g d mu_{x,E}   = 0 for R-invariant g
struct CenteringDefects {
  double mean_zero = 0.0;
  double antisym = 0.0;
};
CenteringDefects conditional_centering_defects(const MeasureModel& model, const Vector& x,
                                               const Isometry& R);

// Spin pair conditioning (sites i, j): the 1D potential of the conditioned
// pair measure in the direction (e_i - e_j)/sqrt(2), psi(t) = V(s + t/sqrt2)
// + V(s - t/sqrt2) with s = (x_i + x_j)/2.
ScalarPotential spin_pair_potential(const MeasureModel& model, const Vector& x, Index i,
                                    Index j);

// Lift intrinsic spin coordinates to the ambient hyperplane.
Vector spin_to_ambient(const MeasureModel& model, const Vector& intrinsic);

// Test observables f: R^n -> R with gradients.
// Catalog: norm2, sum, coord:i, hermite:k (k in 1..4, in x_0), spin-linear:i.
struct TestFunction {
  std::string name;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
};
TestFunction test_function(const std::string& name, Index dim);

}  // namespace symvar::measures
