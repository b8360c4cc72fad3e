#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "symvar/types.hpp"

namespace symvar::symmetry {

// ---------------------------------------------------------------------------
// Errors

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Core types

enum class IsometryKind { Reflection, Rotation, General };

// An orthogonal map together with its classification. Construction validates
// orthogonality to 1e-9 (max-abs of R^T R - I).
struct Isometry {
  Matrix matrix;
  IsometryKind kind = IsometryKind::General;

  Index dim() const { return matrix.rows(); }
};

Isometry make_isometry(const Matrix& R);

// A linear subspace carried as an orthonormal basis (columns).
struct Subspace {
  Matrix basis;  // n x k, orthonormal columns; k may be zero

  Index ambient_dim() const { return basis.rows(); }
  Index dim() const { return basis.cols(); }
  Matrix projector() const { return basis * basis.transpose(); }
};

// Fixed subspace of an isometry and its orthogonal complement.
struct FixResult {
  Subspace fixed;
  Subspace complement;
};

FixResult fix_subspace(const Isometry& R);

// Hash-backed set of orthogonal matrices identified up to max-abs 1e-9.
// Two quantized keys (the second offset by half a bucket) make boundary
// misses doubly unlikely; candidates are always confirmed by tolerance
// comparison.
class MatrixIndex {
 public:
  explicit MatrixIndex(Index dim) : dim_(dim) {}

  // Returns the index of the stored matrix equal to M, or -1.
  int find(const Matrix& M) const;
  // Inserts M if absent; returns (index, inserted).
  std::pair<int, bool> insert(const Matrix& M);
  Index size() const { return static_cast<Index>(store_.size()); }
  const Matrix& at(int i) const { return store_[static_cast<std::size_t>(i)]; }

 private:
  std::uint64_t key(const Matrix& M, double offset) const;

  Index dim_;
  std::vector<Matrix> store_;
  std::unordered_map<std::uint64_t, std::vector<int>> buckets_[2];
};

// A finite group of isometries; elements[0] is the identity.
struct FiniteGroup {
  std::vector<Isometry> elements;
  MatrixIndex index;
  bool closed = true;

  explicit FiniteGroup(Index dim) : index(dim) {}
  Index order() const { return static_cast<Index>(elements.size()); }
  Index dim() const { return elements.empty() ? 0 : elements[0].dim(); }
  int find(const Matrix& M) const { return index.find(M); }
};

// Generators partitioned into conjugacy orbits, with one weight per orbit.
struct GeneratorSet {
  std::vector<Isometry> generators;
  std::vector<int> orbit_of;          // generator index -> orbit id
  std::vector<double> orbit_weight;   // orbit id -> d_i (empty until assigned)
  int num_orbits = 0;

  Index size() const { return static_cast<Index>(generators.size()); }
};

// sum_i c_i P_{E_i} = P_target with positive coefficients constant on orbits.
struct IdentityDecomposition {
  struct Term {
    double coefficient = 0.0;
    Subspace space;  // E_i = Fix(R_i)^perp
    int orbit = 0;
  };
  std::vector<Term> terms;
  Subspace target;
  double residual = 0.0;  // max-abs of sum c_i P_i - P_target

  Matrix weighted_sum() const;
};

// Spectral gap of the Cayley graph (uniform generator weights).
struct CayleyGap {
  double poincare_constant = 0.0;  // 1 / (2 lambda2)
  double lambda2 = 0.0;            // smallest nonzero Laplacian eigenvalue
  Vector eigenvector;              // achieving function on group elements
  double certificate_rel_err = 0.0;  // |Var - c * Dirichlet| / Var on it
};

// ---------------------------------------------------------------------------
// Operations

// Breadth-first closure of the generated group. Throws CapacityError if the
// order would exceed max_order (default: order of the largest built-in).
FiniteGroup enumerate_group(const std::vector<Isometry>& generators,
                            Index max_order = 10080);

// Closes the generator list under conjugation by the whole group and labels
// conjugacy orbits.
GeneratorSet conjugacy_close(const std::vector<Isometry>& generators,
                             const FiniteGroup& group);

// Per-orbit least-squares fit of sum c_i P_{E_i} = P_E where
// E = (intersection of the fixed subspaces)^perp. Coefficients are constant
// on orbits and must come out positive; the residual must clear 1e-8.
IdentityDecomposition identity_decomposition(const GeneratorSet& generators);

// The n(n-1)/2 transposition terms (2/n, span(e_i - e_j)) targeting the
// projector onto the complement of the diagonal line.
IdentityDecomposition exchangeable_decomposition(Index n);

// Best constant in the discrete Poincare inequality on the Cayley graph with
// uniform weights: 1/(2 lambda2) with lambda2 the smallest nonzero eigenvalue
// of m I - A (A = symmetrized adjacency with multiplicity, m = #generators).
CayleyGap cayley_spectral_gap(const FiniteGroup& group, const GeneratorSet& generators);

// max_i d_i / c_i over orbits; requires weights assigned and orbits matching.
double kappa(const IdentityDecomposition& dec, const GeneratorSet& generators);

// Discrete variance (uniform measure on elements) and Dirichlet form
// sum_g sum_i (f(g R_i) - f(g))^2 / |G| for a function given by element index.
double discrete_variance(const Vector& f);
double dirichlet_form(const FiniteGroup& group, const GeneratorSet& generators,
                      const Vector& f);

// ---------------------------------------------------------------------------
// Built-in families. Accepts "unconditional:n", "simplex:n", "dihedral:k",
// "dihedral-rotations:k", "schatten-rows:d", "exchangeable:n".
std::vector<Isometry> builtin_generators(const std::string& name);

// Vertices of the regular simplex in R^n (n+1 unit columns, pairwise dot -1/n).
Matrix simplex_vertices(Index n);

}  // namespace symvar::symmetry
