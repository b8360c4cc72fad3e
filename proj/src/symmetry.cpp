#include "symvar/symmetry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <deque>
#include <numeric>

#include "symvar/rng.hpp"

namespace symvar::symmetry {

namespace {

constexpr double kBucket = 1e-6;  // quantization for the matrix hash

bool matrices_equal(const Matrix& A, const Matrix& B) {
  return (A - B).cwiseAbs().maxCoeff() <= tol::dedup;
}

}  // namespace

// ---------------------------------------------------------------------------
// Isometry

Isometry make_isometry(const Matrix& R) {
  if (R.rows() != R.cols() || R.rows() == 0)
    throw ValidationError("isometry: matrix must be square and nonempty");
  const Index n = R.rows();
  const double defect = (R.transpose() * R - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
  if (defect > tol::orthogonality)
    throw ValidationError("isometry: R^T R deviates from identity by " + std::to_string(defect));

  Isometry iso;
  iso.matrix = R;

  // Classify by fixed-space codimension and determinant.
  Eigen::JacobiSVD<Matrix> svd(R - Matrix::Identity(n, n));
  Index fix_dim = 0;
  for (Index i = 0; i < n; ++i)
    if (svd.singularValues()[i] < tol::rank) ++fix_dim;
  const double det = R.determinant();
  const Index codim = n - fix_dim;
  if (codim == 1 && det < 0)
    iso.kind = IsometryKind::Reflection;
  else if (codim == 2 && det > 0)
    iso.kind = IsometryKind::Rotation;
  else
    iso.kind = IsometryKind::General;
  return iso;
}

FixResult fix_subspace(const Isometry& R) {
  const Index n = R.dim();
  Eigen::JacobiSVD<Matrix> svd(R.matrix - Matrix::Identity(n, n), Eigen::ComputeFullV);
  Index rank = 0;
  for (Index i = 0; i < n; ++i)
    if (svd.singularValues()[i] >= tol::rank) ++rank;
  FixResult out;
  out.complement.basis = svd.matrixV().leftCols(rank);
  out.fixed.basis = svd.matrixV().rightCols(n - rank);
  return out;
}

// ---------------------------------------------------------------------------
// MatrixIndex

std::uint64_t MatrixIndex::key(const Matrix& M, double offset) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (Index j = 0; j < M.cols(); ++j)
    for (Index i = 0; i < M.rows(); ++i) {
      const auto q = static_cast<std::int64_t>(std::llround(M(i, j) / kBucket + offset));
      h ^= static_cast<std::uint64_t>(q) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
  return h;
}

int MatrixIndex::find(const Matrix& M) const {
  for (int which = 0; which < 2; ++which) {
    const auto it = buckets_[which].find(key(M, which * 0.5));
    if (it == buckets_[which].end()) continue;
    for (int idx : it->second)
      if (matrices_equal(store_[static_cast<std::size_t>(idx)], M)) return idx;
  }
  return -1;
}

std::pair<int, bool> MatrixIndex::insert(const Matrix& M) {
  const int existing = find(M);
  if (existing >= 0) return {existing, false};
  const int idx = static_cast<int>(store_.size());
  store_.push_back(M);
  for (int which = 0; which < 2; ++which)
    buckets_[which][key(M, which * 0.5)].push_back(idx);
  return {idx, true};
}

// ---------------------------------------------------------------------------
// Group enumeration

FiniteGroup enumerate_group(const std::vector<Isometry>& generators, Index max_order) {
  if (generators.empty()) throw ValidationError("enumerate_group: no generators");
  const Index n = generators[0].dim();
  for (const auto& g : generators)
    if (g.dim() != n) throw ValidationError("enumerate_group: mixed dimensions");

  FiniteGroup group(n);
  group.index.insert(Matrix::Identity(n, n));
  group.elements.push_back(make_isometry(Matrix::Identity(n, n)));

  std::deque<int> worklist{0};
  while (!worklist.empty()) {
    const int gi = worklist.front();
    worklist.pop_front();
    const Matrix g = group.elements[static_cast<std::size_t>(gi)].matrix;
    for (const auto& r : generators) {
      const Matrix product = g * r.matrix;
      auto [idx, inserted] = group.index.insert(product);
      if (!inserted) continue;
      if (group.index.size() > max_order)
        throw CapacityError("enumerate_group: order exceeds " + std::to_string(max_order));
      group.elements.push_back(make_isometry(product));
      worklist.push_back(idx);
    }
  }
  group.closed = true;
  return group;
}

// ---------------------------------------------------------------------------
// Conjugacy closure

GeneratorSet conjugacy_close(const std::vector<Isometry>& generators,
                             const FiniteGroup& group) {
  if (generators.empty()) throw ValidationError("conjugacy_close: no generators");
  const Index n = generators[0].dim();

  GeneratorSet out;
  MatrixIndex seen(n);
  std::vector<int> orbit_of;

  for (const auto& seed : generators) {
    if (group.find(seed.matrix) < 0)
      throw ValidationError("conjugacy_close: generator not in group");
    auto [seed_idx, fresh] = seen.insert(seed.matrix);
    if (!fresh) continue;  // already reached from an earlier orbit
    const int orbit = out.num_orbits++;
    out.generators.push_back(seed);
    orbit_of.push_back(orbit);
    // The conjugacy orbit of `seed` under the full group.
    for (const auto& g : group.elements) {
      const Matrix conj = g.matrix * seed.matrix * g.matrix.transpose();
      auto [idx, inserted] = seen.insert(conj);
      (void)idx;
      if (inserted) {
        out.generators.push_back(make_isometry(conj));
        orbit_of.push_back(orbit);
      }
    }
  }
  out.orbit_of = orbit_of;
  return out;
}

// ---------------------------------------------------------------------------
// Identity decompositions

Matrix IdentityDecomposition::weighted_sum() const {
  if (terms.empty()) return Matrix::Zero(target.ambient_dim(), target.ambient_dim());
  const Index n = terms[0].space.ambient_dim();
  Matrix sum = Matrix::Zero(n, n);
  for (const auto& t : terms) sum += t.coefficient * t.space.projector();
  return sum;
}

IdentityDecomposition identity_decomposition(const GeneratorSet& generators) {
  if (generators.size() == 0)
    throw ValidationError("identity_decomposition: empty generator set");
  const Index n = generators.generators[0].dim();

  IdentityDecomposition dec;
  std::vector<Matrix> orbit_sums(static_cast<std::size_t>(generators.num_orbits),
                                 Matrix::Zero(n, n));

  // Collect E_i = Fix(R_i)^perp and the common fixed subspace.
  Matrix all_complements(n, 0);
  for (Index i = 0; i < generators.size(); ++i) {
    const auto& r = generators.generators[static_cast<std::size_t>(i)];
    FixResult fix = fix_subspace(r);
    const Index codim = fix.complement.dim();
    if (r.kind == IsometryKind::Reflection) {
      if (codim != 1)
        throw ValidationError("identity_decomposition: reflection with codim != 1");
    } else if (codim != 2) {
      throw ValidationError(
          "identity_decomposition: generator must be a reflection or have a "
          "2-dimensional complement");
    }
    IdentityDecomposition::Term term;
    term.space = fix.complement;
    term.orbit = generators.orbit_of[static_cast<std::size_t>(i)];
    dec.terms.push_back(term);
    orbit_sums[static_cast<std::size_t>(term.orbit)] += term.space.projector();
    all_complements.conservativeResize(n, all_complements.cols() + codim);
    all_complements.rightCols(codim) = fix.complement.basis;
  }

  // Target: E = span of all complements = (intersection of fixed spaces)^perp.
  Eigen::JacobiSVD<Matrix> svd(all_complements, Eigen::ComputeFullU);
  Index target_dim = 0;
  for (Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] >= tol::rank) ++target_dim;
  dec.target.basis = svd.matrixU().leftCols(target_dim);
  const Matrix target_projector = dec.target.projector();

  // Least squares over per-orbit coefficients (minimum-norm when rank
  // deficient, which symmetrizes coefficients across equivalent orbits).
  Matrix system(n * n, generators.num_orbits);
  for (int o = 0; o < generators.num_orbits; ++o)
    system.col(o) = Eigen::Map<const Vector>(orbit_sums[static_cast<std::size_t>(o)].data(), n * n);
  const Vector rhs = Eigen::Map<const Vector>(target_projector.data(), n * n);
  const Vector coeffs =
      system.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);

  Matrix fitted = Matrix::Zero(n, n);
  for (int o = 0; o < generators.num_orbits; ++o)
    fitted += coeffs[o] * orbit_sums[static_cast<std::size_t>(o)];
  dec.residual = (fitted - target_projector).cwiseAbs().maxCoeff();
  if (dec.residual > tol::decomposition)
    throw InfeasibleError("identity_decomposition: residual " + std::to_string(dec.residual));
  for (int o = 0; o < generators.num_orbits; ++o)
    if (coeffs[o] <= 0.0)
      throw InfeasibleError("identity_decomposition: nonpositive coefficient on orbit " +
                            std::to_string(o));

  double trace = 0.0;
  for (auto& term : dec.terms) {
    term.coefficient = coeffs[term.orbit];
    trace += term.coefficient * static_cast<double>(term.space.dim());
  }
  if (std::abs(trace - static_cast<double>(target_dim)) > tol::trace_identity)
    throw InfeasibleError("identity_decomposition: trace identity violated");
  return dec;
}

IdentityDecomposition exchangeable_decomposition(Index n) {
  if (n < 2) throw ValidationError("exchangeable_decomposition: need n >= 2");
  IdentityDecomposition dec;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      IdentityDecomposition::Term term;
      Vector dir = Vector::Zero(n);
      dir[i] = 1.0 / std::sqrt(2.0);
      dir[j] = -1.0 / std::sqrt(2.0);
      term.space.basis = dir;
      term.coefficient = 2.0 / static_cast<double>(n);
      term.orbit = 0;
      dec.terms.push_back(term);
    }
  // Target: complement of the diagonal direction.
  Vector diag = Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  Matrix full = Matrix::Identity(n, n) - diag * diag.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(full);
  dec.target.basis = es.eigenvectors().rightCols(n - 1);
  dec.residual = (dec.weighted_sum() - dec.target.projector()).cwiseAbs().maxCoeff();
  return dec;
}

// ---------------------------------------------------------------------------
// Cayley spectral gap

namespace {

// Neighbor lists of the Cayley graph: neighbor[g][i] = index of g * R_i.
std::vector<std::vector<int>> cayley_neighbors(const FiniteGroup& group,
                                               const GeneratorSet& generators) {
  const auto order = static_cast<std::size_t>(group.order());
  std::vector<std::vector<int>> nbr(order);
  for (std::size_t g = 0; g < order; ++g) {
    nbr[g].reserve(static_cast<std::size_t>(generators.size()));
    for (const auto& r : generators.generators) {
      const int h = group.find(group.elements[g].matrix * r.matrix);
      if (h < 0)
        throw ValidationError("cayley_spectral_gap: generator leaves the group (not closed?)");
      nbr[g].push_back(h);
    }
  }
  return nbr;
}

// y = A x for the symmetrized adjacency (half weight on each direction).
Vector adjacency_apply(const std::vector<std::vector<int>>& nbr, const Vector& x) {
  const auto order = static_cast<Index>(nbr.size());
  Vector y = Vector::Zero(order);
  for (Index g = 0; g < order; ++g)
    for (int h : nbr[static_cast<std::size_t>(g)]) {
      y[g] += 0.5 * x[h];
      y[h] += 0.5 * x[g];
    }
  return y;
}

// Largest eigenpair of the adjacency restricted to the complement of the
// constant vector, by Lanczos with full reorthogonalization. The operator is
// shifted by +m I so the sought eigenvalue sits at the top of the spectrum.
std::pair<double, Vector> lanczos_top_restricted(
    const std::vector<std::vector<int>>& nbr, Index order, double m) {
  const Index max_iter = std::min<Index>(order - 1, 400);
  const Vector ones = Vector::Constant(order, 1.0 / std::sqrt(static_cast<double>(order)));

  Rng rng(0x5eed5eed5eedull);
  Vector v = rng.gaussian_vector(order);
  v -= ones.dot(v) * ones;
  v.normalize();

  std::vector<Vector> basis{v};
  std::vector<double> alpha, beta;

  auto top_ritz = [&](Vector* ritz_out) {
    const auto dim = static_cast<Index>(alpha.size());
    Matrix tri = Matrix::Zero(dim, dim);
    for (Index i = 0; i < dim; ++i) {
      tri(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < dim) tri(i, i + 1) = tri(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(tri);
    if (ritz_out) {
      *ritz_out = Vector::Zero(order);
      for (Index i = 0; i < dim; ++i)
        *ritz_out += es.eigenvectors()(i, dim - 1) * basis[static_cast<std::size_t>(i)];
      ritz_out->normalize();
    }
    return es.eigenvalues()[dim - 1];
  };

  double prev_theta = -1e300;
  int stagnant = 0;
  bool exhausted = false;
  for (Index k = 0; k < max_iter; ++k) {
    Vector w = adjacency_apply(nbr, basis.back()) + m * basis.back();
    alpha.push_back(basis.back().dot(w));
    w -= ones.dot(w) * ones;
    for (const auto& q : basis) w -= q.dot(w) * q;
    for (const auto& q : basis) w -= q.dot(w) * q;
    const double b = w.norm();
    if (b < 1e-12) {
      exhausted = true;  // Krylov space is invariant; Ritz pair is exact
      break;
    }
    if (k >= 16 && k % 8 == 0) {
      const double theta = top_ritz(nullptr);
      stagnant = (std::abs(theta - prev_theta) <= 1e-14 * std::max(1.0, std::abs(theta)))
                     ? stagnant + 1
                     : 0;
      prev_theta = theta;
      if (stagnant >= 3) break;
    }
    beta.push_back(b);
    basis.push_back(w / b);
  }
  (void)exhausted;
  Vector ritz;
  const double theta = top_ritz(&ritz);
  return {theta - m, ritz};
}

}  // namespace

double discrete_variance(const Vector& f) {
  const double mean = f.mean();
  return (f.array() - mean).square().mean();
}

double dirichlet_form(const FiniteGroup& group, const GeneratorSet& generators,
                      const Vector& f) {
  const auto nbr = cayley_neighbors(group, generators);
  double sum = 0.0;
  for (Index g = 0; g < group.order(); ++g)
    for (int h : nbr[static_cast<std::size_t>(g)]) {
      const double d = f[h] - f[g];
      sum += d * d;
    }
  return sum / static_cast<double>(group.order());
}

CayleyGap cayley_spectral_gap(const FiniteGroup& group, const GeneratorSet& generators) {
  const Index order = group.order();
  const auto m = static_cast<double>(generators.size());
  const auto nbr = cayley_neighbors(group, generators);

  double lambda2 = 0.0;
  Vector eigvec;
  if (order <= 512) {
    Matrix laplacian = Matrix::Zero(order, order);
    for (Index g = 0; g < order; ++g) {
      laplacian(g, g) += m;
      for (int h : nbr[static_cast<std::size_t>(g)]) {
        laplacian(g, h) -= 0.5;
        laplacian(h, g) -= 0.5;
      }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(laplacian);
    if (std::abs(es.eigenvalues()[0]) > tol::gap_zero)
      throw ValidationError("cayley_spectral_gap: constant vector not in kernel");
    lambda2 = es.eigenvalues()[1];
    eigvec = es.eigenvectors().col(1);
  } else {
    auto [a2, vec] = lanczos_top_restricted(nbr, order, m);
    lambda2 = m - a2;
    eigvec = vec;
  }
  if (lambda2 <= tol::gap_zero)
    throw ValidationError("cayley_spectral_gap: graph is disconnected");

  CayleyGap out;
  out.lambda2 = lambda2;
  out.poincare_constant = 1.0 / (2.0 * lambda2);
  out.eigenvector = eigvec;

  const double var = discrete_variance(eigvec);
  const double dirichlet = dirichlet_form(group, generators, eigvec);
  out.certificate_rel_err = std::abs(var - out.poincare_constant * dirichlet) / var;
  if (out.certificate_rel_err > tol::gap_certificate)
    throw ValidationError("cayley_spectral_gap: eigenvector certificate failed, rel err " +
                          std::to_string(out.certificate_rel_err));
  return out;
}

double kappa(const IdentityDecomposition& dec, const GeneratorSet& generators) {
  if (generators.orbit_weight.empty())
    throw ValidationError("kappa: generator weights not assigned");
  if (static_cast<int>(generators.orbit_weight.size()) != generators.num_orbits)
    throw ValidationError("kappa: weight/orbit count mismatch");
  std::vector<double> orbit_coeff(static_cast<std::size_t>(generators.num_orbits), -1.0);
  for (const auto& term : dec.terms)
    orbit_coeff[static_cast<std::size_t>(term.orbit)] = term.coefficient;
  double worst = 0.0;
  for (int o = 0; o < generators.num_orbits; ++o) {
    if (orbit_coeff[static_cast<std::size_t>(o)] <= 0.0)
      throw ValidationError("kappa: decomposition does not cover orbit " + std::to_string(o));
    worst = std::max(worst, generators.orbit_weight[static_cast<std::size_t>(o)] /
                                orbit_coeff[static_cast<std::size_t>(o)]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Built-in families

Matrix simplex_vertices(Index n) {
  // Project the n+1 standard basis vectors of R^{n+1} onto the complement of
  // the diagonal and rescale to unit length; express in an orthonormal basis
  // of that complement.
  const Index m = n + 1;
  Vector diag = Vector::Constant(m, 1.0 / std::sqrt(static_cast<double>(m)));
  Matrix proj = Matrix::Identity(m, m) - diag * diag.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(proj);
  const Matrix basis = es.eigenvectors().rightCols(n);  // eigenvalue-1 space
  Matrix vertices(n, m);
  const double scale = std::sqrt(static_cast<double>(m) / static_cast<double>(n));
  for (Index i = 0; i < m; ++i) {
    Vector e = Vector::Zero(m);
    e[i] = 1.0;
    vertices.col(i) = scale * (basis.transpose() * (proj * e));
  }
  return vertices;
}

namespace {

Isometry reflection_through_hyperplane(const Vector& normal) {
  const Vector u = normal / normal.norm();
  const Index n = u.size();
  return make_isometry(Matrix::Identity(n, n) - 2.0 * u * u.transpose());
}

std::vector<Isometry> unconditional_generators(Index n) {
  std::vector<Isometry> gens;
  for (Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e[i] = 1.0;
    gens.push_back(reflection_through_hyperplane(e));
  }
  return gens;
}

std::vector<Isometry> simplex_generators(Index n) {
  const Matrix vertices = simplex_vertices(n);
  std::vector<Isometry> gens;
  for (Index i = 0; i < vertices.cols(); ++i)
    for (Index j = i + 1; j < vertices.cols(); ++j)
      gens.push_back(reflection_through_hyperplane(vertices.col(i) - vertices.col(j)));
  return gens;
}

std::vector<Isometry> dihedral_generators(Index k) {
  std::vector<Isometry> gens;
  for (Index j = 0; j < k; ++j) {
    const double theta = M_PI * static_cast<double>(j) / static_cast<double>(k);
    Matrix R(2, 2);
    R << std::cos(2 * theta), std::sin(2 * theta), std::sin(2 * theta), -std::cos(2 * theta);
    gens.push_back(make_isometry(R));
  }
  return gens;
}

std::vector<Isometry> dihedral_rotation_generators(Index k) {
  std::vector<Isometry> gens;
  for (Index j = 1; j < k; ++j) {
    const double theta = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(k);
    Matrix R(2, 2);
    R << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    gens.push_back(make_isometry(R));
  }
  return gens;
}

std::vector<Isometry> schatten_row_generators(Index d) {
  // Coordinates index the entries of a d x d matrix (row-major); generator i
  // flips the sign of row i.
  const Index n = d * d;
  std::vector<Isometry> gens;
  for (Index i = 0; i < d; ++i) {
    Vector diag = Vector::Ones(n);
    for (Index j = 0; j < d; ++j) diag[i * d + j] = -1.0;
    gens.push_back(make_isometry(diag.asDiagonal().toDenseMatrix()));
  }
  return gens;
}

std::vector<Isometry> exchangeable_generators(Index n) {
  std::vector<Isometry> gens;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      Vector dir = Vector::Zero(n);
      dir[i] = 1.0;
      dir[j] = -1.0;
      gens.push_back(reflection_through_hyperplane(dir));
    }
  return gens;
}

}  // namespace

std::vector<Isometry> builtin_generators(const std::string& name) {
  const auto colon = name.find(':');
  if (colon == std::string::npos)
    throw ValidationError("builtin_generators: expected family:parameter, got " + name);
  const std::string family = name.substr(0, colon);
  Index param = 0;
  try {
    param = std::stol(name.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("builtin_generators: bad parameter in " + name);
  }
  if (param < 1) throw ValidationError("builtin_generators: parameter must be positive");

  if (family == "unconditional") return unconditional_generators(param);
  if (family == "simplex") return simplex_generators(param);
  if (family == "dihedral") {
    if (param < 2) throw ValidationError("builtin_generators: dihedral needs k >= 2");
    return dihedral_generators(param);
  }
  if (family == "dihedral-rotations") {
    if (param < 2) throw ValidationError("builtin_generators: dihedral-rotations needs k >= 2");
    return dihedral_rotation_generators(param);
  }
  if (family == "schatten-rows") return schatten_row_generators(param);
  if (family == "exchangeable") {
    if (param < 2) throw ValidationError("builtin_generators: exchangeable needs n >= 2");
    return exchangeable_generators(param);
  }
  throw ValidationError("builtin_generators: unknown family " + family);
}

}  // namespace symvar::symmetry
