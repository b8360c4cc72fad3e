#include "symvar/measures.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <cmath>
#include <sstream>

#include "symvar/gap1d.hpp"
#include "symvar/quadrature.hpp"
#include "symvar/rng.hpp"

namespace symvar::measures {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

Index parse_index(const std::string& tok, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ValidationError("invalid " + what + " '" + tok + "'");
  }
}

Index parse_nonneg(const std::string& tok, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ValidationError("invalid " + what + " '" + tok + "'");
  }
}

double parse_double(const std::string& tok, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("invalid " + what + " '" + tok + "'");
  }
}

Matrix ones_complement_basis(Index n) {
  Matrix cols(n, n - 1);
  for (Index i = 0; i + 1 < n; ++i) {
    cols.col(i).setZero();
    cols(i, i) = 1.0;
    cols(i + 1, i) = -1.0;
  }
  Eigen::HouseholderQR<Matrix> qr(cols);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n - 1);
  return q;
}

void attach_product(MeasureModel& m, std::vector<ScalarPotential> factors) {
  m.factors = std::move(factors);
  m.is_product = true;
  const auto& fs = m.factors;
  m.potential = [fs](const Vector& x) {
    double v = 0.0;
    for (Index i = 0; i < x.size(); ++i) v += fs[static_cast<std::size_t>(i)].value(x[i]);
    return v;
  };
  bool differentiable = true;
  for (const auto& f : fs) differentiable = differentiable && f.d1 && f.d2;
  if (differentiable) {
    m.gradient = [fs](const Vector& x) {
      Vector g(x.size());
      for (Index i = 0; i < x.size(); ++i) g[i] = fs[static_cast<std::size_t>(i)].d1(x[i]);
      return g;
    };
    m.hessian = [fs](const Vector& x) {
      Matrix h = Matrix::Zero(x.size(), x.size());
      for (Index i = 0; i < x.size(); ++i) h(i, i) = fs[static_cast<std::size_t>(i)].d2(x[i]);
      return h;
    };
  }
}

Matrix reshape_square(const Vector& x, Index d) {
  Matrix m(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) m(i, j) = x[i * d + j];  // row-major layout
  return m;
}

}  // namespace

ScalarPotential scalar_potential(const std::string& name) {
  const auto toks = split(name, ':');
  const std::string& family = toks[0];
  ScalarPotential p;
  p.name = name;
  if (family == "quadratic" && toks.size() == 1) {
    p.value = [](double t) { return 0.5 * t * t; };
    p.d1 = [](double t) { return t; };
    p.d2 = [](double) { return 1.0; };
  } else if (family == "abs" && toks.size() == 1) {
    p.value = [](double t) { return std::abs(t); };
  } else if (family == "quartic" && toks.size() == 1) {
    p.value = [](double t) { return t * t * t * t; };
    p.d1 = [](double t) { return 4.0 * t * t * t; };
    p.d2 = [](double t) { return 12.0 * t * t; };
  } else if (family == "double-well" && toks.size() <= 2) {
    const double a = toks.size() == 2 ? parse_double(toks[1], "double-well parameter") : 1.0;
    const double a2 = a * a;
    p.value = [a2](double t) { const double s = t * t - a2; return s * s; };
    p.d1 = [a2](double t) { return 4.0 * t * (t * t - a2); };
    p.d2 = [a2](double t) { return 12.0 * t * t - 4.0 * a2; };
    p.convex = false;
  } else if (family == "perturbed" && toks.size() == 2) {
    const double eps = parse_double(toks[1], "perturbed epsilon");
    if (eps <= 0.0) throw ValidationError("perturbed epsilon must be positive");
    const double e2 = eps * eps;
    p.value = [e2](double t) { return std::sqrt(t * t + e2); };
    p.d1 = [e2](double t) { return t / std::sqrt(t * t + e2); };
    p.d2 = [e2](double t) { const double r = std::sqrt(t * t + e2); return e2 / (r * r * r); };
  } else {
    throw ValidationError("unknown scalar potential '" + name + "'");
  }
  return p;
}

MeasureModel make_model(const std::string& descriptor) {
  const auto toks = split(descriptor, ':');
  const std::string& family = toks[0];
  MeasureModel m;
  m.name = descriptor;

  if (family == "gaussian" && toks.size() == 2) {
    const Index n = parse_index(toks[1], "dimension");
    m.kind = MeasureModel::Kind::Smooth;
    m.ambient_dim = m.intrinsic_dim = n;
    attach_product(m, std::vector<ScalarPotential>(static_cast<std::size_t>(n),
                                                   scalar_potential("quadratic")));
    m.is_gaussian = true;
    m.gaussian_precision = Matrix::Identity(n, n);
    m.convexity_floor = 1.0;
  } else if (family == "corr-gaussian" && toks.size() == 3) {
    const Index n = parse_index(toks[1], "dimension");
    const double rho = parse_double(toks[2], "correlation");
    if (n < 2 || rho <= -1.0 / static_cast<double>(n - 1) || rho >= 1.0)
      throw ValidationError("corr-gaussian needs n >= 2 and rho in (-1/(n-1), 1)");
    const double a = 1.0 / (1.0 - rho);
    const double b = -rho / ((1.0 - rho) * (1.0 + (static_cast<double>(n) - 1.0) * rho));
    Matrix lambda = a * Matrix::Identity(n, n) + b * Matrix::Ones(n, n);
    m.kind = MeasureModel::Kind::Smooth;
    m.ambient_dim = m.intrinsic_dim = n;
    m.potential = [lambda](const Vector& x) { return 0.5 * x.dot(lambda * x); };
    m.gradient = [lambda](const Vector& x) { return Vector(lambda * x); };
    m.hessian = [lambda](const Vector&) { return lambda; };
    m.is_gaussian = true;
    m.gaussian_precision = lambda;
    m.convexity_floor = std::min(1.0 / (1.0 + (static_cast<double>(n) - 1.0) * rho),
                                 1.0 / (1.0 - rho));
  } else if (family == "cube" && toks.size() == 2) {
    const Index n = parse_index(toks[1], "dimension");
    m.kind = MeasureModel::Kind::Body;
    m.ambient_dim = m.intrinsic_dim = n;
    m.member = [](const Vector& x) { return x.cwiseAbs().maxCoeff() <= 1.0 + 1e-12; };
    m.support = [](const Vector& u) { return u.cwiseAbs().sum(); };
    m.bounding_radius = std::sqrt(static_cast<double>(n));
  } else if (family == "simplex-body" && toks.size() == 2) {
    const Index n = parse_index(toks[1], "dimension");
    if (n < 2) throw ValidationError("simplex-body needs dimension >= 2");
    const Matrix verts = symmetry::simplex_vertices(n);
    const double floor_bc = -1.0 / static_cast<double>(n) - 1e-12;
    m.kind = MeasureModel::Kind::Body;
    m.ambient_dim = m.intrinsic_dim = n;
    m.member = [verts, floor_bc](const Vector& x) {
      return (verts.transpose() * x).minCoeff() >= floor_bc;
    };
    m.support = [verts](const Vector& u) { return (verts.transpose() * u).maxCoeff(); };
    m.bounding_radius = 1.0;
  } else if (family == "lp-ball" && toks.size() == 3) {
    const Index n = parse_index(toks[1], "dimension");
    const double p = parse_double(toks[2], "exponent");
    if (p < 1.0 || p > 64.0) throw ValidationError("lp-ball exponent must be in [1, 64]");
    m.kind = MeasureModel::Kind::Body;
    m.ambient_dim = m.intrinsic_dim = n;
    m.member = [p](const Vector& x) {
      return x.cwiseAbs().array().pow(p).sum() <= 1.0 + 1e-12;
    };
    const double q = (p == 1.0) ? -1.0 : p / (p - 1.0);  // -1 flags q = infinity
    m.support = [q](const Vector& u) {
      if (q < 0.0) return u.cwiseAbs().maxCoeff();
      return std::pow(u.cwiseAbs().array().pow(q).sum(), 1.0 / q);
    };
    m.bounding_radius = std::pow(static_cast<double>(n), std::max(0.0, 0.5 - 1.0 / p));
  } else if (family == "schatten-ball" && toks.size() == 3) {
    const Index d = parse_index(toks[1], "matrix size");
    const double p = parse_double(toks[2], "exponent");
    if (p < 1.0 || p > 64.0) throw ValidationError("schatten-ball exponent must be in [1, 64]");
    m.kind = MeasureModel::Kind::Body;
    m.ambient_dim = m.intrinsic_dim = d * d;
    m.member = [d, p](const Vector& x) {
      Eigen::JacobiSVD<Matrix> svd(reshape_square(x, d));
      return svd.singularValues().array().pow(p).sum() <= 1.0 + 1e-12;
    };
    const double q = (p == 1.0) ? -1.0 : p / (p - 1.0);
    m.support = [d, q](const Vector& u) {
      Eigen::JacobiSVD<Matrix> svd(reshape_square(u, d));
      if (q < 0.0) return svd.singularValues().maxCoeff();
      return std::pow(svd.singularValues().array().pow(q).sum(), 1.0 / q);
    };
    m.bounding_radius = std::pow(static_cast<double>(d), std::max(0.0, 0.5 - 1.0 / p));
  } else if (family == "product" && toks.size() == 3) {
    const Index n = parse_index(toks[1], "dimension");
    const ScalarPotential site = scalar_potential(toks[2]);
    m.kind = MeasureModel::Kind::Product;
    m.ambient_dim = m.intrinsic_dim = n;
    attach_product(m, std::vector<ScalarPotential>(static_cast<std::size_t>(n), site));
    if (site.name == "quadratic") {
      m.convexity_floor = 1.0;
      m.is_gaussian = true;
      m.gaussian_precision = Matrix::Identity(n, n);
    } else if (split(site.name, ':')[0] == "double-well") {
      const double a = site.name == "double-well"
                           ? 1.0
                           : parse_double(split(site.name, ':')[1], "double-well parameter");
      m.convexity_floor = -4.0 * a * a;
    }
  } else if (family == "coupled" && toks.size() == 4) {
    const Index n = parse_index(toks[1], "dimension");
    const ScalarPotential site = scalar_potential(toks[2]);
    const double eps = parse_double(toks[3], "coupling strength");
    if (!site.d1 || !site.d2) {
      throw ValidationError("coupled model needs a twice-differentiable site potential");
    }
    m.kind = MeasureModel::Kind::Smooth;
    m.ambient_dim = m.intrinsic_dim = n;
    m.potential = [site, eps, n](const Vector& x) {
      double v = 0.0;
      for (Index i = 0; i < n; ++i) v += site.value(x[i]);
      const double s = x.sum();
      return v + 0.5 * eps * (s * s - x.squaredNorm());
    };
    m.gradient = [site, eps, n](const Vector& x) {
      const double s = x.sum();
      Vector g(n);
      for (Index i = 0; i < n; ++i) g[i] = site.d1(x[i]) + eps * (s - x[i]);
      return g;
    };
    m.hessian = [site, eps, n](const Vector& x) {
      Matrix h = Matrix::Constant(n, n, eps);
      for (Index i = 0; i < n; ++i) h(i, i) = site.d2(x[i]);
      return h;
    };
    double site_floor = 0.0;
    const std::string site_family = split(site.name, ':')[0];
    if (site_family == "quadratic") {
      site_floor = 1.0;
    } else if (site_family == "double-well") {
      const double a = site.name == "double-well"
                           ? 1.0
                           : parse_double(split(site.name, ':')[1], "double-well parameter");
      site_floor = -4.0 * a * a;
    }
    // Coupling matrix eps (J - I) has eigenvalues eps (n-1) and -eps.
    m.convexity_floor =
        site_floor + (eps >= 0.0 ? -eps : eps * static_cast<double>(n - 1));
  } else if (family == "spin" && toks.size() == 4) {
    const Index n = parse_index(toks[1], "spin count");
    if (n < 2) throw ValidationError("spin model needs at least 2 sites");
    const double mval = parse_double(toks[2], "magnetization");
    const ScalarPotential site = scalar_potential(toks[3]);
    m.kind = MeasureModel::Kind::Spin;
    m.ambient_dim = n;
    m.intrinsic_dim = n - 1;
    m.spin_n = n;
    m.spin_m = mval;
    m.spin_site = site;
    m.spin_basis = ones_complement_basis(n);
    m.spin_origin = Vector::Constant(n, mval);
    m.potential = [site, n](const Vector& x) {
      double v = 0.0;
      for (Index i = 0; i < n; ++i) v += site.value(x[i]);
      return v;
    };
    if (site.d1 && site.d2) {
      m.gradient = [site, n](const Vector& x) {
        Vector g(n);
        for (Index i = 0; i < n; ++i) g[i] = site.d1(x[i]);
        return g;
      };
      m.hessian = [site, n](const Vector& x) {
        Matrix h = Matrix::Zero(n, n);
        for (Index i = 0; i < n; ++i) h(i, i) = site.d2(x[i]);
        return h;
      };
    }
    if (site.name == "quadratic") m.convexity_floor = 1.0;
  } else if (family == "radial-quartic" && toks.size() == 2) {
    const Index n = parse_index(toks[1], "dimension");
    m.kind = MeasureModel::Kind::Smooth;
    m.ambient_dim = m.intrinsic_dim = n;
    m.potential = [](const Vector& x) {
      const double r2 = x.squaredNorm();
      return 0.25 * r2 * r2 + 0.5 * r2;
    };
    m.gradient = [](const Vector& x) { return Vector((x.squaredNorm() + 1.0) * x); };
    m.hessian = [n](const Vector& x) {
      return Matrix((x.squaredNorm() + 1.0) * Matrix::Identity(n, n) +
                    2.0 * x * x.transpose());
    };
    m.convexity_floor = 1.0;
  } else if (family == "dented-radial" && toks.size() == 3) {
    const Index n = parse_index(toks[1], "dimension");
    const double beta = parse_double(toks[2], "dent strength");
    if (beta < 0.0) throw ValidationError("dented-radial beta must be nonnegative");
    m.kind = MeasureModel::Kind::Smooth;
    m.ambient_dim = m.intrinsic_dim = n;
    m.potential = [beta](const Vector& x) {
      const double r2 = x.squaredNorm();
      return 0.25 * r2 * r2 + 0.5 * r2 + 0.25 * beta * x.array().pow(4).sum();
    };
    m.gradient = [beta](const Vector& x) {
      return Vector((x.squaredNorm() + 1.0) * x + beta * x.array().cube().matrix());
    };
    m.hessian = [beta, n](const Vector& x) {
      Matrix h = (x.squaredNorm() + 1.0) * Matrix::Identity(n, n) + 2.0 * x * x.transpose();
      for (Index i = 0; i < n; ++i) h(i, i) += 3.0 * beta * x[i] * x[i];
      return h;
    };
    m.convexity_floor = 1.0;
  } else if (family == "square-sym-2d" && toks.size() == 1) {
    m.kind = MeasureModel::Kind::Smooth;
    m.ambient_dim = m.intrinsic_dim = 2;
    m.potential = [](const Vector& x) {
      const double a = x[0], b = x[1];
      return 0.25 * (a * a * a * a + b * b * b * b) + 0.5 * (a * a + b * b) +
             0.5 * a * a * b * b;
    };
    m.gradient = [](const Vector& x) {
      const double a = x[0], b = x[1];
      Vector g(2);
      g[0] = a * a * a + a + a * b * b;
      g[1] = b * b * b + b + a * a * b;
      return g;
    };
    m.hessian = [](const Vector& x) {
      const double a = x[0], b = x[1];
      Matrix h(2, 2);
      h(0, 0) = 3.0 * a * a + 1.0 + b * b;
      h(1, 1) = 3.0 * b * b + 1.0 + a * a;
      h(0, 1) = h(1, 0) = 2.0 * a * b;
      return h;
    };
    m.convexity_floor = 1.0;
  } else if (family == "prod-gauss-quartic-2d" && toks.size() == 1) {
    m.kind = MeasureModel::Kind::Product;
    m.ambient_dim = m.intrinsic_dim = 2;
    attach_product(m, {scalar_potential("quadratic"), scalar_potential("quartic")});
  } else {
    throw ValidationError("unknown model descriptor '" + descriptor + "'");
  }
  return m;
}

std::string default_group(const MeasureModel& model) {
  const auto toks = split(model.name, ':');
  const std::string& family = toks[0];
  const std::string n = std::to_string(model.ambient_dim);
  if (family == "simplex-body") return "simplex:" + n;
  if (family == "schatten-ball") return "schatten-rows:" + toks[1];
  if (family == "spin" || family == "corr-gaussian" || family == "coupled") {
    return "exchangeable:" + n;
  }
  if (family == "square-sym-2d") return "dihedral:4";
  return "unconditional:" + n;
}

Conditioned condition(const MeasureModel& model, const Vector& x, const Subspace& E) {
  if (E.ambient_dim() != model.ambient_dim)
    throw ValidationError("condition: subspace ambient dimension mismatch");
  const Matrix& B = E.basis;
  if ((B.transpose() * B - Matrix::Identity(E.dim(), E.dim())).cwiseAbs().maxCoeff() >
      tol::orthogonality * 10)
    throw ValidationError("condition: subspace basis is not orthonormal");
  if (model.kind == MeasureModel::Kind::Spin) {
    const Vector ones = Vector::Ones(model.ambient_dim);
    if ((B.transpose() * ones).cwiseAbs().maxCoeff() > 1e-8)
      throw ValidationError("condition: subspace leaves the spin hyperplane");
    const double target = model.spin_m * static_cast<double>(model.spin_n);
    if (std::abs(x.sum() - target) > 1e-8 * (1.0 + std::abs(target)))
      throw ValidationError("condition: point is off the spin hyperplane");
  }

  Conditioned c;
  c.dim = E.dim();
  c.basis = B;
  c.anchor = x - B * (B.transpose() * x);
  if (model.kind == MeasureModel::Kind::Body) {
    c.body = true;
    c.model = &model;
    return c;
  }
  const auto pot = model.potential;
  const Vector anchor = c.anchor;
  c.psi = [pot, anchor, B](const Vector& t) { return pot(anchor + B * t); };
  if (c.dim == 1) {
    const Vector b0 = B.col(0);
    c.psi1 = [pot, anchor, b0](double t) { return pot(anchor + t * b0); };
  }
  if (c.dim == 2) {
    const Vector b0 = B.col(0), b1 = B.col(1);
    c.psi2 = [pot, anchor, b0, b1](double s, double t) {
      return pot(anchor + s * b0 + t * b1);
    };
  }
  return c;
}

std::pair<double, double> body_chord(const MeasureModel& model, const Vector& anchor,
                                     const Vector& dir, double t_inside) {
  if (model.kind != MeasureModel::Kind::Body)
    throw ValidationError("body_chord: model is not a convex body");
  if (std::abs(dir.norm() - 1.0) > 1e-9)
    throw ValidationError("body_chord: direction must be a unit vector");
  auto inside = [&](double t) { return model.member(anchor + t * dir); };
  if (!inside(t_inside))
    throw ValidationError("body_chord: starting point is outside the body");
  const double reach = 2.0 * model.bounding_radius + std::abs(t_inside) + 1.0;
  auto boundary = [&](double sign) {
    double lo = t_inside, hi = t_inside + sign * reach;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (inside(mid))
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  return {boundary(-1.0), boundary(+1.0)};
}

double invariance_defect(const MeasureModel& model, const Isometry& R, int probes,
                         std::uint64_t seed) {
  if (R.dim() != model.ambient_dim)
    throw ValidationError("invariance_defect: isometry dimension mismatch");
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    Vector x;
    if (model.kind == MeasureModel::Kind::Spin) {
      x = model.spin_origin + model.spin_basis * rng.gaussian_vector(model.intrinsic_dim);
    } else if (model.kind == MeasureModel::Kind::Body) {
      x = model.bounding_radius *
          std::pow(rng.uniform(), 1.0 / static_cast<double>(model.ambient_dim)) *
          rng.sphere_direction(model.ambient_dim);
    } else {
      x = rng.gaussian_vector(model.ambient_dim);
    }
    const Vector rx = R.matrix * x;
    if (model.kind == MeasureModel::Kind::Body) {
      worst = std::max(worst,
                       std::abs(static_cast<double>(model.member(rx)) -
                                static_cast<double>(model.member(x))));
    } else {
      worst = std::max(worst, std::abs(model.potential(rx) - model.potential(x)));
    }
  }
  return worst;
}

MeasureModel symmetrize(const MeasureModel& model, const symmetry::FiniteGroup& group) {
  if (group.dim() != model.ambient_dim)
    throw ValidationError("symmetrize: group dimension mismatch");
  std::vector<Matrix> mats;
  mats.reserve(group.elements.size());
  for (const auto& g : group.elements) mats.push_back(g.matrix);

  MeasureModel out = model;
  out.name = "symmetrized(" + model.name + ")";
  out.is_product = false;
  out.is_gaussian = false;
  out.factors.clear();
  if (model.kind == MeasureModel::Kind::Body) {
    const auto member = model.member;
    out.member = [mats, member](const Vector& x) {
      for (const auto& g : mats)
        if (!member(g * x)) return false;
      return true;
    };
    out.support = nullptr;  // intersection support has no closed form here
    return out;
  }
  const auto pot = model.potential;
  const double inv = 1.0 / static_cast<double>(mats.size());
  out.potential = [mats, pot, inv](const Vector& x) {
    double v = 0.0;
    for (const auto& g : mats) v += pot(g * x);
    return v * inv;
  };
  if (model.has_gradient()) {
    const auto grad = model.gradient;
    out.gradient = [mats, grad, inv](const Vector& x) {
      Vector g = Vector::Zero(x.size());
      for (const auto& gm : mats) g += gm.transpose() * grad(gm * x);
      return Vector(g * inv);
    };
  }
  if (model.has_hessian()) {
    const auto hess = model.hessian;
    out.hessian = [mats, hess, inv](const Vector& x) {
      Matrix h = Matrix::Zero(x.size(), x.size());
      for (const auto& gm : mats) h += gm.transpose() * hess(gm * x) * gm;
      return Matrix(h * inv);
    };
  }
  return out;
}

TestFunction symmetrize(const TestFunction& f, const symmetry::FiniteGroup& group) {
  std::vector<Matrix> mats;
  mats.reserve(group.elements.size());
  for (const auto& g : group.elements) mats.push_back(g.matrix);
  const double inv = 1.0 / static_cast<double>(mats.size());

  TestFunction out;
  out.name = "avg(" + f.name + ")";
  const auto value = f.value;
  out.value = [mats, value, inv](const Vector& x) {
    double v = 0.0;
    for (const auto& g : mats) v += value(g * x);
    return v * inv;
  };
  const auto grad = f.grad;
  out.grad = [mats, grad, inv](const Vector& x) {
    Vector g = Vector::Zero(x.size());
    for (const auto& gm : mats) g += gm.transpose() * grad(gm * x);
    return Vector(g * inv);
  };
  return out;
}

CenteringDefects conditional_centering_defects(const MeasureModel& model, const Vector& x,
                                               const Isometry& R) {
  const auto fixres = symmetry::fix_subspace(R);
  const Subspace& E = fixres.complement;
  const Conditioned cond = condition(model, x, E);
  const Matrix& rmat = R.matrix;
  const Index n = model.ambient_dim;

  // Generic non-invariant observable and an R-invariant one.
  auto u = [n](const Vector& y) {
    double v = 0.0;
    for (Index i = 0; i < n; ++i) v += std::sin(y[i] + 0.3 * static_cast<double>(i + 1));
    return v;
  };
  Vector w = fixres.fixed.dim() > 0 ? Vector(fixres.fixed.basis.col(0))
                                    : Vector(Vector::Zero(n));
  auto grad_g = [w](const Vector& y) {
    return Vector(std::sinh(w.dot(y)) * w + 0.5 * y);  // g = cosh(w.y) + |y|^2/4
  };

  CenteringDefects out;
  if (E.dim() == 1) {
    const Vector b = E.basis.col(0);
    const Vector anchor = cond.anchor;
    double lo, hi;
    std::function<double(double)> logw;
    if (cond.body) {
      std::tie(lo, hi) = body_chord(model, anchor, b, b.dot(x));
      logw = [](double) { return 0.0; };
    } else {
      const auto g1d = gap1d::auto_grid1d(cond.psi1, 9, b.dot(x), 1.0);
      lo = g1d.lo;
      hi = g1d.hi;
      double shift = 1e300;
      for (int i = 0; i <= 64; ++i) shift = std::min(shift, cond.psi1(lo + (hi - lo) * i / 64.0));
      const auto psi = cond.psi1;
      logw = [psi, shift](double t) { return psi(t) - shift; };
    }
    auto point = [&](double t) { return Vector(anchor + t * b); };
    const double z = integrate([&](double t) { return std::exp(-logw(t)); }, lo, hi, 1e-12);
    const double mz = integrate(
        [&](double t) {
          const Vector y = point(t);
          return (u(rmat * y) - u(y)) * std::exp(-logw(t));
        },
        lo, hi, 1e-12);
    const double as = integrate(
        [&](double t) {
          const Vector y = point(t);
          return b.dot(grad_g(y)) * std::exp(-logw(t));
        },
        lo, hi, 1e-12);
    out.mean_zero = std::abs(mz) / z;
    out.antisym = std::abs(as) / z;
    return out;
  }
  if (E.dim() == 2 && !cond.body) {
    const auto grid = gap1d::auto_grid2d(cond.psi2, 9, E.basis.col(0).dot(x),
                                         E.basis.col(1).dot(x), 1.0);
    double shift = 1e300;
    for (int i = 0; i <= 32; ++i)
      for (int j = 0; j <= 32; ++j)
        shift = std::min(shift, cond.psi2(grid.lox + (grid.hix - grid.lox) * i / 32.0,
                                          grid.loy + (grid.hiy - grid.loy) * j / 32.0));
    auto moment = [&](auto&& weight) {
      return integrate(
          [&](double s) {
            return integrate(
                [&](double t) {
                  const Vector y = cond.anchor + s * E.basis.col(0) + t * E.basis.col(1);
                  return weight(y) * std::exp(-(cond.psi2(s, t) - shift));
                },
                grid.loy, grid.hiy, 1e-11);
          },
          grid.lox, grid.hix, 1e-11);
    };
    const double z = moment([](const Vector&) { return 1.0; });
    const double mz = moment([&](const Vector& y) { return u(rmat * y) - u(y); });
    const double as0 = moment([&](const Vector& y) { return E.basis.col(0).dot(grad_g(y)); });
    const double as1 = moment([&](const Vector& y) { return E.basis.col(1).dot(grad_g(y)); });
    out.mean_zero = std::abs(mz) / z;
    out.antisym = std::max(std::abs(as0), std::abs(as1)) / z;
    return out;
  }
  throw ValidationError(
      "conditional_centering_defects: supported slices are 1D, or 2D density slices");
}

ScalarPotential spin_pair_potential(const MeasureModel& model, const Vector& x, Index i,
                                    Index j) {
  if (model.kind != MeasureModel::Kind::Spin)
    throw ValidationError("spin_pair_potential: model is not a spin system");
  if (i == j || i >= model.spin_n || j >= model.spin_n)
    throw ValidationError("spin_pair_potential: invalid site pair");
  const double s = 0.5 * (x[i] + x[j]);
  const ScalarPotential site = model.spin_site;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  ScalarPotential p;
  p.name = "spin-pair(" + site.name + ")";
  p.convex = site.convex;
  p.value = [site, s, inv_sqrt2](double t) {
    return site.value(s + t * inv_sqrt2) + site.value(s - t * inv_sqrt2);
  };
  if (site.d1 && site.d2) {
    p.d1 = [site, s, inv_sqrt2](double t) {
      return inv_sqrt2 * (site.d1(s + t * inv_sqrt2) - site.d1(s - t * inv_sqrt2));
    };
    p.d2 = [site, s, inv_sqrt2](double t) {
      return 0.5 * (site.d2(s + t * inv_sqrt2) + site.d2(s - t * inv_sqrt2));
    };
  }
  return p;
}

Vector spin_to_ambient(const MeasureModel& model, const Vector& intrinsic) {
  if (model.kind != MeasureModel::Kind::Spin)
    throw ValidationError("spin_to_ambient: model is not a spin system");
  return model.spin_origin + model.spin_basis * intrinsic;
}

TestFunction test_function(const std::string& name, Index dim) {
  const auto toks = split(name, ':');
  const std::string& family = toks[0];
  TestFunction f;
  f.name = name;
  if (family == "norm2" && toks.size() == 1) {
    f.value = [](const Vector& x) { return x.squaredNorm(); };
    f.grad = [](const Vector& x) { return Vector(2.0 * x); };
  } else if (family == "sum" && toks.size() == 1) {
    f.value = [](const Vector& x) { return x.sum(); };
    f.grad = [](const Vector& x) { return Vector(Vector::Ones(x.size())); };
  } else if (family == "coord" && toks.size() == 2) {
    const Index idx = parse_nonneg(toks[1], "coordinate");
    if (idx >= dim) throw ValidationError("coord index out of range");
    f.value = [idx](const Vector& x) { return x[idx]; };
    f.grad = [idx, dim](const Vector&) {
      Vector g = Vector::Zero(dim);
      g[idx] = 1.0;
      return g;
    };
  } else if (family == "hermite" && toks.size() == 2) {
    const Index k = parse_index(toks[1], "hermite degree");
    if (k > 4) throw ValidationError("hermite degree must be in 1..4");
    f.value = [k](const Vector& x) {
      const double t = x[0];
      switch (k) {
        case 1: return t;
        case 2: return t * t - 1.0;
        case 3: return t * t * t - 3.0 * t;
        default: return t * t * t * t - 6.0 * t * t + 3.0;
      }
    };
    f.grad = [k, dim](const Vector& x) {
      const double t = x[0];
      Vector g = Vector::Zero(dim);
      switch (k) {
        case 1: g[0] = 1.0; break;
        case 2: g[0] = 2.0 * t; break;
        case 3: g[0] = 3.0 * t * t - 3.0; break;
        default: g[0] = 4.0 * t * t * t - 12.0 * t; break;
      }
      return g;
    };
  } else if (family == "spin-linear" && toks.size() == 2) {
    if (dim < 2) throw ValidationError("spin-linear needs dimension >= 2");
    const Index site = parse_nonneg(toks[1], "coordinate");
    if (site >= dim) throw ValidationError("spin-linear index out of range");
    const double scale =
        std::sqrt(static_cast<double>(dim) / static_cast<double>(dim - 1));
    f.value = [site, scale](const Vector& x) { return scale * x[site]; };
    f.grad = [site, scale, dim](const Vector&) {
      Vector g = Vector::Zero(dim);
      g[site] = scale;
      return g;
    };
  } else {
    throw ValidationError("unknown test function '" + name + "'");
  }
  return f;
}

}  // namespace symvar::measures
