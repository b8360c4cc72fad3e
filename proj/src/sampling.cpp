#include "symvar/sampling.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "symvar/gap1d.hpp"

namespace symvar::sampling {

using gap1d::DomainError;
using gap1d::SolveError;
using measures::ValidationError;

namespace {

std::string family_of(const std::string& name) {
  return name.substr(0, name.find(':'));
}

// ---------------------------------------------------------------------------
// Derivative-free adaptive rejection sampler for e^{-psi}, psi convex.
// Envelope lines are secant extensions, which lower-bound a convex function
// outside their chord; no derivatives of psi are required.

class Ars {
 public:
  Ars(std::function<double(double)> psi, double center, double scale)
      : psi_(std::move(psi)) {
    const double s = std::max(scale, 1e-8);
    knots_ = {center - s, center, center + s};
    vals_.resize(3);
    for (int i = 0; i < 3; ++i) vals_[i] = psi_(knots_[i]);
    // Expand until the ends rise strictly, so tail envelopes are integrable.
    double step = s;
    for (int it = 0; vals_[0] <= vals_[1]; ++it) {
      if (it >= 300) throw DomainError("ars: potential does not confine on the left");
      knots_[0] -= step;
      vals_[0] = psi_(knots_[0]);
      step *= 2.0;
    }
    step = s;
    const auto last = [&] { return vals_.size() - 1; };
    for (int it = 0; vals_[last()] <= vals_[last() - 1]; ++it) {
      if (it >= 300) throw DomainError("ars: potential does not confine on the right");
      knots_[last()] += step;
      vals_[last()] = psi_(knots_[last()]);
      step *= 2.0;
    }
    rebuild();
  }

  double draw(Rng& rng) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      double u = rng.uniform() * total_;
      std::size_t pick = pieces_.size() - 1;
      for (std::size_t i = 0; i < pieces_.size(); ++i) {
        if (u < pieces_[i].mass) {
          pick = i;
          break;
        }
        u -= pieces_[i].mass;
      }
      const Piece& p = pieces_[pick];
      const double t = sample_piece(p, rng.uniform());
      const double env = p.a + p.b * t;
      const double pv = psi_(t);
      if (env - pv > 1e-9 * (1.0 + std::abs(pv)))
        throw SolveError("ars: potential is not convex along this line");
      if (std::log(std::max(rng.uniform(), 1e-300)) <= env - pv) return t;
      insert_knot(t, pv);
    }
    throw SolveError("ars: rejection sampler failed to accept");
  }

 private:
  struct Piece {
    double a, b;      // envelope line a + b t (in psi units, shift removed)
    double lo, hi;    // domain; +-inf for tails
    double mass;
  };

  static double piece_mass(const Piece& p) {
    if (std::isinf(p.lo)) return std::exp(-(p.a + p.b * p.hi)) / (-p.b);
    if (std::isinf(p.hi)) return std::exp(-(p.a + p.b * p.lo)) / p.b;
    if (std::abs(p.b) < 1e-14) return std::exp(-p.a) * (p.hi - p.lo);
    const double lo_val = std::exp(-(p.a + p.b * p.lo));
    return lo_val * (-std::expm1(-p.b * (p.hi - p.lo))) / p.b;
  }

  static double sample_piece(const Piece& p, double w) {
    w = std::min(std::max(w, 1e-16), 1.0 - 1e-16);
    if (std::isinf(p.lo)) return p.hi + std::log(w) / (-p.b);
    if (std::isinf(p.hi)) return p.lo - std::log(w) / p.b;
    if (std::abs(p.b) < 1e-14) return p.lo + w * (p.hi - p.lo);
    return p.lo - std::log1p(w * std::expm1(-p.b * (p.hi - p.lo))) / p.b;
  }

  // Line through knots i and j, in shifted units.
  void secant(std::size_t i, std::size_t j, double& a, double& b) const {
    b = (vals_[j] - vals_[i]) / (knots_[j] - knots_[i]);
    a = (vals_[i] - shift_) - b * knots_[i];
  }

  void push_piece(double a, double b, double lo, double hi) {
    if (hi <= lo) return;
    Piece p{a, b, lo, hi, 0.0};
    p.mass = piece_mass(p);
    if (std::isfinite(p.mass) && p.mass > 0.0) pieces_.push_back(p);
  }

  void rebuild() {
    shift_ = *std::min_element(vals_.begin(), vals_.end());
    pieces_.clear();
    const std::size_t k = knots_.size() - 1;  // interval count
    double a, b;
    secant(0, 1, a, b);
    push_piece(a, b, -std::numeric_limits<double>::infinity(), knots_[0]);
    for (std::size_t i = 0; i < k; ++i) {
      const bool has_l = i >= 1, has_r = i + 2 <= k;
      double al = 0, bl = 0, ar = 0, br = 0;
      if (has_l) secant(i - 1, i, al, bl);
      if (has_r) secant(i + 1, i + 2, ar, br);
      const double lo = knots_[i], hi = knots_[i + 1];
      if (has_l && has_r) {
        if (std::abs(bl - br) < 1e-14) {
          const double mid = 0.5 * (lo + hi);
          if (al + bl * mid >= ar + br * mid)
            push_piece(al, bl, lo, hi);
          else
            push_piece(ar, br, lo, hi);
        } else {
          const double cross = (ar - al) / (bl - br);
          if (cross <= lo) {
            push_piece(ar, br, lo, hi);
          } else if (cross >= hi) {
            push_piece(al, bl, lo, hi);
          } else {
            push_piece(al, bl, lo, cross);
            push_piece(ar, br, cross, hi);
          }
        }
      } else if (has_l) {
        push_piece(al, bl, lo, hi);
      } else {
        push_piece(ar, br, lo, hi);
      }
    }
    secant(k - 1, k, a, b);
    push_piece(a, b, knots_[k], std::numeric_limits<double>::infinity());
    total_ = 0.0;
    for (const Piece& p : pieces_) total_ += p.mass;
    if (!(total_ > 0.0) || !std::isfinite(total_))
      throw SolveError("ars: degenerate envelope");
  }

  void insert_knot(double t, double v) {
    if (knots_.size() >= 64) return;
    const auto it = std::lower_bound(knots_.begin(), knots_.end(), t);
    const auto pos = static_cast<std::size_t>(it - knots_.begin());
    if (pos < knots_.size() && std::abs(knots_[pos] - t) < 1e-12) return;
    if (pos > 0 && std::abs(knots_[pos - 1] - t) < 1e-12) return;
    knots_.insert(it, t);
    vals_.insert(vals_.begin() + static_cast<std::ptrdiff_t>(pos), v);
    rebuild();
  }

  std::function<double(double)> psi_;
  std::vector<double> knots_, vals_;
  std::vector<Piece> pieces_;
  double shift_ = 0.0, total_ = 0.0;
};

// Inverse-CDF sampler on a fixed grid, for potentials that are not convex
// along lines.  Piecewise-constant density on 2048 cells of the auto box.
class GridCdf {
 public:
  GridCdf(const std::function<double(double)>& psi, double center, double scale) {
    const auto grid = gap1d::auto_grid1d(psi, 8, center, scale);
    lo_ = grid.lo;
    h_ = (grid.hi - grid.lo) / kCells;
    double shift = 1e300;
    std::array<double, kCells> raw{};
    for (int i = 0; i < kCells; ++i) {
      raw[static_cast<std::size_t>(i)] = psi(lo_ + (i + 0.5) * h_);
      shift = std::min(shift, raw[static_cast<std::size_t>(i)]);
    }
    cdf_.resize(kCells);
    double acc = 0.0;
    for (int i = 0; i < kCells; ++i) {
      acc += std::exp(-(raw[static_cast<std::size_t>(i)] - shift));
      cdf_[static_cast<std::size_t>(i)] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }

  double draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    const auto cell = static_cast<double>(it - cdf_.begin());
    return lo_ + (cell + rng.uniform()) * h_;
  }

 private:
  static constexpr int kCells = 2048;
  double lo_ = 0.0, h_ = 0.0;
  std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Direct samplers (exact draws)

Vector lp_ball_sample(Index n, double p, Rng& rng) {
  Vector g(n);
  for (Index i = 0; i < n; ++i) {
    const double mag = std::pow(rng.gamma(1.0 / p), 1.0 / p);
    g[i] = (rng.uniform() < 0.5 ? -mag : mag);
  }
  const double norm_p = std::pow(g.cwiseAbs().array().pow(p).sum(), 1.0 / p);
  const double radius = std::pow(rng.uniform(), 1.0 / static_cast<double>(n));
  return (radius / norm_p) * g;
}

Vector simplex_sample(const Matrix& vertices, Rng& rng) {
  const Index m = vertices.cols();
  Vector lambda(m);
  for (Index i = 0; i < m; ++i) lambda[i] = rng.exponential();
  lambda /= lambda.sum();
  return vertices * lambda;
}

// ---------------------------------------------------------------------------
// Hit-and-run

struct WalkTarget {
  Index dim = 0;  // state dimension (intrinsic)
  bool body = false;
  bool convex_lines = true;
  std::function<double(const Vector&)> potential;  // on states (non-body)
  std::function<bool(const Vector&)> member;       // on states (body)
  double bounding_radius = 0.0;
  std::function<Vector(const Vector&)> to_ambient;  // state -> sample row
};

WalkTarget make_walk_target(const MeasureModel& model) {
  WalkTarget t;
  if (model.kind == MeasureModel::Kind::Body) {
    t.dim = model.ambient_dim;
    t.body = true;
    t.member = model.member;
    t.bounding_radius = model.bounding_radius;
    t.to_ambient = [](const Vector& x) { return x; };
    return t;
  }
  if (model.kind == MeasureModel::Kind::Spin) {
    const Matrix basis = model.spin_basis;
    const Vector origin = model.spin_origin;
    const auto pot = model.potential;
    t.dim = model.intrinsic_dim;
    t.potential = [pot, basis, origin](const Vector& z) { return pot(origin + basis * z); };
    t.to_ambient = [basis, origin](const Vector& z) { return Vector(origin + basis * z); };
    t.convex_lines = model.spin_site.convex;
    return t;
  }
  t.dim = model.ambient_dim;
  t.potential = model.potential;
  t.to_ambient = [](const Vector& x) { return x; };
  t.convex_lines = model.convexity_floor >= 0.0;
  bool convex_factors = true;
  for (const auto& f : model.factors) convex_factors = convex_factors && f.convex;
  if (model.is_product) t.convex_lines = convex_factors;
  return t;
}

void hit_and_run_chain(const WalkTarget& target, Index burn, Index thin, Index keep,
                       Rng& rng, Matrix& out, Index first_row) {
  Vector state = Vector::Zero(target.dim);
  if (target.body && !target.member(state))
    throw ValidationError("hit-and-run: origin is not inside the body");
  Index kept = 0;
  const Index total_steps = burn + thin * keep;
  for (Index step = 0; step < total_steps; ++step) {
    const Vector dir = rng.sphere_direction(target.dim);
    double t = 0.0;
    if (target.body) {
      // Chord bracketing + bisection; the body sits inside its bounding ball.
      const double reach = 2.0 * target.bounding_radius + 1.0;
      auto inside = [&](double s) { return target.member(state + s * dir); };
      auto boundary = [&](double sign) {
        double in = 0.0, outp = sign * reach;
        for (int it = 0; it < 40; ++it) {
          const double mid = 0.5 * (in + outp);
          if (inside(mid))
            in = mid;
          else
            outp = mid;
        }
        return in;
      };
      const double lo = boundary(-1.0), hi = boundary(+1.0);
      t = lo + rng.uniform() * (hi - lo);
    } else {
      const Vector base = state;
      auto psi_line = [&](double s) { return target.potential(base + s * dir); };
      if (target.convex_lines) {
        Ars ars(psi_line, 0.0, 1.0);
        t = ars.draw(rng);
      } else {
        GridCdf cdf(psi_line, 0.0, 1.0);
        t = cdf.draw(rng);
      }
    }
    state += t * dir;
    if (step >= burn && (step - burn + 1) % thin == 0 && kept < keep) {
      out.row(first_row + kept) = target.to_ambient(state).transpose();
      ++kept;
    }
  }
  if (kept != keep) throw SolveError("hit-and-run: retained sample count mismatch");
}

}  // namespace

double sample_log_concave(const std::function<double(double)>& psi, Rng& rng, double center,
                          double scale) {
  Ars ars(psi, center, scale);
  return ars.draw(rng);
}

SampleBatch sample_model(const MeasureModel& model, const SamplerConfig& config) {
  if (config.samples < 2) throw ValidationError("sample_model: need at least 2 samples");
  const Index chains = std::max<Index>(1, config.chains);
  const Index per = (config.samples + chains - 1) / chains;
  const Index total = per * chains;
  const std::string family = family_of(model.name);

  SampleBatch batch;
  batch.samples.resize(total, model.ambient_dim);
  batch.chains = chains;

  // Exact direct samplers.
  bool direct = false;
  std::function<Vector(Rng&)> draw;
  if (model.is_gaussian) {
    direct = true;
    if (family == "gaussian" || family == "product") {
      draw = [&model](Rng& rng) { return rng.gaussian_vector(model.ambient_dim); };
    } else {
      Eigen::SelfAdjointEigenSolver<Matrix> es(model.gaussian_precision);
      const Matrix half = es.eigenvectors() *
                          es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                          es.eigenvectors().transpose();
      draw = [half, &model](Rng& rng) {
        return Vector(half * rng.gaussian_vector(model.ambient_dim));
      };
    }
  } else if (family == "cube") {
    direct = true;
    draw = [&model](Rng& rng) {
      Vector x(model.ambient_dim);
      for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
      return x;
    };
  } else if (family == "simplex-body") {
    direct = true;
    const Matrix verts = symmetry::simplex_vertices(model.ambient_dim);
    draw = [verts](Rng& rng) { return simplex_sample(verts, rng); };
  } else if (family == "lp-ball") {
    direct = true;
    const double p = std::stod(model.name.substr(model.name.rfind(':') + 1));
    draw = [&model, p](Rng& rng) { return lp_ball_sample(model.ambient_dim, p, rng); };
  } else if (family == "schatten-ball" &&
             std::abs(std::stod(model.name.substr(model.name.rfind(':') + 1)) - 2.0) <
                 1e-12) {
    direct = true;  // Schatten-2 ball is the Euclidean ball of R^{d*d}
    draw = [&model](Rng& rng) { return lp_ball_sample(model.ambient_dim, 2.0, rng); };
  } else if (model.kind == MeasureModel::Kind::Spin &&
             model.spin_site.name == "quadratic") {
    direct = true;  // gaussian conditioned on the hyperplane splits exactly
    draw = [&model](Rng& rng) {
      return Vector(model.spin_origin +
                    model.spin_basis * rng.gaussian_vector(model.intrinsic_dim));
    };
  }

  if (direct) {
    for (Index c = 0; c < chains; ++c) {
      Rng rng(config.seed, static_cast<std::uint64_t>(c + 1));
      for (Index s = 0; s < per; ++s) batch.samples.row(c * per + s) = draw(rng).transpose();
    }
    batch.exact = true;
    batch.method = "direct";
    return batch;
  }

  // Product measures: exact per-coordinate adaptive rejection when every
  // factor is convex, grid inverse-CDF otherwise.
  if (model.is_product) {
    bool convex = true;
    for (const auto& f : model.factors) convex = convex && f.convex;
    if (convex) {
      for (Index c = 0; c < chains; ++c) {
        Rng rng(config.seed, static_cast<std::uint64_t>(c + 1));
        std::vector<Ars> per_coord;
        per_coord.reserve(static_cast<std::size_t>(model.ambient_dim));
        for (Index i = 0; i < model.ambient_dim; ++i)
          per_coord.emplace_back(model.factors[static_cast<std::size_t>(i)].value, 0.0, 1.0);
        for (Index s = 0; s < per; ++s)
          for (Index i = 0; i < model.ambient_dim; ++i)
            batch.samples(c * per + s, i) = per_coord[static_cast<std::size_t>(i)].draw(rng);
      }
      batch.exact = true;
      batch.method = "ars-product";
      return batch;
    }
    for (Index c = 0; c < chains; ++c) {
      Rng rng(config.seed, static_cast<std::uint64_t>(c + 1));
      std::vector<GridCdf> per_coord;
      per_coord.reserve(static_cast<std::size_t>(model.ambient_dim));
      for (Index i = 0; i < model.ambient_dim; ++i)
        per_coord.emplace_back(model.factors[static_cast<std::size_t>(i)].value, 0.0, 1.0);
      for (Index s = 0; s < per; ++s)
        for (Index i = 0; i < model.ambient_dim; ++i)
          batch.samples(c * per + s, i) = per_coord[static_cast<std::size_t>(i)].draw(rng);
    }
    batch.exact = false;
    batch.method = "grid-cdf";
    return batch;
  }

  // General case: hit-and-run.
  const WalkTarget target = make_walk_target(model);
  const Index thin = config.thin > 0 ? config.thin : target.dim;
  const Index burn = config.burnin_factor * target.dim;
  for (Index c = 0; c < chains; ++c) {
    Rng rng(config.seed, static_cast<std::uint64_t>(c + 1));
    hit_and_run_chain(target, burn, thin, per, rng, batch.samples, c * per);
  }
  batch.exact = false;
  batch.method = target.body || target.convex_lines ? "hit-and-run" : "grid-cdf";
  return batch;
}

Matrix isotropize(const Matrix& samples, Matrix* transform, Vector* mean_out) {
  const Index n = samples.rows(), d = samples.cols();
  if (n < d + 2) throw ValidationError("isotropize: not enough samples");
  const Vector mean = samples.colwise().mean();
  Matrix centered = samples.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw ValidationError("isotropize: sample covariance is numerically singular");
  const Matrix t = es.eigenvectors() *
                   es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                   es.eigenvectors().transpose();
  if (transform) *transform = t;
  if (mean_out) *mean_out = mean;
  return centered * t;  // t is symmetric, so right-multiplying rows applies it
}

ValueWithError jackknife(const Vector& values,
                         const std::function<double(const Vector&)>& statistic,
                         Index blocks) {
  const Index n = values.size();
  if (n < 4) throw ValidationError("jackknife: need at least 4 values");
  const Index b = std::clamp<Index>(blocks, 2, n / 2);
  const double full = statistic(values);

  Vector leave_out(b);
  Index start = 0;
  for (Index k = 0; k < b; ++k) {
    const Index len = n / b + (k < n % b ? 1 : 0);
    Vector rest(n - len);
    if (start > 0) rest.head(start) = values.head(start);
    if (start + len < n) rest.tail(n - start - len) = values.tail(n - start - len);
    leave_out[k] = statistic(rest);
    start += len;
  }
  const double lo_mean = leave_out.mean();
  const double ss = (leave_out.array() - lo_mean).square().sum();
  const double se = std::sqrt(ss * static_cast<double>(b - 1) / static_cast<double>(b));
  return {full, se};
}

ValueWithError mean_estimate(const Vector& values, Index blocks) {
  return jackknife(values, [](const Vector& v) { return v.mean(); }, blocks);
}

ValueWithError variance_estimate(const Vector& values, Index blocks) {
  auto var = [](const Vector& v) {
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
  };
  return jackknife(values, var, blocks);
}

ValueWithError fourth_moment_ratio(const Vector& values, Index blocks) {
  auto ratio = [](const Vector& v) {
    const double m2 = v.array().square().mean();
    const double m4 = v.array().square().square().mean();
    return m4 / (m2 * m2);
  };
  return jackknife(values, ratio, blocks);
}

Vector evaluate(const Matrix& samples, const std::function<double(const Vector&)>& f) {
  Vector out(samples.rows());
  for (Index i = 0; i < samples.rows(); ++i) out[i] = f(samples.row(i).transpose());
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Matrix& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("write_csv: cannot open '" + path + "'");
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      q.push_back(c);
      if (c == '"') q.push_back('"');
    }
    q.push_back('"');
    return q;
  };
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << quote(header[i]);
  out << "\r\n";
  char buf[40];
  for (Index r = 0; r < rows.rows(); ++r) {
    for (Index c = 0; c < rows.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", rows(r, c));
      out << (c ? "," : "") << buf;
    }
    out << "\r\n";
  }
}

}  // namespace symvar::sampling
