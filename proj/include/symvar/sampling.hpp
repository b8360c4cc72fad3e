#pragma once

#include <functional>
#include <string>
#include <vector>

#include "symvar/measures.hpp"
#include "symvar/rng.hpp"
#include "symvar/types.hpp"

namespace symvar::sampling {

using measures::MeasureModel;

struct SamplerConfig {
  std::uint64_t seed = 1;
  Index chains = 4;
  Index samples = 4096;        // total retained samples across all chains
  Index burnin_factor = 1000;  // burn-in steps = factor * intrinsic dimension
  Index thin = 0;              // steps between retained samples; 0 -> intrinsic dim
  Index jackknife_blocks = 50;
};

struct SampleBatch {
  Matrix samples;      // one row per sample, ambient coordinates
  bool exact = false;  // true when drawn by an exact (non-MCMC) sampler
  std::string method;  // "direct", "ars-product", "hit-and-run", "grid-cdf"
  Index chains = 1;
};

// Draw samples from the model.  Product/gaussian/body families with exact
// samplers are drawn directly; everything else runs hit-and-run with an
// adaptive-rejection line sampler (grid inverse-CDF when the potential is
// not convex along lines).  Deterministic: chain c uses Rng(seed, c) and the
// output is assembled chain-major, independent of scheduling.
SampleBatch sample_model(const MeasureModel& model, const SamplerConfig& config);

// Exact sampler for one log-concave scalar potential via derivative-free
// adaptive rejection sampling (secant envelopes; no derivatives needed).
double sample_log_concave(const std::function<double(double)>& psi, Rng& rng,
                          double center = 0.0, double scale = 1.0);

// Center and whiten: returns samples * T^T with T = Cov^{-1/2} applied after
// centering.  If transform/mean are non-null they receive T and the mean.
Matrix isotropize(const Matrix& samples, Matrix* transform = nullptr,
                  Vector* mean = nullptr);

// Block jackknife for an arbitrary statistic of a sample vector.
ValueWithError jackknife(const Vector& values,
                         const std::function<double(const Vector&)>& statistic,
                         Index blocks = 50);

ValueWithError mean_estimate(const Vector& values, Index blocks = 50);
ValueWithError variance_estimate(const Vector& values, Index blocks = 50);
// Borell-style reverse Hoelder ratio  E h^4 / (E h^2)^2.
ValueWithError fourth_moment_ratio(const Vector& values, Index blocks = 50);

// Evaluate a scalar observable on every sample row.
Vector evaluate(const Matrix& samples, const std::function<double(const Vector&)>& f);

// RFC-4180 CSV writer (CRLF, quoting where required, 17 significant digits).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Matrix& rows);

}  // namespace symvar::sampling
