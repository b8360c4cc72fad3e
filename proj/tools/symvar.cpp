// symvar — scenario-driven verification of symmetry-aware variance bounds.
//
// Verbs:
//   verify   run a scenario (file or built-in name), print the bound table,
//            write <name>.csv / <name>.json (+ <name>-spin.csv) next to the
//            input or into --out-dir
//   gap1d    one-dimensional spectral gaps: conditioned spin scans (--m-grid)
//            or a single potential on a grid (--grid)
//   group    reflection group diagnostics: order, Cayley gap, decomposition
//   sample   draw samples from a model and write them as CSV
//   list     catalog of built-in scenarios, models and groups
//
// Exit codes: 0 success (all bounds verified/consistent), 2 a bound came out
// violated, 3 configuration error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "symvar/bounds.hpp"
#include "symvar/gap1d.hpp"
#include "symvar/measures.hpp"
#include "symvar/sampling.hpp"
#include "symvar/scenario.hpp"
#include "symvar/symmetry.hpp"

namespace {

using namespace symvar;

constexpr const char* kModelCatalog[][2] = {
    {"gaussian:n", "standard gaussian on R^n"},
    {"corr-gaussian:n:rho", "gaussian with covariance (1-rho)I + rho 11^T"},
    {"cube:n", "uniform on [-1,1]^n"},
    {"simplex-body:n", "uniform on the regular simplex, unit circumradius"},
    {"lp-ball:n:p", "uniform on the unit l_p ball"},
    {"schatten-ball:d:p", "uniform on the unit Schatten-p ball in R^{d*d}"},
    {"product:n:V", "product of n copies of catalog potential V"},
    {"coupled:n:V:eps", "sum V(x_i) + eps sum_{i<j} x_i x_j"},
    {"spin:n:m:V", "product potential V conditioned on {sum x_i = n m}"},
    {"radial-quartic:n", "|x|^4/4 + |x|^2/2"},
    {"dented-radial:n:beta", "|x|^4/4 + |x|^2/2 + beta sum x_i^4/4"},
    {"square-sym-2d", "(x^4+y^4)/4 + (x^2+y^2)/2 + x^2 y^2/2"},
    {"prod-gauss-quartic-2d", "x^2/2 + y^4"},
};

constexpr const char* kGroupCatalog[][2] = {
    {"unconditional:n", "coordinate sign flips"},
    {"simplex:n", "reflections of the regular simplex (S_{n+1})"},
    {"dihedral:k", "mirror reflections of the regular k-gon"},
    {"dihedral-rotations:k", "rotations of the regular k-gon"},
    {"schatten-rows:d", "row sign flips of d x d matrices"},
    {"exchangeable:n", "coordinate transpositions"},
};

constexpr const char* kPotentialCatalog[][2] = {
    {"quadratic", "t^2/2"},
    {"quartic", "t^4"},
    {"abs", "|t|"},
    {"double-well:a", "(t^2 - a^2)^2"},
    {"perturbed:eps", "t^2/2 + eps cos t"},
};

struct CommonFlags {
  std::uint64_t seed = 0;
  Index samples = 0;
  Index chains = 0;
  std::string out_dir;
  std::vector<std::string> constants;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "Override the scenario seed");
  cmd->add_option("--samples", flags.samples, "Override the sample count");
  cmd->add_option("--chains", flags.chains, "Override the chain count");
  cmd->add_option("--out-dir", flags.out_dir, "Directory for report files");
  cmd->add_option("--constants", flags.constants,
                  "Constant overrides as key=value (repeatable)");
}

std::pair<std::string, double> parse_constant(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw scenario::ConfigError("--constants expects key=value, got '" + kv + "'");
  }
  try {
    return {kv.substr(0, eq), std::stod(kv.substr(eq + 1))};
  } catch (const std::exception&) {
    throw scenario::ConfigError("--constants value is not a number in '" + kv + "'");
  }
}

std::string fixed(double v, int width = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%*.6g", width, v);
  return buf;
}

int run_verify(const std::string& spec, const CommonFlags& flags) {
  scenario::Scenario sc = scenario::load_scenario(spec);
  if (flags.seed != 0) sc.seed = flags.seed;
  if (flags.samples != 0) sc.samples = flags.samples;
  if (flags.chains != 0) sc.chains = flags.chains;
  for (const auto& kv : flags.constants) {
    const auto [key, value] = parse_constant(kv);
    sc.constants[key] = value;
  }

  const scenario::RunReport report = scenario::run_scenario(sc);

  std::string dir = flags.out_dir;
  if (dir.empty()) {
    if (scenario::is_builtin_scenario(spec)) {
      dir = ".";
    } else {
      dir = std::filesystem::path(spec).parent_path().string();
      if (dir.empty()) dir = ".";
    }
  }
  const auto paths = scenario::write_outputs(report, dir);

  std::printf("scenario %s  (seed %llu, %lld samples)\n", sc.name.c_str(),
              static_cast<unsigned long long>(sc.seed),
              static_cast<long long>(sc.samples));
  std::printf("%-36s %12s %12s %8s  %s\n", "bound", "lhs", "rhs", "ratio", "verdict");
  for (const auto& r : report.reports) {
    std::printf("%-36s %s %s %8.3f  %s\n", r.name.c_str(), fixed(r.lhs).c_str(),
                r.rhs_infinite ? "         inf" : fixed(r.rhs).c_str(), r.ratio(),
                bounds::to_string(r.verdict).c_str());
  }
  for (const auto& p : paths) std::printf("wrote %s\n", p.c_str());
  return report.exit_code;
}

int run_gap1d(const std::string& potential, const std::string& m_grid,
              const std::string& grid, Index resolution, const std::string& out) {
  const measures::ScalarPotential V = measures::scalar_potential(potential);

  if (!m_grid.empty()) {
    double lo = 0.0, hi = 0.0, step = 0.0;
    if (std::sscanf(m_grid.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0.0 ||
        hi < lo) {
      throw scenario::ConfigError("--m-grid expects lo:hi:step with step > 0");
    }
    std::vector<double> ms;
    for (double m = lo; m <= hi + 1e-12 * std::max(1.0, std::abs(hi)); m += step) {
      ms.push_back(m);
    }
    Matrix rows(static_cast<Index>(ms.size()), 4);
    for (Index i = 0; i < rows.rows(); ++i) {
      const double m = ms[static_cast<std::size_t>(i)];
      const double j = gap1d::spin_j(V.value, m);
      rows(i, 0) = m;
      rows(i, 1) = j;
      rows(i, 2) = j * j;
      rows(i, 3) = gap1d::two_site_gap(V.value, m, resolution);
    }
    if (out.empty()) {
      std::printf("m,J,J2,cP\n");
      for (Index i = 0; i < rows.rows(); ++i) {
        std::printf("%.17g,%.17g,%.17g,%.17g\n", rows(i, 0), rows(i, 1), rows(i, 2),
                    rows(i, 3));
      }
    } else {
      sampling::write_csv(out, {"m", "J", "J2", "cP"}, rows);
      std::printf("wrote %s\n", out.c_str());
    }
    return 0;
  }

  gap1d::Grid1D g;
  if (grid == "auto" || grid.empty()) {
    g = gap1d::auto_grid1d(V.value, resolution);
  } else {
    double lo = 0.0, hi = 0.0;
    long long n = 0;
    if (std::sscanf(grid.c_str(), "%lf:%lf:%lld", &lo, &hi, &n) != 3 || n < 3 || hi <= lo) {
      throw scenario::ConfigError("--grid expects lo:hi:n (or 'auto')");
    }
    g = gap1d::Grid1D{lo, hi, static_cast<Index>(n)};
  }
  const auto spec = gap1d::neumann_gap(V.value, g, {.eigenfunction = false});
  std::printf("potential        %s\n", potential.c_str());
  std::printf("grid             [%.17g, %.17g] with %lld nodes\n", g.lo, g.hi,
              static_cast<long long>(g.n));
  std::printf("lambda1          %.17g\n", spec.lambda1);
  std::printf("poincare         %.17g\n", spec.poincare_constant);
  std::printf("richardson_err   %.17g\n", spec.richardson_error);
  return 0;
}

int run_group(const std::string& family) {
  const auto gens = symmetry::builtin_generators(family);
  const symmetry::FiniteGroup group = symmetry::enumerate_group(gens);
  const symmetry::GeneratorSet genset = symmetry::conjugacy_close(gens, group);
  const symmetry::IdentityDecomposition dec = symmetry::identity_decomposition(genset);
  const symmetry::CayleyGap gap = symmetry::cayley_spectral_gap(group, genset);

  symmetry::GeneratorSet weighted = genset;
  weighted.orbit_weight.assign(static_cast<std::size_t>(genset.num_orbits),
                               gap.poincare_constant);
  const double kap = symmetry::kappa(dec, weighted);

  std::printf("group            %s\n", family.c_str());
  std::printf("order            %lld\n", static_cast<long long>(group.order()));
  std::printf("generators       %lld (closed under conjugation, %d orbits)\n",
              static_cast<long long>(genset.size()), genset.num_orbits);
  std::printf("cayley gap c_P   %.17g\n", gap.poincare_constant);
  std::printf("cayley lambda2   %.17g\n", gap.lambda2);
  std::printf("kappa            %.17g\n", kap);
  std::printf("decomposition    %lld terms, target dim %lld, residual %.3g\n",
              static_cast<long long>(dec.terms.size()),
              static_cast<long long>(dec.target.dim()), dec.residual);
  std::map<std::pair<double, Index>, Index> shape;
  for (const auto& t : dec.terms) shape[{t.coefficient, t.space.dim()}]++;
  for (const auto& [key, count] : shape) {
    std::printf("  %lld x {c = %.12g, dim = %lld}\n", static_cast<long long>(count),
                key.first, static_cast<long long>(key.second));
  }
  return 0;
}

int run_sample(const std::string& model_spec, std::uint64_t seed, Index samples,
               Index chains, Index burnin, Index thin, const std::string& out) {
  const measures::MeasureModel model = measures::make_model(model_spec);
  sampling::SamplerConfig cfg;
  if (seed != 0) cfg.seed = seed;
  if (samples != 0) cfg.samples = samples;
  if (chains != 0) cfg.chains = chains;
  if (burnin != 0) cfg.burnin_factor = burnin;
  if (thin != 0) cfg.thin = thin;
  const sampling::SampleBatch batch = sampling::sample_model(model, cfg);

  std::vector<std::string> header;
  for (Index c = 0; c < batch.samples.cols(); ++c) {
    header.push_back("x" + std::to_string(c + 1));
  }
  sampling::write_csv(out, header, batch.samples);
  std::printf("model   %s\n", model.name.c_str());
  std::printf("method  %s (%s)\n", batch.method.c_str(),
              batch.exact ? "exact" : "markov chain");
  std::printf("wrote   %s (%lld rows)\n", out.c_str(),
              static_cast<long long>(batch.samples.rows()));
  return 0;
}

int run_list(const std::string& filter) {
  const auto match = [&](const std::string& name) {
    return filter.empty() || name.find(filter) != std::string::npos;
  };
  bool any = false;
  const auto names = scenario::builtin_scenarios(filter);
  if (!names.empty()) {
    std::printf("scenarios:\n");
    for (const auto& name : names) {
      std::printf("  %-28s %s\n", name.c_str(),
                  scenario::builtin_description(name).c_str());
    }
    any = true;
  }
  std::vector<std::pair<std::string, std::string>> models, groups;
  for (const auto& row : kModelCatalog) {
    if (match(row[0])) models.emplace_back(row[0], row[1]);
  }
  for (const auto& row : kGroupCatalog) {
    if (match(row[0])) groups.emplace_back(row[0], row[1]);
  }
  std::vector<std::pair<std::string, std::string>> potentials;
  for (const auto& row : kPotentialCatalog) {
    if (match(row[0])) potentials.emplace_back(row[0], row[1]);
  }
  if (!models.empty()) {
    std::printf("%smodels:\n", any ? "\n" : "");
    for (const auto& [name, desc] : models) {
      std::printf("  %-28s %s\n", name.c_str(), desc.c_str());
    }
    any = true;
  }
  if (!groups.empty()) {
    std::printf("%sgroups:\n", any ? "\n" : "");
    for (const auto& [name, desc] : groups) {
      std::printf("  %-28s %s\n", name.c_str(), desc.c_str());
    }
    any = true;
  }
  if (!potentials.empty()) {
    std::printf("%spotentials:\n", any ? "\n" : "");
    for (const auto& [name, desc] : potentials) {
      std::printf("  %-28s %s\n", name.c_str(), desc.c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symvar: numeric verification of symmetry-aware variance bounds"};
  app.require_subcommand(1);

  // verify
  auto* verify = app.add_subcommand("verify", "Run a scenario and report bounds");
  std::string verify_spec;
  CommonFlags verify_flags;
  verify->add_option("--scenario", verify_spec,
                     "Scenario file or built-in scenario name");
  verify->add_option("scenario", verify_spec, "Scenario file or built-in name");
  add_common(verify, verify_flags);

  // gap1d
  auto* gap = app.add_subcommand("gap1d", "One-dimensional spectral gaps");
  std::string gap_potential = "quadratic";
  std::string gap_mgrid, gap_grid;
  Index gap_resolution = 2049;
  std::string gap_out;
  gap->add_option("--potential", gap_potential, "Site potential (catalog name)");
  gap->add_option("--m-grid", gap_mgrid,
                  "Scan lo:hi:step of the conditioned pair measure; emits CSV");
  gap->add_option("--grid", gap_grid, "Grid lo:hi:n for a single solve, or 'auto'");
  gap->add_option("--resolution", gap_resolution, "Grid nodes for solves");
  gap->add_option("--out", gap_out, "CSV output path (default: stdout)");

  // group
  auto* grp = app.add_subcommand("group", "Reflection group diagnostics");
  std::string group_family;
  grp->add_option("--generators", group_family, "Generator family, e.g. dihedral:4")
      ->required();

  // sample
  auto* smp = app.add_subcommand("sample", "Draw samples from a model");
  std::string sample_model, sample_out = "samples.csv";
  std::uint64_t sample_seed = 0;
  Index sample_count = 0, sample_chains = 0, sample_burnin = 0, sample_thin = 0;
  smp->add_option("--model", sample_model, "Model descriptor")->required();
  smp->add_option("--samples", sample_count, "Total retained samples");
  smp->add_option("--seed", sample_seed, "RNG seed");
  smp->add_option("--chains", sample_chains, "Chain count");
  smp->add_option("--burnin", sample_burnin, "Burn-in factor (steps per dimension)");
  smp->add_option("--thin", sample_thin, "Steps between retained samples");
  smp->add_option("--out", sample_out, "CSV output path");

  // list
  auto* lst = app.add_subcommand("list", "List built-in scenarios, models, groups");
  std::string list_filter;
  lst->add_option("filter", list_filter, "Substring filter");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      if (verify_spec.empty()) {
        throw symvar::scenario::ConfigError("verify needs --scenario <file-or-name>");
      }
      return run_verify(verify_spec, verify_flags);
    }
    if (gap->parsed()) {
      return run_gap1d(gap_potential, gap_mgrid, gap_grid, gap_resolution, gap_out);
    }
    if (grp->parsed()) return run_group(group_family);
    if (smp->parsed()) {
      return run_sample(sample_model, sample_seed, sample_count, sample_chains,
                        sample_burnin, sample_thin, sample_out);
    }
    if (lst->parsed()) return run_list(list_filter);
  } catch (const symvar::scenario::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
