#pragma once

// Post-reconstruction statistics: per-element uncertainties, the Klyshko
// nonclassicality parameter, and reduced-χ² fits of state families to a
// reconstructed distribution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "onoff/distribution.hpp"
#include "onoff/em.hpp"
#include "onoff/error.hpp"
#include "onoff/forward_model.hpp"
#include "onoff/model_spec.hpp"

namespace onoff {

// ---------------------------------------------------------------------------
// Uncertainties

/// Terms with A_νn below this value are left out of the δρ_n average.
inline constexpr double kResponseFloor = 1e-6;

struct ExcludedTerm {
  std::size_t row;     // ν
  std::size_t photon;  // n
  friend bool operator==(const ExcludedTerm&, const ExcludedTerm&) = default;
};

struct UncertaintyReport {
  std::vector<double> delta_rho;
  /// Number of efficiency rows dropped for each n.
  std::vector<std::size_t> excluded_terms;
  std::vector<ExcludedTerm> excluded;
};

/// δρ_n = mean over retained ν of |p_ν[ρ] − f_ν| / A_νn. Rows with
/// A_νn < kResponseFloor are excluded and reported; the mean is over the
/// retained rows only.
inline UncertaintyReport confidence_intervals(std::span<const double> rho, const ResponseMatrix& a,
                                              std::span<const double> f) {
  if (rho.size() != a.cols()) throw ShapeError("distribution size does not match response matrix");
  if (f.size() != a.rows()) throw ShapeError("frequency vector does not match response matrix");
  const auto p = a.apply(rho);
  UncertaintyReport report{std::vector<double>(a.cols(), 0.0), std::vector<std::size_t>(a.cols(), 0), {}};
  for (std::size_t n = 0; n < a.cols(); ++n) {
    double sum = 0.0;
    std::size_t kept = 0;
    for (std::size_t v = 0; v < a.rows(); ++v) {
      const double amp = a(v, n);
      if (amp < kResponseFloor) {
        ++report.excluded_terms[n];
        report.excluded.push_back({v, n});
        continue;
      }
      sum += std::abs(p[v] - f[v]) / amp;
      ++kept;
    }
    if (kept == 0) {
      throw UndefinedError("uncertainty of rho_" + std::to_string(n) +
                           " is undefined: every efficiency row falls below the response floor");
    }
    report.delta_rho[n] = sum / static_cast<double>(kept);
  }
  return report;
}

inline UncertaintyReport confidence_intervals(const ReconstructionResult& result, const OnOffDataset& data) {
  if (!(result.grid == data.grid())) throw ShapeError("reconstruction and dataset use different efficiency grids");
  const ResponseMatrix a(data.grid(), result.rho.truncation());
  return confidence_intervals(result.rho.probs(), a, data.frequencies());
}

// ---------------------------------------------------------------------------
// Klyshko parameter

/// K_n = (n+1) p_{n−1} p_{n+1} / (n p_n²). K_n < 1 witnesses nonclassical light.
inline double klyshko(std::span<const double> p, std::size_t n) {
  if (p.size() < 3 || n < 1 || n + 1 >= p.size()) {
    throw DomainError("Klyshko index n=" + std::to_string(n) + " needs 1 <= n <= N-1");
  }
  if (!(p[n] > 0.0)) throw UndefinedError("Klyshko K_" + std::to_string(n) + " undefined: p_n = 0");
  const double k = static_cast<double>(n);
  return (k + 1.0) * p[n - 1] * p[n + 1] / (k * p[n] * p[n]);
}

inline double klyshko(const PhotonDistribution& p, std::size_t n) { return klyshko(p.probs(), n); }

struct KlyshkoEstimate {
  double value = 0.0;
  double uncertainty = 0.0;
};

/// First-order propagation with independent δρ:
/// δK/K = √[(δρ_{n−1}/ρ_{n−1})² + (δρ_{n+1}/ρ_{n+1})² + 4(δρ_n/ρ_n)²].
inline KlyshkoEstimate klyshko_with_uncertainty(std::span<const double> p, std::span<const double> delta,
                                                std::size_t n) {
  if (delta.size() != p.size()) throw ShapeError("uncertainty vector does not match distribution");
  const double value = klyshko(p, n);
  for (std::size_t j = n - 1; j <= n + 1; ++j) {
    if (!(p[j] > 0.0)) throw UndefinedError("Klyshko uncertainty undefined: rho_" + std::to_string(j) + " = 0");
  }
  const double lo = delta[n - 1] / p[n - 1];
  const double hi = delta[n + 1] / p[n + 1];
  const double mid = delta[n] / p[n];
  return {value, value * std::sqrt(lo * lo + hi * hi + 4.0 * mid * mid)};
}

inline KlyshkoEstimate klyshko_with_uncertainty(const PhotonDistribution& p, const UncertaintyReport& delta,
                                                std::size_t n) {
  return klyshko_with_uncertainty(p.probs(), delta.delta_rho, n);
}

// ---------------------------------------------------------------------------
// χ² model fits

struct FitGrid {
  /// Search range of the mean photon number of the fitted family.
  double mu_min = 1e-6;
  double mu_max = 20.0;
  /// Mode counts scanned for the multithermal family.
  std::vector<long> modes = {1};
  /// Weights w of the base family for background fits; {1} disables the background.
  std::vector<double> weights = {1.0};
  double background_mu_min = 1e-6;
  double background_mu_max = 20.0;
  /// Points of the log-spaced scan that brackets each golden-section search.
  std::size_t coarse_points = 64;
  /// Relative width at which golden-section stops.
  double relative_tolerance = 1e-10;
};

struct FittedParameters {
  std::optional<std::size_t> n0;
  std::optional<double> mu;
  std::optional<long> modes;
  std::optional<double> weight;
  std::optional<double> background_mu;
};

/// One hypothesis evaluated during a scan (fixed M and w, optimized means).
struct ScanPoint {
  FittedParameters parameters;
  double chi_square = 0.0;
  double reduced_chi_square = 0.0;
};

struct FitSummary {
  ModelSpec model;
  FittedParameters fitted_parameters;
  double chi_square = 0.0;
  double reduced_chi_square = 0.0;
  long degrees_of_freedom = 0;
  std::vector<ScanPoint> scan;
};

namespace detail {

inline void check_fit_inputs(std::span<const double> rho, std::span<const double> delta) {
  if (delta.size() != rho.size()) throw ShapeError("uncertainty vector does not match distribution");
  for (std::size_t n = 0; n < delta.size(); ++n) {
    if (!(delta[n] > 0.0) || !std::isfinite(delta[n])) {
      throw IllPosedFitError("chi-square fit needs finite positive uncertainties; delta_rho_" + std::to_string(n) +
                             " = " + std::to_string(delta[n]));
    }
  }
}

inline double chi_square(std::span<const double> rho, std::span<const double> delta, std::span<const double> model) {
  double chi2 = 0.0;
  for (std::size_t n = 0; n < rho.size(); ++n) {
    const double r = (rho[n] - model[n]) / delta[n];
    chi2 += r * r;
  }
  return chi2;
}

struct Minimum {
  double x;
  double value;
};

/// Minimizes `f` on [lo, hi]: log-spaced scan (lowest index wins ties), then
/// golden-section inside the bracket around the best scan point.
inline Minimum minimize_scalar(const std::function<double(double)>& f, double lo, double hi, std::size_t points,
                               double rel_tol) {
  if (!(lo > 0.0 && hi > lo)) throw DomainError("search range must satisfy 0 < lo < hi");
  points = std::max<std::size_t>(points, 3);
  std::vector<double> xs(points);
  const double log_lo = std::log(lo);
  const double step = (std::log(hi) - log_lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) xs[i] = std::exp(log_lo + step * static_cast<double>(i));
  xs.front() = lo;
  xs.back() = hi;

  std::size_t best = 0;
  double best_value = f(xs[0]);
  for (std::size_t i = 1; i < points; ++i) {
    const double value = f(xs[i]);
    if (value < best_value) {
      best = i;
      best_value = value;
    }
  }

  double a = xs[best == 0 ? 0 : best - 1];
  double b = xs[best + 1 == points ? best : best + 1];
  constexpr double kInvPhi = 0.6180339887498949;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int iter = 0; iter < 200 && (b - a) > rel_tol * std::max(std::abs(c), lo); ++iter) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
  }
  Minimum m{xs[best], best_value};
  if (fc < m.value) m = {c, fc};
  if (fd < m.value) m = {d, fd};
  return m;
}

inline std::vector<double> family_probs(Family family, double mu, long modes, std::size_t truncation) {
  switch (family) {
    case Family::coherent: return make_coherent(mu, truncation).vector();
    case Family::thermal: return make_thermal(mu, truncation).vector();
    case Family::multithermal: return make_multithermal(mu, modes, truncation).vector();
    default: throw DomainError("family '" + std::string(to_string(family)) + "' has no continuous mean to fit");
  }
}

inline long degrees_of_freedom(std::size_t included, long parameters) {
  const long dof = static_cast<long>(included) - parameters;
  if (dof < 1) {
    throw IllPosedFitError("fit has " + std::to_string(dof) + " degrees of freedom; increase the truncation");
  }
  return dof;
}

inline ModelSpec base_spec(Family family, double mu, long modes, std::size_t truncation) {
  switch (family) {
    case Family::coherent: return ModelSpec::coherent(mu, truncation);
    case Family::thermal: return ModelSpec::thermal(mu, truncation);
    default: return ModelSpec::multithermal(mu, modes, truncation);
  }
}

inline std::vector<long> modes_for(Family family, const FitGrid& grid) {
  if (family != Family::multithermal) return {1};
  if (grid.modes.empty()) throw DomainError("multithermal fit needs a nonempty mode list");
  for (long m : grid.modes) {
    if (m < 1) throw DomainError("mode counts must be >= 1");
  }
  return grid.modes;
}

}  // namespace detail

/// Least-χ² fit of one state family to a reconstruction:
/// χ² = Σ_n (ρ_n − model_n)² / δρ_n². The mean μ is optimized continuously
/// for each scanned mode count; M is a scanned hypothesis, not a fitted
/// parameter, so every scan point has N+1−1 degrees of freedom. The fock family
/// scans n0 over 0..N with no fitted parameters.
inline FitSummary fit_model(std::span<const double> rho, std::span<const double> delta, Family family,
                            const FitGrid& grid = {}) {
  detail::check_fit_inputs(rho, delta);
  const std::size_t truncation = rho.size() - 1;
  FitSummary summary;

  if (family == Family::fock) {
    const long dof = detail::degrees_of_freedom(rho.size(), 0);
    std::optional<std::size_t> best;
    for (std::size_t n0 = 0; n0 <= truncation; ++n0) {
      const auto model = make_fock(n0, truncation).vector();
      const double chi2 = detail::chi_square(rho, delta, model);
      FittedParameters params;
      params.n0 = n0;
      summary.scan.push_back({params, chi2, chi2 / static_cast<double>(dof)});
      if (!best || chi2 < summary.scan[*best].chi_square) best = summary.scan.size() - 1;
    }
    const auto& b = summary.scan[*best];
    summary.model = ModelSpec::fock(*b.parameters.n0, truncation);
    summary.fitted_parameters = b.parameters;
    summary.chi_square = b.chi_square;
    summary.reduced_chi_square = b.reduced_chi_square;
    summary.degrees_of_freedom = dof;
    return summary;
  }
  if (family == Family::mixture) throw DomainError("use poisson_background_fit for mixture hypotheses");

  const long dof = detail::degrees_of_freedom(rho.size(), 1);
  std::optional<std::size_t> best;
  for (long modes : detail::modes_for(family, grid)) {
    const auto objective = [&](double mu) {
      return detail::chi_square(rho, delta, detail::family_probs(family, mu, modes, truncation));
    };
    const auto m = detail::minimize_scalar(objective, grid.mu_min, grid.mu_max, grid.coarse_points,
                                           grid.relative_tolerance);
    FittedParameters params;
    params.mu = m.x;
    if (family == Family::multithermal) params.modes = modes;
    summary.scan.push_back({params, m.value, m.value / static_cast<double>(dof)});
    if (!best || m.value < summary.scan[*best].chi_square) best = summary.scan.size() - 1;
  }
  const auto& b = summary.scan[*best];
  summary.model = detail::base_spec(family, *b.parameters.mu, b.parameters.modes.value_or(1), truncation);
  summary.fitted_parameters = b.parameters;
  summary.chi_square = b.chi_square;
  summary.reduced_chi_square = b.reduced_chi_square;
  summary.degrees_of_freedom = dof;
  return summary;
}

inline FitSummary fit_model(const PhotonDistribution& rho, const UncertaintyReport& delta, Family family,
                            const FitGrid& grid = {}) {
  return fit_model(rho.probs(), delta.delta_rho, family, grid);
}

/// Fit of w·base(μ[, M]) + (1−w)·coherent(μ_bg). For each scanned M and w the
/// two means are found by nested bracketed golden-section searches: the outer
/// one over μ minimizes the χ² already minimized over μ_bg.
/// Fitted parameters: μ, plus μ_bg when some w < 1, plus w when more than one
/// weight is scanned.
inline FitSummary poisson_background_fit(std::span<const double> rho, std::span<const double> delta,
                                         Family base_family, const FitGrid& grid = {}) {
  detail::check_fit_inputs(rho, delta);
  if (base_family != Family::coherent && base_family != Family::thermal && base_family != Family::multithermal) {
    throw DomainError("background fits need a coherent, thermal or multithermal base family");
  }
  if (grid.weights.empty()) throw DomainError("background fit needs a nonempty weight list");
  bool has_background = false;
  for (double w : grid.weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("background-fit weights must lie in [0,1]");
    if (w < 1.0) has_background = true;
  }
  const long parameters = 1 + (has_background ? 1 : 0) + (grid.weights.size() > 1 ? 1 : 0);
  const std::size_t truncation = rho.size() - 1;
  const long dof = detail::degrees_of_freedom(rho.size(), parameters);

  FitSummary summary;
  std::optional<std::size_t> best;
  std::vector<double> model(rho.size());
  for (long modes : detail::modes_for(base_family, grid)) {
    for (double w : grid.weights) {
      std::vector<double> base(rho.size());
      const auto set_base = [&](double mu) { base = detail::family_probs(base_family, mu, modes, truncation); };
      const auto chi2_with_background = [&](double mu_bg) {
        if (w < 1.0) {
          const auto bg = make_coherent(mu_bg, truncation).vector();
          for (std::size_t n = 0; n < model.size(); ++n) model[n] = w * base[n] + (1.0 - w) * bg[n];
        } else {
          std::copy(base.begin(), base.end(), model.begin());
        }
        return detail::chi_square(rho, delta, model);
      };
      const auto best_background = [&] {
        return detail::minimize_scalar(chi2_with_background, grid.background_mu_min, grid.background_mu_max,
                                       grid.coarse_points, grid.relative_tolerance);
      };

      double mu = grid.mu_min;
      double mu_bg = grid.background_mu_min;
      double value = std::numeric_limits<double>::infinity();
      if (w == 0.0) {
        set_base(mu);
        const auto m = best_background();
        mu_bg = m.x;
        value = m.value;
      } else if (w == 1.0) {
        const auto m = detail::minimize_scalar(
            [&](double x) {
              set_base(x);
              return chi2_with_background(mu_bg);
            },
            grid.mu_min, grid.mu_max, grid.coarse_points, grid.relative_tolerance);
        mu = m.x;
        value = m.value;
      } else {
        // Profile χ² over μ: the background mean is re-optimized for every μ.
        const auto m = detail::minimize_scalar(
            [&](double x) {
              set_base(x);
              return best_background().value;
            },
            grid.mu_min, grid.mu_max, grid.coarse_points, grid.relative_tolerance);
        mu = m.x;
        set_base(mu);
        const auto b = best_background();
        mu_bg = b.x;
        value = b.value;
      }

      FittedParameters params;
      if (w > 0.0) params.mu = mu;
      if (base_family == Family::multithermal && w > 0.0) params.modes = modes;
      params.weight = w;
      if (w < 1.0) params.background_mu = mu_bg;
      summary.scan.push_back({params, value, value / static_cast<double>(dof)});
      if (!best || value < summary.scan[*best].chi_square) best = summary.scan.size() - 1;
    }
  }

  const auto& b = summary.scan[*best];
  const double w = *b.parameters.weight;
  const double mu = b.parameters.mu.value_or(0.0);
  const long modes = b.parameters.modes.value_or(1);
  if (w == 1.0) {
    summary.model = detail::base_spec(base_family, mu, modes, truncation);
  } else {
    summary.model = ModelSpec::mixture({{w, detail::base_spec(base_family, mu, modes, truncation)},
                                        {1.0 - w, ModelSpec::coherent(*b.parameters.background_mu, truncation)}},
                                       truncation);
  }
  summary.fitted_parameters = b.parameters;
  summary.chi_square = b.chi_square;
  summary.reduced_chi_square = b.reduced_chi_square;
  summary.degrees_of_freedom = dof;
  return summary;
}

inline FitSummary poisson_background_fit(const PhotonDistribution& rho, const UncertaintyReport& delta,
                                         Family base_family, const FitGrid& grid = {}) {
  return poisson_background_fit(rho.probs(), delta.delta_rho, base_family, grid);
}

}  // namespace onoff
