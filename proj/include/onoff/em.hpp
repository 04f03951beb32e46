#pragma once

// Maximum-likelihood reconstruction of ρ_n from on/off frequencies by
// Expectation-Maximization.
//
// The default update is the complete-data EM for the on/off model, where each
// run carries a hidden photon number n and produces a no-click with
// probability A_νn = (1−η_ν)ⁿ:
//
//   ρ_n ← ρ_n Σ_ν w_ν [ A_νn f_ν / p_ν + (1−A_νn)(1−f_ν) / (1−p_ν) ]
//
// with w_ν = n_ν / Σ n_λ. Every step keeps Σρ = 1, never decreases the
// binomial log-likelihood, and leaves ρ unchanged when p_ν = f_ν for all ν.
//
// UpdateRule::linpos is the classic multiplicative LINPOS update that uses only
// the no-click ratios, with column normalizer Σ_λ A_λn:
//
//   ρ_n ← ρ_n Σ_ν [ A_νn / Σ_λ A_λn ] f_ν / p_ν
//
// It shares the fixed point but is not monotone in the binomial likelihood.
//
// Both rules renormalize the iterate to unit sum after the update.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "onoff/distribution.hpp"
#include "onoff/error.hpp"
#include "onoff/forward_model.hpp"

namespace onoff {

enum class UpdateRule { binomial, linpos };

inline constexpr std::size_t kMaxTruncation = 200;
/// Floor applied to p_ν (and 1−p_ν) inside the ratio f_ν/p_ν.
inline constexpr double kProbabilityFloor = 1e-300;

struct EmConfig {
  std::size_t truncation = 8;
  std::uint64_t max_iterations = 1'000'000;
  /// Stop once ε ≤ tolerance. Unset means 1e-7·K.
  std::optional<double> epsilon_tolerance;
  /// Record a trace point every `trace_stride` iterations (plus the last one).
  std::uint64_t trace_stride = 1000;
  /// Starting distribution; uniform 1/(N+1) when unset.
  std::optional<PhotonDistribution> init;
  UpdateRule rule = UpdateRule::binomial;

  double tolerance_for(std::size_t rows) const {
    return epsilon_tolerance.value_or(1e-7 * static_cast<double>(rows));
  }

  void validate() const {
    if (truncation < 1 || truncation > kMaxTruncation) {
      throw TruncationError("truncation N must lie in [1, " + std::to_string(kMaxTruncation) + "]");
    }
    if (max_iterations < 1) throw DomainError("max_iterations must be >= 1");
    if (epsilon_tolerance && !(*epsilon_tolerance > 0.0)) throw DomainError("epsilon tolerance must be > 0");
    if (trace_stride < 1) throw DomainError("trace stride must be >= 1");
    if (init) {
      if (init->truncation() != truncation) throw ShapeError("initial distribution truncation differs from N");
      for (double p : init->probs()) {
        if (!(p > 0.0)) throw DomainError("initial distribution must be strictly positive");
      }
    }
  }
};

/// Frequencies plus per-row weights. Weights are the run counts n_ν for real
/// data and 1 for exact (noiseless) frequencies; they scale the binomial
/// log-likelihood and set the row mixing w_ν = weight_ν / Σ weight.
struct FrequencyData {
  EfficiencyGrid grid;
  std::vector<double> frequencies;
  std::vector<double> weights;

  static FrequencyData from_dataset(const OnOffDataset& data) {
    std::vector<double> w(data.size());
    for (std::size_t v = 0; v < data.size(); ++v) w[v] = static_cast<double>(data.total()[v]);
    return {data.grid(), data.frequencies(), std::move(w)};
  }

  static FrequencyData exact(const EfficiencyGrid& grid, std::vector<double> frequencies) {
    std::vector<double> w(frequencies.size(), 1.0);
    return {grid, std::move(frequencies), std::move(w)};
  }

  void validate() const {
    if (frequencies.size() != grid.size() || weights.size() != grid.size()) {
      throw ShapeError("frequency and weight vectors must match the efficiency grid");
    }
    for (std::size_t v = 0; v < grid.size(); ++v) {
      if (!(frequencies[v] >= 0.0 && frequencies[v] <= 1.0)) throw DomainError("frequency outside [0,1]");
      if (!(weights[v] > 0.0)) throw DomainError("row weights must be > 0");
    }
  }
};

struct TracePoint {
  std::uint64_t iteration = 0;
  double epsilon = 0.0;
  /// −∞ when the iterate assigns zero probability to an observed outcome.
  double log_likelihood = 0.0;
  std::optional<double> fidelity;
};

enum class StopReason { tolerance, iteration_cap };

struct ReconstructionResult {
  PhotonDistribution rho;
  EfficiencyGrid grid;
  std::uint64_t iterations_run = 0;
  double final_epsilon = 0.0;
  double tolerance = 0.0;
  bool converged = false;
  StopReason stop = StopReason::iteration_cap;
  std::vector<TracePoint> trace;
};

namespace detail {

/// 1 − (1−η)ⁿ without cancellation at small η.
inline double click_probability_given_n(double eta, std::size_t n) {
  if (eta >= 1.0) return n == 0 ? 0.0 : 1.0;
  return -std::expm1(static_cast<double>(n) * std::log1p(-eta));
}

/// Precomputed matrices and workspaces for one reconstruction.
class EmWorkspace {
 public:
  EmWorkspace(const ResponseMatrix& a, std::span<const double> f, std::span<const double> weights,
              UpdateRule rule)
      : a_(a), f_(f.begin(), f.end()), w_(weights.begin(), weights.end()), rule_(rule),
        clicks_(a.rows() * a.cols()), column_sums_(a.cols()), p_(a.rows()), q_(a.rows()),
        no_click_ratio_(a.rows()), click_ratio_(a.rows()) {
    if (f_.size() != a.rows() || w_.size() != a.rows()) throw ShapeError("frequency vector does not match grid");
    double total = 0.0;
    for (double w : w_) total += w;
    for (double& w : w_) w /= total;
    for (std::size_t v = 0; v < a.rows(); ++v) {
      for (std::size_t n = 0; n < a.cols(); ++n) {
        clicks_[v * a.cols() + n] = click_probability_given_n(a.grid()[v], n);
      }
    }
    for (std::size_t n = 0; n < a.cols(); ++n) column_sums_[n] = a.column_sum(n);
  }

  /// Fills p_ν = Σ A_νn ρ_n and q_ν = Σ (1−A_νn) ρ_n.
  void evaluate(std::span<const double> rho) {
    a_.apply(rho, p_);
    const std::size_t cols = a_.cols();
    for (std::size_t v = 0; v < a_.rows(); ++v) {
      const double* b = clicks_.data() + v * cols;
      double q = 0.0;
      for (std::size_t n = 0; n < cols; ++n) q += b[n] * rho[n];
      q_[v] = std::clamp(q, 0.0, 1.0);
    }
  }

  std::span<const double> p() const { return p_; }

  double total_error() const {
    double eps = 0.0;
    for (std::size_t v = 0; v < p_.size(); ++v) eps += std::abs(f_[v] - p_[v]);
    return eps;
  }

  /// Σ_ν weight_ν [f ln p + (1−f) ln(1−p)] with the caller's unnormalized weights.
  static double log_likelihood(std::span<const double> p, std::span<const double> q, std::span<const double> f,
                               std::span<const double> weights) {
    double ll = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
      const double no_click = weights[v] * f[v];
      const double click = weights[v] * (1.0 - f[v]);
      if (no_click > 0.0) {
        if (p[v] <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += no_click * std::log(p[v]);
      }
      if (click > 0.0) {
        if (q[v] <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += click * std::log(q[v]);
      }
    }
    return ll;
  }

  /// One multiplicative update of `rho` (in place) from the current p, q.
  void update(std::span<double> rho) {
    const std::size_t rows = a_.rows();
    const std::size_t cols = a_.cols();
    for (std::size_t v = 0; v < rows; ++v) {
      no_click_ratio_[v] = ratio(f_[v], p_[v], v, "no-click");
      click_ratio_[v] = rule_ == UpdateRule::binomial ? ratio(1.0 - f_[v], q_[v], v, "click") : 0.0;
    }
    double total = 0.0;
    for (std::size_t n = 0; n < cols; ++n) {
      if (rho[n] == 0.0) continue;
      double factor = 0.0;
      if (rule_ == UpdateRule::binomial) {
        for (std::size_t v = 0; v < rows; ++v) {
          factor += w_[v] * (a_(v, n) * no_click_ratio_[v] + clicks_[v * cols + n] * click_ratio_[v]);
        }
      } else if (column_sums_[n] > 0.0) {
        for (std::size_t v = 0; v < rows; ++v) factor += a_(v, n) * no_click_ratio_[v];
        factor /= column_sums_[n];
      } else {
        factor = 1.0;  // component invisible at every efficiency
      }
      rho[n] *= factor;
      total += rho[n];
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw DegeneracyError("EM iterate collapsed to zero mass");
    for (double& r : rho) r /= total;
  }

  double log_likelihood(std::span<const double> weights) const { return log_likelihood(p_, q_, f_, weights); }

 private:
  static double ratio(double observed, double predicted, std::size_t row, const char* kind) {
    if (observed <= 0.0) return 0.0;
    if (predicted <= 0.0) {
      throw DegeneracyError(std::string("row ") + std::to_string(row) + ": " + kind +
                            " events observed but the current iterate predicts probability 0");
    }
    return observed / std::max(predicted, kProbabilityFloor);
  }

  const ResponseMatrix& a_;
  std::vector<double> f_;
  std::vector<double> w_;
  UpdateRule rule_;
  std::vector<double> clicks_;
  std::vector<double> column_sums_;
  std::vector<double> p_;
  std::vector<double> q_;
  std::vector<double> no_click_ratio_;
  std::vector<double> click_ratio_;
};

}  // namespace detail

/// One EM step followed by renormalization. `weights` defaults to equal rows.
inline PhotonDistribution em_step(const PhotonDistribution& rho, const ResponseMatrix& a,
                                  std::span<const double> f, std::span<const double> weights = {},
                                  UpdateRule rule = UpdateRule::binomial) {
  if (rho.size() != a.cols()) throw ShapeError("distribution size does not match response matrix");
  const std::vector<double> equal(a.rows(), 1.0);
  detail::EmWorkspace ws(a, f, weights.empty() ? std::span<const double>(equal) : weights, rule);
  std::vector<double> next(rho.probs().begin(), rho.probs().end());
  ws.evaluate(next);
  ws.update(next);
  return PhotonDistribution::normalized(std::move(next), "em iterate");
}

/// ε = Σ_ν |f_ν − p_ν[ρ]|, summed over the K dataset rows.
inline double total_error(std::span<const double> rho, const ResponseMatrix& a, std::span<const double> f) {
  if (f.size() != a.rows()) throw ShapeError("frequency vector does not match response matrix");
  const auto p = a.apply(rho);
  double eps = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) eps += std::abs(f[v] - p[v]);
  return eps;
}

inline double total_error(const PhotonDistribution& rho, const ResponseMatrix& a, std::span<const double> f) {
  return total_error(rho.probs(), a, f);
}

/// Weighted binomial log-likelihood Σ_ν weight_ν [f_ν ln p_ν + (1−f_ν) ln(1−p_ν)].
/// Returns −∞ when an observed outcome has zero predicted probability.
inline double log_likelihood(std::span<const double> rho, const EfficiencyGrid& grid, std::span<const double> f,
                             std::span<const double> weights) {
  if (f.size() != grid.size() || weights.size() != grid.size()) throw ShapeError("row vectors do not match grid");
  std::vector<double> p(grid.size());
  std::vector<double> q(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v) {
    double pv = 0.0;
    double qv = 0.0;
    const double transmission = 1.0 - grid[v];
    double power = 1.0;
    for (std::size_t n = 0; n < rho.size(); ++n) {
      pv += power * rho[n];
      qv += detail::click_probability_given_n(grid[v], n) * rho[n];
      power *= transmission;
    }
    p[v] = std::clamp(pv, 0.0, 1.0);
    q[v] = std::clamp(qv, 0.0, 1.0);
  }
  return detail::EmWorkspace::log_likelihood(p, q, f, weights);
}

/// Binomial log-likelihood Σ_ν [n_0ν ln p_ν + (n_ν − n_0ν) ln(1 − p_ν)], constants dropped.
inline double log_likelihood(const PhotonDistribution& rho, const OnOffDataset& data) {
  const auto fd = FrequencyData::from_dataset(data);
  return log_likelihood(rho.probs(), fd.grid, fd.frequencies, fd.weights);
}

/// Iterates the EM update from `config.init` until ε ≤ tolerance or the
/// iteration cap. Trace points are recorded at iteration 0, every
/// `trace_stride` iterations and at the final iterate.
inline ReconstructionResult reconstruct(const FrequencyData& data, const EmConfig& config,
                                        const std::optional<PhotonDistribution>& reference = std::nullopt) {
  config.validate();
  data.validate();
  const std::size_t cols = config.truncation + 1;
  if (reference && reference->size() != cols) throw ShapeError("reference truncation differs from N");

  const ResponseMatrix a(data.grid, config.truncation);
  detail::EmWorkspace ws(a, data.frequencies, data.weights, config.rule);
  const double tolerance = config.tolerance_for(data.grid.size());

  std::vector<double> rho = config.init ? config.init->vector()
                                        : std::vector<double>(cols, 1.0 / static_cast<double>(cols));
  std::vector<TracePoint> trace;
  const auto record = [&](std::uint64_t iteration, double eps) {
    TracePoint t{iteration, eps, ws.log_likelihood(data.weights), std::nullopt};
    if (reference) t.fidelity = fidelity(rho, reference->probs());
    trace.push_back(t);
  };

  std::uint64_t iteration = 0;
  ws.evaluate(rho);
  double eps = ws.total_error();
  bool converged = false;
  for (;;) {
    const bool stop_tol = eps <= tolerance;
    const bool stop_cap = iteration >= config.max_iterations;
    if (iteration % config.trace_stride == 0 || stop_tol || stop_cap) record(iteration, eps);
    if (stop_tol) {
      converged = true;
      break;
    }
    if (stop_cap) break;
    ws.update(rho);
    ++iteration;
    ws.evaluate(rho);
    eps = ws.total_error();
  }

  return ReconstructionResult{PhotonDistribution::normalized(std::move(rho), "reconstruction"),
                              data.grid,
                              iteration,
                              eps,
                              tolerance,
                              converged,
                              converged ? StopReason::tolerance : StopReason::iteration_cap,
                              std::move(trace)};
}

inline ReconstructionResult reconstruct(const OnOffDataset& data, const EmConfig& config,
                                        const std::optional<PhotonDistribution>& reference = std::nullopt) {
  return reconstruct(FrequencyData::from_dataset(data), config, reference);
}

/// Truncation heuristic: estimate μ from the data as if the state were coherent
/// (p_0 = e^{−ημ}, so μ ≈ −ln f_ν / η_ν, largest over rows), then take the
/// smallest N whose Poisson(μ) tail beyond N is below 1e-8. Never below 8.
inline std::size_t suggest_truncation(const OnOffDataset& data) {
  double mu = 0.0;
  const auto f = data.frequencies();
  for (std::size_t v = 0; v < data.size(); ++v) {
    const double eta = data.grid()[v];
    if (eta <= 0.0) continue;
    // One no-click event stands in for f = 0 so the logarithm stays finite.
    const double fv = std::max(f[v], 1.0 / static_cast<double>(data.total()[v] + 1));
    mu = std::max(mu, -std::log(fv) / eta);
  }
  std::size_t n = 8;
  for (; n < kMaxTruncation; ++n) {
    if (make_coherent(mu, n).truncated_mass() < 1e-8) break;
  }
  return n;
}

}  // namespace onoff
