#pragma once

// Photon-number distributions over a truncated Fock basis and the closed-form
// state families used as simulation truth, fit hypotheses and fidelity
// references.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "onoff/error.hpp"

namespace onoff {

/// Tolerance on Σρ_n = 1 accepted by the checked constructor.
inline constexpr double kNormalizationTolerance = 1e-9;
/// Truncated tail mass above which a constructor attaches a warning.
inline constexpr double kTailWarningThreshold = 1e-6;

/// Diagonal density-matrix elements ρ_0..ρ_N. Always nonnegative, unit sum,
/// at least one entry.
class PhotonDistribution {
 public:
  /// Checked constructor: entries must be finite, nonnegative and already sum
  /// to one within kNormalizationTolerance. Values are stored as given, so a
  /// distribution survives a decimal round trip bit for bit.
  explicit PhotonDistribution(std::vector<double> probs, std::string label = {})
      : probs_(std::move(probs)), label_(std::move(label)) {
    const double total = checked_sum(probs_);
    if (std::abs(total - 1.0) > kNormalizationTolerance) {
      throw DomainError("photon distribution sums to " + std::to_string(total) + ", expected 1");
    }
  }

  /// Rescales arbitrary nonnegative weights with positive sum to unit sum.
  static PhotonDistribution normalized(std::vector<double> weights, std::string label = {}) {
    const double total = checked_sum(weights);
    if (!(total > 0.0)) throw DomainError("photon distribution weights sum to zero");
    for (double& w : weights) w /= total;
    return PhotonDistribution(std::move(weights), std::move(label));
  }

  /// Builds from the values of an untruncated law on 0..N. The missing tail
  /// mass 1 − Σ is recorded and the vector is renormalized.
  static PhotonDistribution from_truncated_law(std::vector<double> law, std::string label) {
    const double kept = checked_sum(law);
    auto d = normalized(std::move(law), std::move(label));
    d.truncated_mass_ = std::max(0.0, 1.0 - kept);
    return d;
  }

  std::span<const double> probs() const noexcept { return probs_; }
  const std::vector<double>& vector() const noexcept { return probs_; }
  double operator[](std::size_t n) const { return probs_[n]; }
  std::size_t size() const noexcept { return probs_.size(); }
  /// Largest photon number N represented.
  std::size_t truncation() const noexcept { return probs_.size() - 1; }
  const std::string& label() const noexcept { return label_; }

  /// Probability mass of the closed-form law beyond N, discarded at construction.
  double truncated_mass() const noexcept { return truncated_mass_; }
  /// Non-empty when truncated_mass() exceeds kTailWarningThreshold.
  std::string warning() const {
    if (truncated_mass_ <= kTailWarningThreshold) return {};
    return "truncation at N=" + std::to_string(truncation()) + " discards tail mass " +
           std::to_string(truncated_mass_);
  }

  friend bool operator==(const PhotonDistribution& a, const PhotonDistribution& b) {
    return a.probs_ == b.probs_ && a.label_ == b.label_;
  }

 private:
  static double checked_sum(const std::vector<double>& v) {
    if (v.empty()) throw ShapeError("photon distribution needs at least one entry");
    double total = 0.0;
    for (double p : v) {
      if (!std::isfinite(p) || p < 0.0) throw DomainError("photon probabilities must be finite and nonnegative");
      total += p;
    }
    return total;
  }

  std::vector<double> probs_;
  std::string label_;
  double truncated_mass_ = 0.0;
};

// ---------------------------------------------------------------------------
// Closed-form families

inline PhotonDistribution make_fock(std::size_t n0, std::size_t truncation) {
  if (n0 > truncation) {
    throw TruncationError("Fock state |" + std::to_string(n0) + "> does not fit in truncation N=" +
                          std::to_string(truncation));
  }
  std::vector<double> probs(truncation + 1, 0.0);
  probs[n0] = 1.0;
  return PhotonDistribution(std::move(probs), "fock(" + std::to_string(n0) + ")");
}

/// Poisson law e^{-μ} μⁿ/n! on 0..N.
inline PhotonDistribution make_coherent(double mu, std::size_t truncation) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw DomainError("coherent mean photon number must be >= 0");
  std::vector<double> law(truncation + 1, 0.0);
  if (mu == 0.0) {
    law[0] = 1.0;
  } else {
    const double log_mu = std::log(mu);
    for (std::size_t n = 0; n <= truncation; ++n) {
      const double k = static_cast<double>(n);
      law[n] = std::exp(-mu + k * log_mu - std::lgamma(k + 1.0));
    }
  }
  return PhotonDistribution::from_truncated_law(std::move(law), "coherent(mu=" + std::to_string(mu) + ")");
}

namespace detail {

inline std::vector<double> multithermal_law(double mu, long modes, std::size_t truncation) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw DomainError("thermal mean photon number must be >= 0");
  if (modes < 1) throw DomainError("multithermal mode count must be >= 1");
  std::vector<double> law(truncation + 1, 0.0);
  if (mu == 0.0) {
    law[0] = 1.0;
    return law;
  }
  // log ρ_n by the ratio recurrence ρ_n/ρ_{n−1} = (n+M−1)/n · x/(1+x). Direct
  // lgamma differences lose ~1e-11 relative accuracy once M is in the thousands.
  const double m = static_cast<double>(modes);
  const double x = mu / m;
  const double log_ratio = std::log(x) - std::log1p(x);
  double log_p = -m * std::log1p(x);
  law[0] = std::exp(log_p);
  for (std::size_t n = 1; n <= truncation; ++n) {
    const double k = static_cast<double>(n);
    log_p += std::log1p((m - 1.0) / k) + log_ratio;
    law[n] = std::exp(log_p);
  }
  return law;
}

}  // namespace detail

/// M equally populated thermal modes with total mean μ:
/// ρ_n = C(n+M−1, n) (μ/M)ⁿ (1+μ/M)^{−(n+M)}, evaluated in log space so that
/// M in the thousands neither overflows nor underflows.
inline PhotonDistribution make_multithermal(double mu, long modes, std::size_t truncation) {
  return PhotonDistribution::from_truncated_law(
      detail::multithermal_law(mu, modes, truncation),
      "multithermal(mu=" + std::to_string(mu) + ",M=" + std::to_string(modes) + ")");
}

/// Single-mode thermal (Bose-Einstein) law, the M = 1 multithermal case.
inline PhotonDistribution make_thermal(double mu, std::size_t truncation) {
  return PhotonDistribution::from_truncated_law(detail::multithermal_law(mu, 1, truncation),
                                                "thermal(mu=" + std::to_string(mu) + ")");
}

inline constexpr double kMixtureWeightTolerance = 1e-12;

struct WeightedDistribution {
  double weight;
  PhotonDistribution distribution;
};

/// Convex combination Σ_k w_k d_k. Weights must be nonnegative and sum to one
/// within 1e-12; every component must share the same truncation.
inline PhotonDistribution make_mixture(std::span<const WeightedDistribution> components) {
  if (components.empty()) throw DomainError("mixture needs at least one component");
  const std::size_t size = components.front().distribution.size();
  double weight_sum = 0.0;
  for (const auto& c : components) {
    if (c.distribution.size() != size) throw ShapeError("mixture components have different truncations");
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight)) throw DomainError("mixture weights must be >= 0");
    weight_sum += c.weight;
  }
  if (std::abs(weight_sum - 1.0) > kMixtureWeightTolerance) {
    throw DomainError("mixture weights sum to " + std::to_string(weight_sum) + ", expected 1");
  }

  std::vector<double> probs(size, 0.0);
  double tail = 0.0;
  std::string label = "mixture(";
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    for (std::size_t n = 0; n < size; ++n) probs[n] += c.weight * c.distribution[n];
    tail += c.weight * c.distribution.truncated_mass();
    if (k > 0) label += " + ";
    label += std::to_string(c.weight) + "*" + c.distribution.label();
  }
  label += ")";
  // Σ probs is 1 up to rounding; scale so the recorded tail is the weighted
  // tail of the components.
  for (double& p : probs) p *= (1.0 - tail);
  return PhotonDistribution::from_truncated_law(std::move(probs), std::move(label));
}

inline PhotonDistribution make_mixture(std::initializer_list<WeightedDistribution> components) {
  return make_mixture(std::span<const WeightedDistribution>(components.begin(), components.size()));
}

// ---------------------------------------------------------------------------
// Functionals

inline double mean_photon_number(const PhotonDistribution& d) {
  double mean = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) mean += static_cast<double>(n) * d[n];
  return mean;
}

/// Bhattacharyya overlap G = Σ_n √(a_n b_n), in [0, 1], equal to 1 iff a = b.
inline double fidelity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("fidelity between distributions of sizes " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double g = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) g += std::sqrt(a[n] * b[n]);
  return std::clamp(g, 0.0, 1.0);
}

inline double fidelity(const PhotonDistribution& a, const PhotonDistribution& b) {
  return fidelity(a.probs(), b.probs());
}

}  // namespace onoff
