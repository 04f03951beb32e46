#pragma once

// On/off detection model: no-click probability p_0(η) = Σ_n (1−η)ⁿ ρ_n, the
// response matrix A_νn = (1−η_ν)ⁿ over an efficiency grid, and Monte Carlo
// generation of no-click counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "onoff/distribution.hpp"
#include "onoff/error.hpp"

namespace onoff {

/// Quantum efficiencies η_1 < η_2 < ... < η_K, each in [0, 1].
class EfficiencyGrid {
 public:
  explicit EfficiencyGrid(std::vector<double> etas) : etas_(std::move(etas)) {
    if (etas_.empty()) throw ShapeError("efficiency grid is empty");
    for (std::size_t i = 0; i < etas_.size(); ++i) {
      const double eta = etas_[i];
      if (!(eta >= 0.0 && eta <= 1.0)) {
        throw DomainError("efficiency " + std::to_string(eta) + " outside [0,1]");
      }
      if (i > 0 && !(eta > etas_[i - 1])) throw DomainError("efficiencies must be strictly increasing");
    }
  }

  /// K points η_ν = η_max·ν/K, ν = 1..K, i.e. equally spaced in (0, η_max].
  /// With `include_zero` the K points span [0, η_max] instead.
  static EfficiencyGrid equally_spaced(std::size_t count, double eta_max, bool include_zero = false) {
    if (count == 0) throw ShapeError("efficiency grid needs at least one point");
    if (include_zero && count < 2) throw ShapeError("a grid starting at zero needs at least two points");
    std::vector<double> etas(count);
    for (std::size_t i = 0; i < count; ++i) {
      etas[i] = include_zero ? eta_max * static_cast<double>(i) / static_cast<double>(count - 1)
                             : eta_max * static_cast<double>(i + 1) / static_cast<double>(count);
    }
    return EfficiencyGrid(std::move(etas));
  }

  std::span<const double> etas() const noexcept { return etas_; }
  std::size_t size() const noexcept { return etas_.size(); }
  double operator[](std::size_t i) const { return etas_[i]; }

  friend bool operator==(const EfficiencyGrid&, const EfficiencyGrid&) = default;

 private:
  std::vector<double> etas_;
};

inline void check_efficiency(double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("efficiency " + std::to_string(eta) + " outside [0,1]");
}

/// p_0(η) = Σ_n (1−η)ⁿ ρ_n.
inline double no_click_probability(std::span<const double> probs, double eta) {
  check_efficiency(eta);
  const double transmission = 1.0 - eta;
  double power = 1.0;
  double p = 0.0;
  for (double rho : probs) {
    p += power * rho;
    power *= transmission;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double no_click_probability(const PhotonDistribution& d, double eta) {
  return no_click_probability(d.probs(), eta);
}

/// Dense K × (N+1) matrix A_νn = (1−η_ν)ⁿ, row-major.
class ResponseMatrix {
 public:
  ResponseMatrix(EfficiencyGrid grid, std::size_t truncation)
      : grid_(std::move(grid)), cols_(truncation + 1), entries_(grid_.size() * cols_) {
    if (truncation < 1) throw TruncationError("response matrix needs truncation N >= 1");
    for (std::size_t v = 0; v < grid_.size(); ++v) {
      const double transmission = 1.0 - grid_[v];
      double power = 1.0;
      for (std::size_t n = 0; n < cols_; ++n) {
        entries_[v * cols_ + n] = power;
        power *= transmission;
      }
    }
  }

  std::size_t rows() const noexcept { return grid_.size(); }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t truncation() const noexcept { return cols_ - 1; }
  const EfficiencyGrid& grid() const noexcept { return grid_; }

  double operator()(std::size_t v, std::size_t n) const { return entries_[v * cols_ + n]; }
  std::span<const double> row(std::size_t v) const { return {entries_.data() + v * cols_, cols_}; }

  /// p_ν = Σ_n A_νn ρ_n, summed in increasing n (same order as
  /// no_click_probability, so both agree bit for bit).
  void apply(std::span<const double> rho, std::span<double> out) const {
    if (rho.size() != cols_) throw ShapeError("distribution size does not match response matrix");
    if (out.size() != rows()) throw ShapeError("output size does not match response matrix");
    for (std::size_t v = 0; v < rows(); ++v) {
      const double* a = entries_.data() + v * cols_;
      double p = 0.0;
      for (std::size_t n = 0; n < cols_; ++n) p += a[n] * rho[n];
      out[v] = std::clamp(p, 0.0, 1.0);
    }
  }

  std::vector<double> apply(std::span<const double> rho) const {
    std::vector<double> p(rows());
    apply(rho, p);
    return p;
  }

  /// Σ_ν A_νn.
  double column_sum(std::size_t n) const {
    double s = 0.0;
    for (std::size_t v = 0; v < rows(); ++v) s += (*this)(v, n);
    return s;
  }

 private:
  EfficiencyGrid grid_;
  std::size_t cols_;
  std::vector<double> entries_;
};

/// No-click counts n_0ν out of n_ν runs at each efficiency η_ν.
class OnOffDataset {
 public:
  OnOffDataset(EfficiencyGrid grid, std::vector<std::uint64_t> no_click, std::vector<std::uint64_t> total)
      : grid_(std::move(grid)), no_click_(std::move(no_click)), total_(std::move(total)) {
    if (no_click_.size() != grid_.size() || total_.size() != grid_.size()) {
      throw ShapeError("dataset count vectors must match the efficiency grid length");
    }
    for (std::size_t v = 0; v < total_.size(); ++v) {
      if (total_[v] < 1) throw DomainError("row " + std::to_string(v) + ": total runs must be >= 1");
      if (no_click_[v] > total_[v]) {
        throw DomainError("row " + std::to_string(v) + ": no-click count exceeds total runs");
      }
    }
  }

  const EfficiencyGrid& grid() const noexcept { return grid_; }
  std::span<const std::uint64_t> no_click() const noexcept { return no_click_; }
  std::span<const std::uint64_t> total() const noexcept { return total_; }
  std::size_t size() const noexcept { return grid_.size(); }

  /// f_ν = n_0ν / n_ν.
  std::vector<double> frequencies() const {
    std::vector<double> f(size());
    for (std::size_t v = 0; v < size(); ++v) {
      f[v] = static_cast<double>(no_click_[v]) / static_cast<double>(total_[v]);
    }
    return f;
  }

  friend bool operator==(const OnOffDataset&, const OnOffDataset&) = default;

 private:
  EfficiencyGrid grid_;
  std::vector<std::uint64_t> no_click_;
  std::vector<std::uint64_t> total_;
};

/// Draws n_0ν ~ Binomial(n_ν, p_0(η_ν)). Each efficiency row uses its own
/// generator seeded from (seed, ν), so the result depends only on the inputs.
inline OnOffDataset simulate_dataset(const PhotonDistribution& d, const EfficiencyGrid& grid,
                                     std::span<const std::uint64_t> runs_per_eta, std::uint64_t seed) {
  if (runs_per_eta.size() != grid.size()) throw ShapeError("runs_per_eta must have one entry per efficiency");
  std::vector<std::uint64_t> no_click(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const std::uint64_t runs = runs_per_eta[v];
    if (runs < 1) throw DomainError("runs per efficiency must be >= 1");
    const double p = no_click_probability(d, grid[v]);
    if (p <= 0.0) {
      no_click[v] = 0;
    } else if (p >= 1.0) {
      no_click[v] = runs;
    } else {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v >> 32)};
      std::mt19937_64 engine(seq);
      std::binomial_distribution<std::uint64_t> draw(runs, p);
      no_click[v] = draw(engine);
    }
  }
  return OnOffDataset(grid, std::move(no_click),
                      std::vector<std::uint64_t>(runs_per_eta.begin(), runs_per_eta.end()));
}

inline OnOffDataset simulate_dataset(const PhotonDistribution& d, const EfficiencyGrid& grid,
                                     std::uint64_t runs_per_eta, std::uint64_t seed) {
  const std::vector<std::uint64_t> runs(grid.size(), runs_per_eta);
  return simulate_dataset(d, grid, runs, seed);
}

}  // namespace onoff
