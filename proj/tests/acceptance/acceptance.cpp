// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Every simulated criterion uses seed 1.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "onoff/onoff.hpp"

namespace fs = std::filesystem;
using namespace onoff;

namespace {

constexpr std::uint64_t kSeed = 1;
int failures = 0;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << detail << std::endl;
}

std::string fmt(double x, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << x;
  return s.str();
}

/// Cramér–Rao bound on sd(ρ_target) for the binomial model when the support
/// of the truth is known: the free parameters are the nonzero ρ_n with n ≥ 1,
/// and ρ_0 = 1 − Σ of them. Used only as context for the printed verdict.
double cramer_rao_sd(const PhotonDistribution& truth, const EfficiencyGrid& grid, double runs, std::size_t target) {
  std::vector<std::size_t> free;
  for (std::size_t m = 1; m < truth.size(); ++m) {
    if (truth[m] > 0.0) free.push_back(m);
  }
  const std::size_t n = free.size();
  const ResponseMatrix a(grid, truth.truncation());
  const auto p = a.apply(truth.probs());
  std::vector<std::vector<double>> fisher(n, std::vector<double>(2 * n, 0.0));
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const double scale = runs / (p[v] * (1.0 - p[v]));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) fisher[i][j] += scale * (a(v, free[i]) - 1.0) * (a(v, free[j]) - 1.0);
    }
  }
  // Gauss–Jordan inverse.
  for (std::size_t i = 0; i < n; ++i) fisher[i][n + i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pivot = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(fisher[r][c]) > std::abs(fisher[pivot][c])) pivot = r;
    }
    std::swap(fisher[c], fisher[pivot]);
    const double d = fisher[c][c];
    for (double& x : fisher[c]) x /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double factor = fisher[r][c];
      for (std::size_t k = 0; k < 2 * n; ++k) fisher[r][k] -= factor * fisher[c][k];
    }
  }
  const auto at = static_cast<std::size_t>(std::find(free.begin(), free.end(), target) - free.begin());
  return std::sqrt(fisher[at][n + at]);
}

// ---------------------------------------------------------------------------

void coherent_end_to_end() {
  const auto truth = make_coherent(0.02, 8);
  const auto grid = EfficiencyGrid::equally_spaced(15, 0.66);
  const auto data = simulate_dataset(truth, grid, 1'000'000, kSeed);
  EmConfig config;
  config.truncation = 8;
  config.max_iterations = 100'000;
  const auto result = reconstruct(data, config);
  const double g = fidelity(result.rho, truth);
  report(1, g >= 0.999, "coherent state mu=0.02, K=15, n=1e6, N=8",
         "fidelity " + fmt(g, 9) + " (need >= 0.999), iterations " + std::to_string(result.iterations_run) +
             ", converged " + (result.converged ? "yes" : "no"));
}

void heralded_end_to_end() {
  const auto truth = make_distribution(heralded_photon_model(0.027, 0.0185, 6));
  const auto grid = EfficiencyGrid::equally_spaced(34, 0.20);
  const auto data = simulate_dataset(truth, grid, 1'000'000, kSeed);
  EmConfig config;
  config.truncation = 6;
  const auto result = reconstruct(data, config);
  const double rel = (result.rho[1] - truth[1]) / truth[1];
  const double k1 = klyshko(result.rho, 1);
  const bool pass = std::abs(rel) <= 0.01 && k1 < 1.0;
  report(2, pass, "heralded photon rho0=0.027, rho2=0.0185 rho1, K=34 in (0,0.2], n=1e6, N=6",
         "rho1 " + fmt(result.rho[1], 8) + " vs truth " + fmt(truth[1], 8) + ", relative error " + fmt(100.0 * rel, 4) +
             "% (need |.| <= 1%); K1 " + fmt(k1) + " (need < 1)");
  const double crb = cramer_rao_sd(truth, grid, 1e6, 1) / truth[1];
  std::cout << "    note: even with the support {0,1,2} known, the Cramer-Rao bound on sd(rho1)/rho1 at n=1e6 on "
            << "this grid is " << fmt(100.0 * crb, 3) << "%, so a 1% band cannot hold for every seed; "
            << "EM ran " << result.iterations_run << " iterations, epsilon " << fmt(result.final_epsilon) << std::endl;
}

void multithermal_mode_scan() {
  const auto truth = make_multithermal(0.74, 2, 12);
  const auto grid = EfficiencyGrid::equally_spaced(30, 0.66);
  const auto data = simulate_dataset(truth, grid, 1'000'000, kSeed);
  EmConfig config;
  config.truncation = 12;
  const auto result = reconstruct(data, config);
  const auto delta = confidence_intervals(result, data);
  FitGrid fit_grid;
  fit_grid.modes.clear();
  for (long m = 1; m <= 20; ++m) fit_grid.modes.push_back(m);
  fit_grid.modes.push_back(100);
  fit_grid.modes.push_back(500);
  const auto fit = fit_model(result.rho, delta, Family::multithermal, fit_grid);
  double chi500 = 0.0;
  for (const auto& s : fit.scan) {
    if (*s.parameters.modes == 500) chi500 = s.reduced_chi_square;
  }
  const long best = *fit.fitted_parameters.modes;
  report(3, best <= 10 && chi500 > fit.reduced_chi_square, "multithermal mu=0.74, M=2 mode scan",
         "best M " + std::to_string(best) + " (need <= 10), reduced chi2 best " + fmt(fit.reduced_chi_square) +
             ", M=500 " + fmt(chi500) + " (need M=500 > best)");
}

void forward_model_oracles() {
  double worst_coherent = 0.0;
  double worst_multithermal = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double eta = 0.1 * (i + 1);
    for (int j = 0; j < 10; ++j) {
      const double mu = 0.02 * std::pow(250.0, j / 9.0);  // 0.02 .. 5
      std::size_t n = 1;
      while (make_coherent(mu, n).truncated_mass() >= 1e-12 && n < 1000) ++n;
      worst_coherent = std::max(worst_coherent,
                                std::abs(no_click_probability(make_coherent(mu, n), eta) - oracle::coherent_no_click(mu, eta)));
      for (long modes : {2L, 10000L}) {
        std::size_t m = 1;
        while (make_multithermal(mu, modes, m).truncated_mass() >= 1e-12 && m < 1000) ++m;
        worst_multithermal =
            std::max(worst_multithermal, std::abs(no_click_probability(make_multithermal(mu, modes, m), eta) -
                                                  oracle::multithermal_no_click(mu, modes, eta)));
      }
    }
  }
  report(4, worst_coherent < 1e-9 && worst_multithermal < 1e-9,
         "no-click probability vs closed forms on a 10x10 (eta, mu) grid",
         "max deviation coherent " + fmt(worst_coherent, 3) + ", multithermal (M=2, 10000) " +
             fmt(worst_multithermal, 3) + " (need < 1e-9)");
}

void em_property_suite() {
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int ll_violations = 0;
  int norm_violations = 0;
  int negative = 0;
  int support_violations = 0;
  int low_fidelity = 0;
  double worst_fidelity = 1.0;
  double worst_ll_drop = 0.0;
  const int instances = 100;
  for (int t = 0; t < instances; ++t) {
    // N up to 4: at N = 5 the exact-data problem is conditioned badly enough
    // that EM needs far more than 1e6 iterations to reach the fidelity bound.
    const std::size_t n = 2 + rng() % 3;
    const std::size_t k = n + 1 + rng() % 8;
    auto probs = oracle::random_simplex(rng, n + 1);
    // One photon number outside the support of both the truth and the start.
    const std::size_t hole = 1 + rng() % n;
    probs[hole] = 0.0;
    const auto truth = PhotonDistribution::normalized(probs);
    std::vector<double> etas(k);
    for (std::size_t v = 0; v < k; ++v) etas[v] = 0.95 * (static_cast<double>(v) + 0.2 + 0.6 * u(rng)) / k;
    const EfficiencyGrid grid(etas);
    const ResponseMatrix a(grid, n);
    std::vector<double> f(k);
    for (std::size_t v = 0; v < k; ++v) f[v] = oracle::no_click(truth.vector(), etas[v]);
    // (1−η)ⁿ by std::pow, for an oracle likelihood independent of the library.
    std::vector<std::vector<double>> powers(k, std::vector<double>(n + 1));
    for (std::size_t v = 0; v < k; ++v) {
      for (std::size_t m = 0; m <= n; ++m) powers[v][m] = std::pow(1.0 - etas[v], static_cast<double>(m));
    }
    const auto oracle_ll = [&](const PhotonDistribution& r) {
      double ll = 0.0;
      for (std::size_t v = 0; v < k; ++v) {
        double p = 0.0;
        for (std::size_t m = 0; m <= n; ++m) p += powers[v][m] * r[m];
        ll += f[v] * std::log(p) + (1.0 - f[v]) * std::log1p(-p);
      }
      return ll;
    };

    std::vector<double> start(n + 1, 1.0 / static_cast<double>(n));
    start[hole] = 0.0;
    auto rho = PhotonDistribution::normalized(start);
    double ll = oracle_ll(rho);
    bool ll_ok = true;
    bool norm_ok = true;
    bool sign_ok = true;
    bool support_ok = true;
    for (int it = 0; it < 1'000'000; ++it) {
      rho = em_step(rho, a, f);
      const double next = oracle_ll(rho);
      if (next < ll - 1e-10) ll_ok = false;
      worst_ll_drop = std::max(worst_ll_drop, ll - next);
      ll = next;
      double sum = 0.0;
      for (double x : rho.vector()) {
        sum += x;
        if (x < 0.0) sign_ok = false;
      }
      if (std::abs(sum - 1.0) > 1e-12) norm_ok = false;
      if (rho[hole] != 0.0) support_ok = false;
      if (total_error(rho, a, f) <= 1e-12 * static_cast<double>(k)) break;
    }
    const double g = fidelity(rho, truth);
    worst_fidelity = std::min(worst_fidelity, g);
    ll_violations += !ll_ok;
    norm_violations += !norm_ok;
    negative += !sign_ok;
    support_violations += !support_ok;
    low_fidelity += g < 1.0 - 1e-6;
  }
  const bool pass = ll_violations + norm_violations + negative + support_violations + low_fidelity == 0;
  report(5, pass, "EM properties on 100 random exact-frequency instances",
         "likelihood decreases " + std::to_string(ll_violations) + " (largest step drop " + fmt(worst_ll_drop, 3) +
             "), normalization " + std::to_string(norm_violations) + ", negative " + std::to_string(negative) +
             ", support " + std::to_string(support_violations) + ", fidelity < 1-1e-6 " +
             std::to_string(low_fidelity) + " (worst " + fmt(1.0 - worst_fidelity, 3) + " below 1)");
}

void uncertainty_formula() {
  // Noiseless data at its exact fixed point.
  const PhotonDistribution truth({0.15, 0.45, 0.25, 0.1, 0.05});
  const ResponseMatrix a(EfficiencyGrid::equally_spaced(12, 0.8), 4);
  const auto f = a.apply(truth.probs());
  const auto step = em_step(truth, a, f);
  double step_change = 0.0;
  for (std::size_t n = 0; n < truth.size(); ++n) step_change = std::max(step_change, std::abs(step[n] - truth[n]));
  const auto exact = confidence_intervals(truth.probs(), a, f);
  double max_delta = 0.0;
  for (double d : exact.delta_rho) max_delta = std::max(max_delta, d);

  // Criterion-2 dataset, plus the same state measured on a grid that adds η = 1
  // so that exclusions actually occur.
  const auto heralded = make_distribution(heralded_photon_model(0.027, 0.0185, 6));
  const auto grid = EfficiencyGrid::equally_spaced(34, 0.20);
  const auto data = simulate_dataset(heralded, grid, 1'000'000, kSeed);
  EmConfig config;
  config.truncation = 6;
  const auto result = reconstruct(data, config);
  const auto noisy = confidence_intervals(result, data);

  std::vector<double> etas(grid.etas().begin(), grid.etas().end());
  etas.push_back(1.0);
  const EfficiencyGrid extended(etas);
  const ResponseMatrix ax(extended, 6);
  std::vector<double> fx(data.frequencies());
  fx.push_back(heralded[0]);
  const auto with_unit = confidence_intervals(result.rho.probs(), ax, fx);

  bool finite = true;
  for (const auto* r : {&noisy, &with_unit}) {
    for (double d : r->delta_rho) finite = finite && std::isfinite(d);
  }
  // Independent enumeration of the pairs that must be excluded.
  std::vector<ExcludedTerm> expected_main;
  std::vector<ExcludedTerm> expected_unit;
  for (std::size_t n = 0; n <= 6; ++n) {
    for (std::size_t v = 0; v < etas.size(); ++v) {
      const bool small = std::pow(1.0 - etas[v], static_cast<double>(n)) < 1e-6;
      if (small && v < grid.size()) expected_main.push_back({v, n});
      if (small) expected_unit.push_back({v, n});
    }
  }
  const bool reported = noisy.excluded == expected_main && with_unit.excluded == expected_unit;
  const bool retained = [&] {
    for (std::size_t n = 0; n <= 6; ++n) {
      if (noisy.excluded_terms[n] >= grid.size() || with_unit.excluded_terms[n] >= extended.size()) return false;
    }
    return true;
  }();
  report(6, step_change <= 1e-12 && max_delta == 0.0 && finite && reported && retained,
         "delta rho: zero on exact data, finite with exclusions reported on the heralded dataset",
         "fixed-point step change " + fmt(step_change, 3) + ", max delta on exact data " + fmt(max_delta, 3) +
             "; heralded delta finite " + (finite ? "yes" : "no") + ", excluded pairs " +
             std::to_string(noisy.excluded.size()) + " on the K=34 grid and " + std::to_string(with_unit.excluded.size()) +
             " with eta=1 added, all reported " + (reported ? "yes" : "no"));
}

void klyshko_identities() {
  double worst = 0.0;
  for (double mu : {0.02, 0.1, 0.5, 1.0, 2.0, 5.0}) {
    const auto poisson = make_coherent(mu, 60);
    const auto thermal = make_thermal(mu, 200);
    for (std::size_t n = 1; n <= 5; ++n) {
      worst = std::max(worst, std::abs(klyshko(poisson, n) - 1.0));
      worst = std::max(worst, std::abs(klyshko(thermal, n) - static_cast<double>(n + 1) / static_cast<double>(n)));
    }
  }
  report(7, worst <= 1e-12, "Klyshko K_n: Poisson = 1, thermal = (n+1)/n for n = 1..5",
         "max deviation " + fmt(worst, 3) + " (need <= 1e-12)");
}

int run_cli(const std::string& args) {
  const std::string command = std::string(ONOFF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism() {
  const auto dir = fs::temp_directory_path() / "onoff_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const auto base = (dir / run).string();
    ok = ok && run_cli("simulate --family multithermal --mu 0.74 --modes 2 -N 12 --K 15 --eta-max 0.66 --runs 1000000 "
                       "--seed 1 --out " + base + ".csv") == 0;
    ok = ok && run_cli("reconstruct --data " + base + ".csv -N 12 --max-iter 20000 --trace-stride 500 --out " + base +
                       ".json") == 0;
  }
  const bool csv_same = ok && slurp(dir / "a.csv") == slurp(dir / "b.csv");
  const bool json_same = ok && slurp(dir / "a.json") == slurp(dir / "b.json");
  const bool nonempty = ok && !slurp(dir / "a.json").empty();
  fs::remove_all(dir);
  report(8, ok && csv_same && json_same && nonempty, "byte-identical CLI outputs for identical seeds and flags",
         std::string("commands succeeded ") + (ok ? "yes" : "no") + ", dataset CSV identical " +
             (csv_same ? "yes" : "no") + ", result JSON identical " + (json_same ? "yes" : "no"));
}

}  // namespace

int main() {
  coherent_end_to_end();
  heralded_end_to_end();
  multithermal_mode_scan();
  forward_model_oracles();
  em_property_suite();
  uncertainty_formula();
  klyshko_identities();
  determinism();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
