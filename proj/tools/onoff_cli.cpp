// onoff: simulate on/off datasets, reconstruct photon-number distributions and
// analyze the reconstructions.
//
// Exit codes: 0 success (a reconstruction that hit the iteration cap still
// counts), 2 bad input, 3 file-system failure.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "onoff/onoff.hpp"

namespace fs = std::filesystem;
using namespace onoff;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitIo = 3;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv(double x) { return detail::format_double(x); }

/// The manifest sits next to the output so the output itself stays
/// byte-identical between runs.
struct Manifest {
  std::string command;
  Json inputs = Json::object();
  Json config = Json::object();
  std::optional<std::uint64_t> seed;
  std::string started = utc_now();

  void write(const fs::path& path) const {
    Json j{{"command", command},
           {"inputs", inputs},
           {"config", config},
           {"version", kVersion},
           {"seed", seed ? Json(*seed) : Json(nullptr)},
           {"started", started},
           {"finished", utc_now()}};
    write_file_atomically(path, j.dump(2) + "\n");
  }
};

fs::path sidecar(const fs::path& out) {
  auto p = out;
  p += ".manifest.json";
  return p;
}

ModelSpec with_truncation(ModelSpec spec, std::size_t truncation) {
  spec.truncation = truncation;
  for (auto& c : spec.components) c.model = with_truncation(c.model, truncation);
  return spec;
}

// ---------------------------------------------------------------------------

struct SimulateOptions {
  std::string model_path;
  std::string family;
  double mu = 0.0;
  long modes = 1;
  std::size_t n0 = 0;
  double vacuum = 0.0;
  double two_photon_ratio = 0.0;
  std::size_t truncation = 8;
  std::size_t k = 15;
  double eta_max = 0.66;
  bool include_zero = false;
  std::uint64_t runs = 1'000'000;
  std::uint64_t seed = 0;
  std::string out;
};

ModelSpec simulate_model(const SimulateOptions& o) {
  if (!o.model_path.empty()) return model_spec_from_json(read_json_file(o.model_path));
  if (o.family.empty()) throw DomainError("give either --model or --family");
  if (o.family == "heralded") return heralded_photon_model(o.vacuum, o.two_photon_ratio, o.truncation);
  ModelSpec spec;
  switch (family_from_string(o.family)) {
    case Family::fock: spec = ModelSpec::fock(o.n0, o.truncation); break;
    case Family::coherent: spec = ModelSpec::coherent(o.mu, o.truncation); break;
    case Family::thermal: spec = ModelSpec::thermal(o.mu, o.truncation); break;
    case Family::multithermal: spec = ModelSpec::multithermal(o.mu, o.modes, o.truncation); break;
    case Family::mixture: throw DomainError("mixtures need a --model file");
  }
  spec.validate();
  return spec;
}

int run_simulate(const SimulateOptions& o) {
  Manifest manifest;
  manifest.command = "simulate";
  const auto spec = simulate_model(o);
  if (!o.model_path.empty()) manifest.inputs["model"] = o.model_path;
  const auto grid = EfficiencyGrid::equally_spaced(o.k, o.eta_max, o.include_zero);
  const auto truth = make_distribution(spec);
  if (!truth.warning().empty()) std::cerr << "warning: " << truth.warning() << "\n";
  const auto data = simulate_dataset(truth, grid, o.runs, o.seed);
  save_dataset(data, o.out);

  manifest.seed = o.seed;
  manifest.config = {{"model", to_json(spec)}, {"K", o.k},           {"eta_max", o.eta_max},
                     {"include_zero", o.include_zero}, {"runs", o.runs}, {"out", o.out}};
  manifest.write(sidecar(o.out));
  std::cout << "wrote " << data.size() << " rows to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReconstructOptions {
  std::string data_path;
  std::optional<std::size_t> truncation;
  std::optional<double> tolerance;
  std::uint64_t max_iterations = 1'000'000;
  std::uint64_t trace_stride = 1000;
  std::string reference_path;
  std::string rule = "binomial";
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_reconstruct(const ReconstructOptions& o) {
  Manifest manifest;
  manifest.command = "reconstruct";
  manifest.inputs["data"] = o.data_path;
  const auto data = load_dataset(o.data_path);

  EmConfig config;
  config.truncation = o.truncation.value_or(suggest_truncation(data));
  config.max_iterations = o.max_iterations;
  config.trace_stride = o.trace_stride;
  config.epsilon_tolerance = o.tolerance;
  config.rule = o.rule == "linpos" ? UpdateRule::linpos : UpdateRule::binomial;

  std::optional<PhotonDistribution> reference;
  if (!o.reference_path.empty()) {
    manifest.inputs["reference"] = o.reference_path;
    const auto spec = model_spec_from_json(read_json_file(o.reference_path));
    reference = make_distribution(with_truncation(spec, config.truncation));
  }

  const auto result = reconstruct(data, config, reference);
  write_file_atomically(o.out, to_json(result).dump(2) + "\n");

  manifest.seed = o.seed;
  manifest.config = {{"truncation", config.truncation},
                     {"tolerance", result.tolerance},
                     {"max_iterations", config.max_iterations},
                     {"trace_stride", config.trace_stride},
                     {"rule", o.rule},
                     {"out", o.out}};
  manifest.write(sidecar(o.out));

  std::optional<UncertaintyReport> delta;
  try {
    delta = confidence_intervals(result, data);
  } catch (const UndefinedError& e) {
    std::cerr << "warning: " << e.what() << "\n";
  }
  std::cout << (result.converged ? "converged" : "not converged") << " after " << result.iterations_run
            << " iterations, epsilon " << result.final_epsilon << " (tolerance " << result.tolerance << ")\n";
  std::cout << "n,rho,delta\n";
  for (std::size_t n = 0; n < result.rho.size(); ++n) {
    std::cout << n << ',' << csv(result.rho[n]) << ',' << (delta ? csv(delta->delta_rho[n]) : "nan") << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  std::string result_path;
  std::string data_path;
  std::vector<std::string> fits;
  std::vector<long> modes{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 50, 100, 500};
  std::vector<double> weights;
  std::string background_base = "multithermal";
  std::optional<std::uint64_t> seed;
  std::string out;
};

std::vector<double> default_weights() {
  std::vector<double> w;
  for (int i = 0; i <= 20; ++i) w.push_back(i / 20.0);
  return w;
}

int run_analyze(const AnalyzeOptions& o) {
  Manifest manifest;
  manifest.command = "analyze";
  manifest.inputs = {{"result", o.result_path}, {"data", o.data_path}};
  const auto result = reconstruction_from_json(read_json_file(o.result_path));
  const auto data = load_dataset(o.data_path);
  if (!(result.grid == data.grid())) throw ShapeError("result and dataset use different efficiency grids");

  const ResponseMatrix a(data.grid(), result.rho.truncation());
  const auto p = a.apply(result.rho.probs());
  const auto f = data.frequencies();
  const auto delta = confidence_intervals(result, data);

  std::ostringstream freq;
  freq << "eta,f,p,residual\n";
  double max_residual = 0.0;
  for (std::size_t v = 0; v < data.size(); ++v) {
    freq << csv(data.grid()[v]) << ',' << csv(f[v]) << ',' << csv(p[v]) << ',' << csv(f[v] - p[v]) << "\n";
    max_residual = std::max(max_residual, std::abs(f[v] - p[v]));
  }

  std::ostringstream dist;
  dist << "n,rho,delta\n";
  for (std::size_t n = 0; n < result.rho.size(); ++n) {
    dist << n << ',' << csv(result.rho[n]) << ',' << csv(delta.delta_rho[n]) << "\n";
  }

  std::ostringstream kcsv;
  kcsv << "n,K,delta_K\n";
  Json klyshko_json = Json::array();
  for (std::size_t n = 1; n + 1 < result.rho.size(); ++n) {
    try {
      const auto k = klyshko_with_uncertainty(result.rho, delta, n);
      kcsv << n << ',' << csv(k.value) << ',' << csv(k.uncertainty) << "\n";
      Json entry = to_json(k);
      entry["n"] = n;
      klyshko_json.push_back(std::move(entry));
    } catch (const UndefinedError& e) {
      kcsv << n << ",nan,nan\n";
      klyshko_json.push_back({{"n", n}, {"error", e.what()}});
    }
  }

  FitGrid grid;
  grid.modes = o.modes;
  grid.weights = o.weights.empty() ? default_weights() : o.weights;
  Json fits = Json::array();
  for (const auto& name : o.fits) {
    Json entry{{"family", name}};
    try {
      if (name == "background") {
        entry["base_family"] = o.background_base;
        entry["summary"] =
            to_json(poisson_background_fit(result.rho, delta, family_from_string(o.background_base), grid));
      } else {
        entry["summary"] = to_json(fit_model(result.rho, delta, family_from_string(name), grid));
      }
    } catch (const IllPosedFitError& e) {
      entry["error"] = e.what();
    }
    fits.push_back(std::move(entry));
  }

  const Json report{{"result",
                     {{"truncation", result.rho.truncation()},
                      {"iterations", result.iterations_run},
                      {"epsilon", result.final_epsilon},
                      {"converged", result.converged}}},
                    {"max_abs_residual", max_residual},
                    {"uncertainty", to_json(delta)},
                    {"klyshko", std::move(klyshko_json)},
                    {"fits", std::move(fits)}};

  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "'");
  write_file_atomically(dir / "frequencies.csv", freq.str());
  write_file_atomically(dir / "distribution.csv", dist.str());
  write_file_atomically(dir / "klyshko.csv", kcsv.str());
  write_file_atomically(dir / "report.json", report.dump(2) + "\n");

  manifest.seed = o.seed;
  manifest.config = {{"fit", o.fits},
                     {"modes", grid.modes},
                     {"weights", grid.weights},
                     {"background_base", o.background_base},
                     {"out", o.out}};
  manifest.write(dir / "manifest.json");

  std::cout << "max |f - p| = " << max_residual << " (epsilon " << result.final_epsilon << ")\n";
  for (const auto& k : report["klyshko"]) {
    if (k.contains("value")) {
      std::cout << "K_" << k["n"].get<std::size_t>() << " = " << k["value"].get<double>() << " +/- "
                << k["uncertainty"].get<double>() << "\n";
    }
  }
  for (const auto& fit : report["fits"]) {
    if (fit.contains("summary")) {
      std::cout << "fit " << fit["family"].get<std::string>() << ": reduced chi2 "
                << fit["summary"]["reduced_chi_square"].get<double>() << ", "
                << fit["summary"]["fitted_parameters"].dump() << "\n";
    } else {
      std::cout << "fit " << fit["family"].get<std::string>() << ": " << fit["error"].get<std::string>() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photon-number reconstruction from on/off detection at several efficiencies"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI file with one [subcommand] section per command");
  app.require_subcommand(1);
  app.fallthrough();

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Draw a synthetic on/off dataset from a model");
  auto* model_opt = simulate->add_option("--model", sim.model_path, "Model spec JSON");
  auto* family_opt =
      simulate->add_option("--family", sim.family, "Inline model family")
          ->check(CLI::IsMember({"fock", "coherent", "thermal", "multithermal", "heralded"}));
  model_opt->excludes(family_opt);
  simulate->add_option("--mu", sim.mu, "Mean photon number");
  simulate->add_option("--modes", sim.modes, "Multithermal mode count");
  simulate->add_option("--n0", sim.n0, "Fock photon number");
  simulate->add_option("--vacuum", sim.vacuum, "Heralded model: vacuum probability");
  simulate->add_option("--two-photon-ratio", sim.two_photon_ratio, "Heralded model: rho_2 / rho_1");
  simulate->add_option("--truncation,-N", sim.truncation, "Truncation for inline models")->capture_default_str();
  simulate->add_option("--K", sim.k, "Number of efficiencies")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--eta-max", sim.eta_max, "Largest efficiency")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  simulate->add_flag("--include-zero", sim.include_zero, "Start the grid at eta = 0");
  simulate->add_option("--runs", sim.runs, "Runs per efficiency")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "Random seed")->required();
  simulate->add_option("--out", sim.out, "Dataset CSV to write")->required();

  ReconstructOptions rec;
  auto* reconstruct_cmd = app.add_subcommand("reconstruct", "Reconstruct rho_n from a dataset");
  reconstruct_cmd->add_option("--data", rec.data_path, "Dataset CSV")->required();
  reconstruct_cmd->add_option("--truncation,-N", rec.truncation, "Truncation N (default: chosen from the data)");
  reconstruct_cmd->add_option("--tolerance", rec.tolerance, "Stop when epsilon <= tolerance (default 1e-7*K)");
  reconstruct_cmd->add_option("--max-iter", rec.max_iterations, "Iteration cap")->capture_default_str();
  reconstruct_cmd->add_option("--trace-stride", rec.trace_stride, "Iterations between trace points")
      ->capture_default_str();
  reconstruct_cmd->add_option("--reference", rec.reference_path, "Model spec JSON for fidelity tracking");
  reconstruct_cmd->add_option("--rule", rec.rule, "EM update rule")
      ->capture_default_str()
      ->check(CLI::IsMember({"binomial", "linpos"}));
  reconstruct_cmd->add_option("--seed", rec.seed, "Recorded in the manifest; reconstruction is deterministic");
  reconstruct_cmd->add_option("--out", rec.out, "Result JSON to write")->required();

  AnalyzeOptions ana;
  auto* analyze = app.add_subcommand("analyze", "Residuals, uncertainties, Klyshko parameters and model fits");
  analyze->add_option("--result", ana.result_path, "Result JSON from reconstruct")->required();
  analyze->add_option("--data", ana.data_path, "Dataset CSV the result was built from")->required();
  analyze->add_option("--fit", ana.fits, "Families to fit")
      ->check(CLI::IsMember({"fock", "coherent", "thermal", "multithermal", "background"}));
  analyze->add_option("--modes", ana.modes, "Multithermal mode counts to scan")->capture_default_str();
  analyze->add_option("--weights", ana.weights, "Background-fit weights to scan (default 0, 0.05, ..., 1)");
  analyze->add_option("--background-base", ana.background_base, "Base family of the background fit")
      ->capture_default_str()
      ->check(CLI::IsMember({"coherent", "thermal", "multithermal"}));
  analyze->add_option("--seed", ana.seed, "Recorded in the manifest");
  analyze->add_option("--out", ana.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    std::cerr << e.what() << "\n";
    return kExitIo;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInput;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (reconstruct_cmd->parsed()) return run_reconstruct(rec);
    return run_analyze(ana);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
