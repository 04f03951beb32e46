#pragma once

// JSON encodings (nlohmann/json) of the library's value types.
//
//   PhotonDistribution    {"label": str, "probs": [..]}
//   ModelSpec             {"family": "fock"|"coherent"|"thermal"|"multithermal"|"mixture",
//                          "truncation": N, "n0"|"mu"|"modes"|"components": ...}
//   OnOffDataset          {"eta": [..], "no_click": [..], "total": [..]}
//   ReconstructionResult  {"rho": [..], "iterations": int, "epsilon": real, "converged": bool,
//                          "trace": [[iter, eps, loglik|null, fidelity|null], ..], plus
//                          "eta", "tolerance", "stop_reason"}

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "onoff/distribution.hpp"
#include "onoff/em.hpp"
#include "onoff/error.hpp"
#include "onoff/forward_model.hpp"
#include "onoff/inference.hpp"
#include "onoff/model_spec.hpp"

namespace onoff {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Encoders

inline Json to_json(const PhotonDistribution& d) { return Json{{"label", d.label()}, {"probs", d.vector()}}; }

inline Json to_json(const ModelSpec& spec, bool nested = false) {
  Json j{{"family", std::string(to_string(spec.family))}};
  if (!nested) j["truncation"] = spec.truncation;
  switch (spec.family) {
    case Family::fock: j["n0"] = spec.n0; break;
    case Family::coherent:
    case Family::thermal: j["mu"] = spec.mu; break;
    case Family::multithermal:
      j["mu"] = spec.mu;
      j["modes"] = spec.modes;
      break;
    case Family::mixture: {
      Json components = Json::array();
      for (const auto& c : spec.components) components.push_back({{"weight", c.weight}, {"model", to_json(c.model, true)}});
      j["components"] = std::move(components);
      break;
    }
  }
  return j;
}

inline Json to_json(const OnOffDataset& data) {
  return Json{{"eta", std::vector<double>(data.grid().etas().begin(), data.grid().etas().end())},
              {"no_click", std::vector<std::uint64_t>(data.no_click().begin(), data.no_click().end())},
              {"total", std::vector<std::uint64_t>(data.total().begin(), data.total().end())}};
}

namespace detail {

inline Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

}  // namespace detail

inline Json to_json(const ReconstructionResult& r) {
  Json trace = Json::array();
  for (const auto& t : r.trace) {
    trace.push_back(Json::array({t.iteration, t.epsilon, detail::finite_or_null(t.log_likelihood),
                                 t.fidelity ? Json(*t.fidelity) : Json(nullptr)}));
  }
  return Json{{"rho", r.rho.vector()},
              {"iterations", r.iterations_run},
              {"epsilon", r.final_epsilon},
              {"converged", r.converged},
              {"trace", std::move(trace)},
              {"eta", std::vector<double>(r.grid.etas().begin(), r.grid.etas().end())},
              {"tolerance", r.tolerance},
              {"stop_reason", r.stop == StopReason::tolerance ? "tolerance" : "iteration_cap"}};
}

inline Json to_json(const UncertaintyReport& u) {
  Json excluded = Json::array();
  for (const auto& e : u.excluded) excluded.push_back(Json::array({e.row, e.photon}));
  return Json{{"delta_rho", u.delta_rho}, {"excluded_terms", u.excluded_terms}, {"excluded", std::move(excluded)}};
}

inline Json to_json(const FittedParameters& p) {
  Json j = Json::object();
  if (p.n0) j["n0"] = *p.n0;
  if (p.mu) j["mu"] = *p.mu;
  if (p.modes) j["modes"] = *p.modes;
  if (p.weight) j["weight"] = *p.weight;
  if (p.background_mu) j["background_mu"] = *p.background_mu;
  return j;
}

inline Json to_json(const FitSummary& f) {
  Json scan = Json::array();
  for (const auto& s : f.scan) {
    scan.push_back({{"parameters", to_json(s.parameters)},
                    {"chi_square", s.chi_square},
                    {"reduced_chi_square", s.reduced_chi_square}});
  }
  return Json{{"model", to_json(f.model)},
              {"fitted_parameters", to_json(f.fitted_parameters)},
              {"chi_square", f.chi_square},
              {"reduced_chi_square", f.reduced_chi_square},
              {"degrees_of_freedom", f.degrees_of_freedom},
              {"scan", std::move(scan)}};
}

inline Json to_json(const KlyshkoEstimate& k) { return Json{{"value", k.value}, {"uncertainty", k.uncertainty}}; }

// ---------------------------------------------------------------------------
// Decoders. Structural problems surface as ParseError; value-level problems
// keep their domain-specific error types.

namespace detail {

template <typename F>
auto decoding(const char* what, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw ParseError(0, std::string("invalid ") + what + " JSON: " + e.what());
  }
}

inline ModelSpec model_spec_from_json(const Json& j, std::optional<std::size_t> inherited_truncation) {
  ModelSpec spec;
  spec.family = family_from_string(j.at("family").get<std::string>());
  if (j.contains("truncation")) {
    spec.truncation = j.at("truncation").get<std::size_t>();
    if (inherited_truncation && spec.truncation != *inherited_truncation) {
      throw ShapeError("mixture component truncation differs from parent");
    }
  } else if (inherited_truncation) {
    spec.truncation = *inherited_truncation;
  } else {
    throw ParseError(0, "model spec needs a 'truncation' field");
  }
  switch (spec.family) {
    case Family::fock: spec.n0 = j.at("n0").get<std::size_t>(); break;
    case Family::coherent:
    case Family::thermal: spec.mu = j.at("mu").get<double>(); break;
    case Family::multithermal: {
      spec.mu = j.at("mu").get<double>();
      const auto& modes = j.at("modes");
      if (!modes.is_number_integer()) throw DomainError("multithermal 'modes' must be an integer");
      spec.modes = modes.get<long>();
      break;
    }
    case Family::mixture:
      for (const auto& c : j.at("components")) {
        spec.components.push_back({c.at("weight").get<double>(), model_spec_from_json(c.at("model"), spec.truncation)});
      }
      break;
  }
  spec.validate();
  return spec;
}

}  // namespace detail

inline PhotonDistribution distribution_from_json(const Json& j) {
  return detail::decoding("distribution", [&] {
    return PhotonDistribution(j.at("probs").get<std::vector<double>>(), j.value("label", std::string{}));
  });
}

inline ModelSpec model_spec_from_json(const Json& j) {
  return detail::decoding("model spec", [&] { return detail::model_spec_from_json(j, std::nullopt); });
}

inline OnOffDataset dataset_from_json(const Json& j) {
  return detail::decoding("dataset", [&] {
    return OnOffDataset(EfficiencyGrid(j.at("eta").get<std::vector<double>>()),
                        j.at("no_click").get<std::vector<std::uint64_t>>(),
                        j.at("total").get<std::vector<std::uint64_t>>());
  });
}

inline ReconstructionResult reconstruction_from_json(const Json& j) {
  return detail::decoding("reconstruction result", [&] {
    std::vector<TracePoint> trace;
    for (const auto& row : j.at("trace")) {
      TracePoint t;
      t.iteration = row.at(0).get<std::uint64_t>();
      t.epsilon = row.at(1).get<double>();
      t.log_likelihood = row.at(2).is_null() ? -std::numeric_limits<double>::infinity() : row.at(2).get<double>();
      if (!row.at(3).is_null()) t.fidelity = row.at(3).get<double>();
      trace.push_back(t);
    }
    const bool converged = j.at("converged").get<bool>();
    return ReconstructionResult{PhotonDistribution(j.at("rho").get<std::vector<double>>(), "reconstruction"),
                                EfficiencyGrid(j.at("eta").get<std::vector<double>>()),
                                j.at("iterations").get<std::uint64_t>(),
                                j.at("epsilon").get<double>(),
                                j.value("tolerance", 0.0),
                                converged,
                                converged ? StopReason::tolerance : StopReason::iteration_cap,
                                std::move(trace)};
  });
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(0, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace onoff
