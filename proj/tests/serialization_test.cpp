#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "onoff/serialization.hpp"
#include "oracles.hpp"

using namespace onoff;

TEST(Json, DistributionRoundTrip) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const PhotonDistribution d(oracle::random_simplex(rng, 1 + rng() % 30), "trial");
    const auto text = to_json(d).dump();
    EXPECT_EQ(distribution_from_json(Json::parse(text)), d);
  }
}

TEST(Json, DatasetRoundTrip) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto grid = EfficiencyGrid::equally_spaced(1 + rng() % 40, 0.05 + 0.9 * (rng() % 1000) / 1000.0);
    const auto data = simulate_dataset(make_thermal(0.4, 20), grid, 1 + rng() % 1'000'000, rng());
    EXPECT_EQ(dataset_from_json(Json::parse(to_json(data).dump())), data);
  }
}

TEST(Json, ModelSpecRoundTrip) {
  const std::vector<ModelSpec> specs{
      ModelSpec::fock(2, 6),
      ModelSpec::coherent(0.02, 8),
      ModelSpec::thermal(0.74, 12),
      ModelSpec::multithermal(0.5, 500, 10),
      heralded_photon_model(0.027, 0.0185, 6),
      ModelSpec::mixture({{0.3, ModelSpec::multithermal(0.5, 2, 10)}, {0.7, ModelSpec::coherent(0.3, 10)}}, 10),
  };
  for (const auto& spec : specs) {
    const auto back = model_spec_from_json(Json::parse(to_json(spec).dump()));
    EXPECT_EQ(to_json(back), to_json(spec));
    EXPECT_EQ(make_distribution(back).vector(), make_distribution(spec).vector());
  }
}

TEST(Json, ModelSpecErrors) {
  EXPECT_THROW(model_spec_from_json(Json::parse(R"({"family":"coherent","mu":0.1})")), ParseError);
  EXPECT_THROW(model_spec_from_json(Json::parse(R"({"family":"squeezed","mu":0.1,"truncation":4})")),
               DomainError);
  EXPECT_THROW(model_spec_from_json(Json::parse(R"({"family":"multithermal","mu":0.1,"modes":2.5,"truncation":4})")),
               DomainError);
  EXPECT_THROW(model_spec_from_json(Json::parse(R"({"family":"coherent","mu":-1,"truncation":4})")),
               DomainError);
  EXPECT_THROW(model_spec_from_json(Json::parse(R"({"family":"coherent","truncation":4})")), ParseError);
  EXPECT_THROW(model_spec_from_json(Json::parse(
                   R"({"family":"mixture","truncation":4,"components":[{"weight":1,"model":{"family":"coherent","mu":0.1,"truncation":5}}]})")),
               ShapeError);
  EXPECT_THROW(model_spec_from_json(Json::parse(
                   R"({"family":"mixture","truncation":4,"components":[{"weight":0.5,"model":{"family":"coherent","mu":0.1}}]})")),
               DomainError);
}

TEST(Json, ReconstructionRoundTrip) {
  const auto data = simulate_dataset(make_coherent(0.4, 8), EfficiencyGrid::equally_spaced(10, 0.6), 10000, 3);
  EmConfig config;
  config.max_iterations = 2500;
  config.trace_stride = 500;
  const auto result = reconstruct(data, config, make_coherent(0.4, 8));
  const auto back = reconstruction_from_json(Json::parse(to_json(result).dump()));
  EXPECT_EQ(back.rho.vector(), result.rho.vector());
  EXPECT_EQ(back.iterations_run, result.iterations_run);
  EXPECT_EQ(back.final_epsilon, result.final_epsilon);
  EXPECT_EQ(back.converged, result.converged);
  ASSERT_EQ(back.trace.size(), result.trace.size());
  for (std::size_t i = 0; i < back.trace.size(); ++i) {
    EXPECT_EQ(back.trace[i].iteration, result.trace[i].iteration);
    EXPECT_EQ(back.trace[i].log_likelihood, result.trace[i].log_likelihood);
    EXPECT_EQ(back.trace[i].fidelity, result.trace[i].fidelity);
  }
  EXPECT_EQ(to_json(back).dump(), to_json(result).dump());
}

TEST(Json, MissingOrMalformedFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  EXPECT_THROW(read_json_file(dir / "onoff_does_not_exist.json"), IoError);
  const auto bad = dir / "onoff_bad.json";
  std::ofstream(bad) << "{\"family\": ";
  EXPECT_THROW(read_json_file(bad), ParseError);
  std::filesystem::remove(bad);
}
