#include <catch2/catch_amalgamated.hpp>

#include "natex/config.hpp"

using namespace natex;

TEST_CASE("key-value parsing with comments and blanks") {
  const auto kv = KeyValueConfig::parse_text(
      "# generator\n"
      "n = 500\n"
      "d=3\n"
      "coeff_scale = 2.5   # slope\n"
      "\n"
      "estimators = doubly-robust, direct-difference\n");
  REQUIRE(kv.get_u64("n", 0) == 500);
  REQUIRE(kv.get_u64("d", 0) == 3);
  REQUIRE(kv.get_double("coeff_scale", 0) == 2.5);
  REQUIRE(kv.get_list("estimators") ==
          std::vector<std::string>{"doubly-robust", "direct-difference"});
  REQUIRE(kv.get_string("missing", "fallback") == "fallback");
}

TEST_CASE("malformed lines and duplicates are config errors") {
  REQUIRE_THROWS_AS(KeyValueConfig::parse_text("just a line\n"), config_error);
  REQUIRE_THROWS_AS(KeyValueConfig::parse_text("n = 1\nn = 2\n"), config_error);
  REQUIRE_THROWS_AS(KeyValueConfig::parse_text("= 3\n"), config_error);
  const auto kv = KeyValueConfig::parse_text("n = abc\n");
  REQUIRE_THROWS_AS(kv.get_u64("n", 0), config_error);
}

TEST_CASE("generation config defaults and overrides") {
  const auto kv = KeyValueConfig::parse_text("n = 100\nseed = 9\n");
  const GenerationConfig cfg = load_generation_config(kv);
  REQUIRE(cfg.n == 100);
  REQUIRE(cfg.seed == 9);
  REQUIRE(cfg.d == 10);
  REQUIRE(cfg.target_treated_fraction == 0.443);
  REQUIRE(cfg.outcome_noise_sd == 0.05);

  const auto bad = KeyValueConfig::parse_text("target_treated_fraction = 1.5\n");
  REQUIRE_THROWS_AS(load_generation_config(bad), config_error);
}

TEST_CASE("regressor spec carries the documented network defaults") {
  const RegressorSpec spec = load_regressor_spec(KeyValueConfig::parse_text(""));
  REQUIRE(spec.kind == RegressorSpec::Kind::kNetwork);
  REQUIRE(spec.n_layers == 3);
  REQUIRE(spec.hidden_width == 100);
  REQUIRE(spec.learning_rate == 1e-3);
  REQUIRE(spec.epochs == 200);
  REQUIRE(spec.batch_size == 128);

  const auto kv = KeyValueConfig::parse_text("kind = ridge\nridge_lambda = 0.5\n");
  const RegressorSpec ridge = load_regressor_spec(kv);
  REQUIRE(ridge.kind == RegressorSpec::Kind::kRidge);
  REQUIRE(ridge.ridge_lambda == 0.5);

  REQUIRE_THROWS_AS(load_regressor_spec(KeyValueConfig::parse_text("kind = tree\n")),
                    lookup_error);
}

TEST_CASE("benchmark config validation") {
  const auto kv = KeyValueConfig::parse_text(
      "runs = 4\n"
      "subsample = 50\n"
      "master_seed = 77\n"
      "propensity_source = true\n"
      "estimators = horvitz-thompson\n"
      "parallelism = 2\n");
  const BenchmarkConfig cfg = load_benchmark_config(kv);
  REQUIRE(cfg.runs == 4);
  REQUIRE(cfg.subsample == 50);
  REQUIRE(cfg.master_seed == 77);
  REQUIRE(cfg.propensity_source == PropensitySource::kTrue);
  REQUIRE(cfg.estimators == std::vector<std::string>{"horvitz-thompson"});

  REQUIRE_THROWS_AS(load_benchmark_config(KeyValueConfig::parse_text("runs = 0\n")),
                    config_error);
  REQUIRE_THROWS_AS(
      load_benchmark_config(KeyValueConfig::parse_text("estimators = no-such-method\n")),
      config_error);
  REQUIRE_THROWS_AS(
      load_benchmark_config(KeyValueConfig::parse_text("propensity_source = guess\n")),
      config_error);
}

TEST_CASE("default estimator list names registry entries in table order") {
  const auto defaults = default_benchmark_estimators();
  REQUIRE(defaults.size() == 9);
  for (const auto& name : defaults) {
    REQUIRE_NOTHROW(find_estimator(name));
  }
}
