#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "posefree/config.hpp"

using namespace posefree;

TEST_CASE("every train field appears exactly once in the JSON form") {
  const auto j = train_config_to_json(TrainConfig{});
  std::set<std::string> keys;
  for (const auto& f : train_config_fields()) {
    CHECK(keys.insert(f.key).second);
    CHECK(j.contains(f.key));
    CHECK_FALSE(f.description.empty());
  }
  CHECK(j.size() == keys.size());
}

TEST_CASE("train config round-trips through JSON") {
  TrainConfig cfg;
  cfg.model_preset = "tiny";
  cfg.learning_rate = 3e-3;
  cfg.total_steps = 123;
  cfg.sds_weighting = SdsWeighting::unit;
  cfg.augmentation.k0 = 9;
  cfg.augmentation.replace = true;
  cfg.use_sds = false;
  cfg.seed = 99;
  const auto j = train_config_to_json(cfg);
  CHECK(j["aug_k0"] == 9);
  CHECK(j["sds_weighting"] == "unit");
  const TrainConfig back = train_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(train_config_to_json(back).dump() == j.dump());
}

TEST_CASE("unknown keys and mistyped values are rejected") {
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learning_rat", 0.1}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"total_steps", "ten"}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"total_steps", 1.5}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"use_sds", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"sds_weighting", "linear"}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::array()), std::invalid_argument);
  CHECK(train_config_from_json(nlohmann::json{{"learning_rate", 1}}).learning_rate == 1.0);
}

TEST_CASE("partial JSON overrides only the keys it names") {
  TrainConfig base;
  base.seed = 5;
  base.render_resolution = 32;
  const TrainConfig cfg = train_config_from_json(nlohmann::json{{"seed", 6}}, base);
  CHECK(cfg.seed == 6);
  CHECK(cfg.render_resolution == 32);
}

TEST_CASE("run config carries paths, mode and train keys in one flat object") {
  RunConfig rc;
  rc.dataset = "data";
  rc.out = "runs/a";
  rc.mode = "posed";
  rc.train.total_steps = 7;
  const auto j = run_config_to_json(rc);
  CHECK(j["mode"] == "posed");
  CHECK(j["total_steps"] == 7);
  const RunConfig back = run_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(run_config_to_json(back).dump() == j.dump());
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"mode", "semi"}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"workers", 0}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"bogus", 0}}), std::invalid_argument);
  CHECK(run_config_fields().size() == train_config_fields().size() + 5);
}

TEST_CASE("config files load and report parse errors") {
  const auto path = std::filesystem::temp_directory_path() / "posefree_test_config.json";
  {
    std::ofstream(path) << R"({"dataset": "d", "seed": 4, "aug_interval_steps": 50})";
  }
  const RunConfig rc = load_run_config(path);
  CHECK(rc.dataset == "d");
  CHECK(rc.train.seed == 4);
  CHECK(rc.train.augmentation.interval_steps == 50);
  {
    std::ofstream(path) << "{ not json";
  }
  CHECK_THROWS_AS(load_run_config(path), std::invalid_argument);
  std::filesystem::remove(path);
}
