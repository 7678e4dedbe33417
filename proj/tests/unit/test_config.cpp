#include <fstream>

#include "advss/config.hpp"
#include "support.hpp"

using namespace advss;

namespace {

std::vector<std::string> issues_of(const json& j) {
  try {
    experiment_from_json(j);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& s : issues)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("defaults round-trip through json") {
  ExperimentConfig c;
  CHECK(c.train.weights.lambda_d == 1.0);
  CHECK(c.train.weights.lambda_g == 0.1);
  CHECK(experiment_from_json(to_json(c)) == c);

  c.name = "x";
  c.train.n_decay = 123;
  c.train.beta1 = 0.0;
  c.train.mode = GanLossMode::hinge;
  c.train.g_cls_mode = GeneratorClsMode::ssgan_min;
  c.ablation = AblationGrid{.lambda_d = {0, 0.5}, .seed = {1, 2, 3}};
  auto back = experiment_from_json(to_json(c));
  CHECK(back == c);
  CHECK(back.train.n_decay == 123);
}

TEST_CASE("save and load from disk, comments allowed") {
  auto dir = test::scratch("config_io");
  ExperimentConfig c;
  c.train.n_iter = 77;
  save_experiment(c, dir / "c.json");
  CHECK(load_experiment(dir / "c.json") == c);

  std::ofstream(dir / "commented.json") << "{\n  // short run\n  \"name\": \"n\", \"train\": {\"n_iter\": 5}\n}\n";
  auto loaded = load_experiment(dir / "commented.json");
  CHECK(loaded.name == "n");
  CHECK(loaded.train.n_iter == 5);
  CHECK(loaded.train.batch_size == 64);

  std::ofstream(dir / "broken.json") << "{ \"name\": ";
  CHECK_THROWS_AS(load_experiment(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_experiment(dir / "absent.json"), ConfigError);
}

TEST_CASE("unknown keys and wrong types are reported with their path, all at once") {
  json j = {{"train", {{"weights", {{"lambda_q", 1.0}}}, {"batch_size", 6.5}, {"mode", 3}}},
            {"dataset", {{"n_train", "many"}}},
            {"bogus", true}};
  auto issues = issues_of(j);
  CHECK(mentions(issues, "train.weights.lambda_q: unknown field"));
  CHECK(mentions(issues, "train.batch_size: expected an integer"));
  CHECK(mentions(issues, "train.mode: expected a string"));
  CHECK(mentions(issues, "dataset.n_train: expected"));
  CHECK(mentions(issues, "bogus: unknown field"));
  CHECK(issues.size() >= 5);
}

TEST_CASE("semantic checks") {
  CHECK(mentions(issues_of({{"train", {{"mode", "wasserstein"}}}}), "train.mode"));
  CHECK(mentions(issues_of({{"train", {{"arch", {{"family", "vgg"}}}}}}), "train.arch.family"));
  CHECK(mentions(issues_of({{"train", {{"weights", {{"lambda_d", -1.0}}}}}}), "train.weights"));
  CHECK(mentions(issues_of({{"dataset", {{"image_side", 48}}}}), "dataset.image_side"));
  CHECK(mentions(issues_of({{"dataset", {{"n_train", 100}}}}), "train.fid.n_real"));
  CHECK(mentions(issues_of({{"name", ""}}), "name: must not be empty"));
  CHECK(mentions(issues_of({{"train", {{"n_iter", 0}}}}), "n_iter"));
  CHECK(issues_of(json::object()).empty());
}

TEST_CASE("switches accept booleans and on/off") {
  auto c = experiment_from_json({{"train", {{"d_cls_fake_term", "off"}, {"rotate_fakes_for_d", "on"}}}});
  CHECK_FALSE(c.train.d_cls_fake_term);
  CHECK(c.train.rotate_fakes_for_d);
  CHECK(mentions(issues_of({{"train", {{"rotate_fakes_for_d", "maybe"}}}}), "train.rotate_fakes_for_d"));
}

TEST_CASE("ablation grid: scalar or list axes, product size, row-major labels") {
  auto c = experiment_from_json(
      {{"ablation", {{"lambda_d", {0.0, 1.0}}, {"lambda_g", 0.1}, {"d_cls_fake_term", {"on", "off"}}, {"seed", {0, 1, 2}}}}});
  REQUIRE(c.ablation);
  CHECK(c.ablation->size() == 12);
  auto cells = c.ablation->expand(c.train);
  REQUIRE(cells.size() == 12);
  CHECK(cells[0].label == "cell000_ld0_lg0.1_match_fake-on_rot-off_seed0");
  CHECK(cells[1].train.seed == 1);
  CHECK(cells[3].train.d_cls_fake_term == false);
  CHECK(cells[6].train.weights.lambda_d == 1.0);
  CHECK(cells[11].label == "cell011_ld1_lg0.1_match_fake-off_rot-off_seed2");
  std::set<std::string> labels;
  for (const auto& cell : cells) labels.insert(cell.label);
  CHECK(labels.size() == 12);

  AblationGrid empty;
  CHECK(empty.size() == 0);
  CHECK(mentions(issues_of({{"ablation", {{"lambda_d", {1.0, "x"}}}}}), "ablation.lambda_d"));
}
