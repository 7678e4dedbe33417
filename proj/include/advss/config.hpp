#pragma once

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advss/data.hpp"
#include "advss/trainer.hpp"

namespace advss {

using json = nlohmann::ordered_json;

/// Validation failure carrying one "<field path>: <problem>" line per issue.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Axes of an ablation sweep; the grid is their Cartesian product.
struct AblationGrid {
  std::vector<double> lambda_d;
  std::vector<double> lambda_g;
  std::vector<GeneratorClsMode> g_cls_mode;
  std::vector<bool> d_cls_fake_term;
  std::vector<bool> rotate_fakes_for_d;
  std::vector<std::uint64_t> seed;

  struct Cell {
    std::string label;
    TrainConfig train;
  };

  std::size_t size() const;
  /// Cells in row-major order over (lambda_d, lambda_g, g_cls_mode,
  /// d_cls_fake_term, rotate_fakes_for_d, seed). Empty axes keep the base value.
  std::vector<Cell> expand(const TrainConfig& base) const;
  bool operator==(const AblationGrid&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TrainConfig train;
  DatasetSpec dataset{.name = "synthetic-blobs", .n_train = 10000};
  std::optional<AblationGrid> ablation;
  std::string output_dir = "runs";
  int sample_count = 64;  // images in the final sample sheet
  bool operator==(const ExperimentConfig&) const = default;
};

json to_json(const ArchitectureSpec& spec);
json to_json(const LossWeights& weights);
json to_json(const TrainConfig& config);
json to_json(const DatasetSpec& spec);
json to_json(const AblationGrid& grid);
json to_json(const ExperimentConfig& config);

/// Parsers reject unknown keys and wrongly typed values and then run the
/// semantic validators; every problem found is reported at once.
TrainConfig train_config_from_json(const json& j);
ExperimentConfig experiment_from_json(const json& j);

ExperimentConfig load_experiment(const std::filesystem::path& path);
void save_experiment(const ExperimentConfig& config, const std::filesystem::path& path);

}  // namespace advss
