#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advss/augment.hpp"
#include "advss/data.hpp"
#include "advss/metrics.hpp"
#include "advss/networks.hpp"
#include "advss/objectives.hpp"
#include "advss/rng.hpp"

namespace advss {

/// Raised when a loss term turns NaN/Inf; names the offending term.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string term, std::int64_t iteration, double value);
  const std::string& term() const { return term_; }
  std::int64_t iteration() const { return iteration_; }

 private:
  std::string term_;
  std::int64_t iteration_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FidSettings {
  std::int64_t n_real = 10000;
  std::int64_t n_fake = 5000;
  std::string extractor = "identity";  // identity | torchscript
  std::string extractor_path;
  bool operator==(const FidSettings&) const = default;
};

struct TrainConfig {
  LossWeights weights;
  GanLossMode mode = GanLossMode::log;
  ArchitectureSpec arch;
  std::int64_t n_iter = 300000;
  std::optional<std::int64_t> n_decay;  // see effective_n_decay()
  std::int64_t batch_size = 64;
  double lr = 2e-4;
  std::optional<double> beta1;  // see effective_beta1()
  double beta2 = 0.9;
  std::uint64_t seed = 0;
  std::int64_t fid_every = 10000;  // 0 disables FID
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::int64_t log_every = 100;
  int n_critic = 1;

  // Ablation switches.
  GeneratorClsMode g_cls_mode = GeneratorClsMode::match;
  bool d_cls_fake_term = true;      // adversarial classifier (fake class K+1)
  bool rotate_fakes_for_d = false;  // rotate fakes before labelling them K+1
  bool alpha_literal_ramp = false;

  FidSettings fid;

  /// 150000, or floor(n_iter / 2) when n_iter <= 150000, unless set.
  std::int64_t effective_n_decay() const;
  /// 0.0 for resnet, 0.5 otherwise, unless set.
  double effective_beta1() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct StepLosses {
  double ae = 0, d_gan = 0, d_cls = 0, g_gan = 0, g_cls = 0, alpha = 0;
  bool operator==(const StepLosses&) const = default;
};

/// One line of the metric log.
struct MetricRecord {
  std::int64_t iter = 0;
  StepLosses losses;
  std::optional<double> fid;
  bool operator==(const MetricRecord&) const = default;
};

std::string to_json_line(const MetricRecord& record);
MetricRecord parse_metric_line(const std::string& line);
std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path);

/// Everything needed to continue training bit-exactly.
class TrainState {
 public:
  /// Seeds torch with config.seed, builds the networks and three optimizers:
  /// auto-encoder (E + G), discriminator (D) and generator (G).
  explicit TrainState(const TrainConfig& config);

  const TrainConfig& config() const { return config_; }
  GanModel& model() { return model_; }
  torch::optim::Adam& ae_optimizer() { return *ae_opt_; }
  torch::optim::Adam& d_optimizer() { return *d_opt_; }
  torch::optim::Adam& g_optimizer() { return *g_opt_; }

  std::int64_t iteration = 0;     // completed steps
  std::int64_t data_position = 0; // minibatch stream position
  Rng rng;
  std::vector<MetricRecord> history;  // logged records
  std::vector<StepLosses> trace;      // every step of this process

  /// (group, optimizer) pairs in a fixed order.
  std::vector<std::pair<std::string, torch::optim::Adam*>> optimizers();

 private:
  TrainConfig config_;
  GanModel model_;
  std::unique_ptr<torch::optim::Adam> ae_opt_, d_opt_, g_opt_;
};

/// Per-iteration inputs shared by the three sub-steps.
struct StepInputs {
  torch::Tensor x;            // real minibatch
  torch::Tensor z;            // latent codes, drawn once per iteration
  TransformedBatch pseudo;    // rotated reals with their labels
  double alpha = 0.0;
};

/// Auto-encoder update: minimizes the feature reconstruction + V_R over E, G.
double ae_update(TrainState& state, const StepInputs& in, const DistanceRegularizer& vr = distance_regularizer);
/// Discriminator update: d_total with G(z) and G(E(x)) held constant.
std::pair<double, double> discriminator_update(TrainState& state, const StepInputs& in);
/// Generator update: g_total with D frozen.
std::pair<double, double> generator_update(TrainState& state, const StepInputs& in);

/// Runs one full iteration (AE, then D n_critic times, then G) on `x`.
StepLosses train_step(TrainState& state, const torch::Tensor& x);

struct TrainOptions {
  std::optional<std::filesystem::path> output_dir;  // metric log + checkpoints
  std::optional<std::filesystem::path> resume_from;
  FeatureExtractor extractor;  // empty: built from config.fid
  std::function<void(const MetricRecord&)> on_record;
  std::optional<std::int64_t> stop_at;  // end early once this iteration is done
};

struct TrainResult {
  std::unique_ptr<TrainState> state;
  std::vector<MetricRecord> log;
};

/// Draws minibatches, applies the alpha schedule, evaluates FID every
/// fid_every iterations and checkpoints.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options = {});

/// FID of the current generator (eval mode) against precomputed real stats.
double evaluate_fid(TrainState& state, const FrechetReference& real, const FeatureExtractor& extractor);

/// n images from the generator in eval mode, using a stream derived from
/// (seed, stream) so training randomness is untouched.
torch::Tensor generate_samples(TrainState& state, std::int64_t n, std::uint64_t stream);

void save_checkpoint(TrainState& state, const std::filesystem::path& path);
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path);
/// Loads into an existing state; rejects architecture mismatches.
void load_checkpoint_into(const std::filesystem::path& path, TrainState& state);

}  // namespace advss
