#include "advss/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "advss/config.hpp"

namespace advss {

namespace {

// Streams derived from the run seed; fixed so resumed runs line up.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kSampleStream = 0x5eed0000;

std::string describe(const char* term, std::int64_t iteration, double value) {
  std::ostringstream os;
  os << "non-finite loss term '" << term << "' at iteration " << iteration << " (value " << value << ")";
  return os.str();
}

double checked(const torch::Tensor& loss, const char* term, const TrainState& state) {
  const double v = loss.item<double>();
  if (!std::isfinite(v)) throw DivergenceError(term, state.iteration, v);
  return v;
}

void clear_grads(GanModel& model) {
  for (auto* m : std::initializer_list<torch::nn::Module*>{model.encoder().get(), model.generator().get(),
                                                          model.discriminator().get()})
    for (auto& p : m->parameters()) p.mutable_grad().reset();
}

/// Restores module buffers (batch-norm statistics, power-iteration vectors)
/// on scope exit, so a sub-step that only reads a network leaves it intact.
class BufferGuard {
 public:
  explicit BufferGuard(std::initializer_list<torch::nn::Module*> modules) {
    for (auto* m : modules)
      for (auto& b : m->buffers()) saved_.emplace_back(b, b.clone());
  }
  ~BufferGuard() {
    torch::NoGradGuard no_grad;
    for (auto& [live, copy] : saved_) live.copy_(copy);
  }

 private:
  std::vector<std::pair<torch::Tensor, torch::Tensor>> saved_;
};

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Generator output as an image source, drawn in eval mode.
class GeneratorSource : public ImageSource {
 public:
  GeneratorSource(TrainState& state, std::int64_t total, std::uint64_t stream)
      : state_(state), total_(total), rng_(Rng::derive(state.config().seed, kSampleStream + stream)) {}
  std::int64_t available() const override { return total_ - drawn_; }
  torch::Tensor draw(std::int64_t count) override {
    torch::NoGradGuard no_grad;
    drawn_ += count;
    auto z = sample_latent(count, state_.config().arch.latent_dim, rng_);
    return state_.model().generator()->forward(z);
  }

 private:
  TrainState& state_;
  std::int64_t total_, drawn_ = 0;
  Rng rng_;
};

/// Puts the model in eval mode for the lifetime of the guard.
class EvalGuard {
 public:
  explicit EvalGuard(GanModel& model) : model_(model) { model_.eval(); }
  ~EvalGuard() { model_.train(); }

 private:
  GanModel& model_;
};

}  // namespace

DivergenceError::DivergenceError(std::string term, std::int64_t iteration, double value)
    : std::runtime_error(describe(term.c_str(), iteration, value)), term_(std::move(term)), iteration_(iteration) {}

// ---------------------------------------------------------------------------
// Config

std::int64_t TrainConfig::effective_n_decay() const {
  if (n_decay) return *n_decay;
  return n_iter <= 150000 ? n_iter / 2 : 150000;
}

double TrainConfig::effective_beta1() const {
  if (beta1) return *beta1;
  return arch.family == Family::resnet ? 0.0 : 0.5;
}

void TrainConfig::validate() const {
  weights.validate();
  advss::validate(arch);
  if (n_iter < 1) throw std::invalid_argument("n_iter must be >= 1");
  const auto decay = effective_n_decay();
  if (decay < 0 || decay >= n_iter) throw std::invalid_argument("n_decay must lie in [0, n_iter)");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (gradient penalty needs pairs)");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  const double b1 = effective_beta1();
  if (!(b1 >= 0 && b1 < 1)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (fid_every < 0) throw std::invalid_argument("fid_every must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (n_critic < 1) throw std::invalid_argument("n_critic must be >= 1");
  if (fid.n_real < 2 || fid.n_fake < 2) throw std::invalid_argument("fid sample counts must be >= 2");
  if (fid.extractor != "identity" && fid.extractor != "torchscript")
    throw std::invalid_argument("fid.extractor must be identity or torchscript");
  if (fid.extractor == "torchscript" && fid.extractor_path.empty())
    throw std::invalid_argument("fid.extractor_path is required for the torchscript extractor");
}

// ---------------------------------------------------------------------------
// Metric log

std::string to_json_line(const MetricRecord& r) {
  json j;
  j["iter"] = r.iter;
  j["loss_ae"] = r.losses.ae;
  j["loss_d_gan"] = r.losses.d_gan;
  j["loss_d_cls"] = r.losses.d_cls;
  j["loss_g_gan"] = r.losses.g_gan;
  j["loss_g_cls"] = r.losses.g_cls;
  j["alpha"] = r.losses.alpha;
  if (r.fid) j["fid"] = *r.fid;
  return j.dump();
}

MetricRecord parse_metric_line(const std::string& line) {
  const auto j = json::parse(line);
  MetricRecord r;
  r.iter = j.at("iter").get<std::int64_t>();
  r.losses.ae = j.at("loss_ae").get<double>();
  r.losses.d_gan = j.at("loss_d_gan").get<double>();
  r.losses.d_cls = j.at("loss_d_cls").get<double>();
  r.losses.g_gan = j.at("loss_g_gan").get<double>();
  r.losses.g_cls = j.at("loss_g_cls").get<double>();
  r.losses.alpha = j.at("alpha").get<double>();
  if (j.contains("fid") && !j.at("fid").is_null()) r.fid = j.at("fid").get<double>();
  return r;
}

std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metric log " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_metric_line(line));
  return out;
}

// ---------------------------------------------------------------------------
// State

TrainState::TrainState(const TrainConfig& config)
    : rng(Rng::derive(config.seed, kTrainStream)),
      config_((config.validate(), config)),
      model_((torch::manual_seed(config.seed), config.arch)) {
  auto options = torch::optim::AdamOptions(config.lr).betas({config.effective_beta1(), config.beta2});
  ae_opt_ = std::make_unique<torch::optim::Adam>(
      concat(model_.encoder()->parameters(), model_.generator()->parameters()), options);
  d_opt_ = std::make_unique<torch::optim::Adam>(model_.discriminator()->parameters(), options);
  g_opt_ = std::make_unique<torch::optim::Adam>(model_.generator()->parameters(), options);
}

std::vector<std::pair<std::string, torch::optim::Adam*>> TrainState::optimizers() {
  return {{"ae", ae_opt_.get()}, {"d", d_opt_.get()}, {"g", g_opt_.get()}};
}

// ---------------------------------------------------------------------------
// Sub-steps

double ae_update(TrainState& state, const StepInputs& in, const DistanceRegularizer& vr) {
  auto& model = state.model();
  auto& d = model.discriminator();
  const auto& w = state.config().weights;
  BufferGuard keep_d({d.get()});
  clear_grads(model);

  auto ex = model.encoder()->forward(in.x);
  auto recon = model.decoder()->forward(ex);
  torch::Tensor phi_x;
  {
    torch::NoGradGuard no_grad;
    phi_x = d->forward(in.x).features;
  }
  auto phi_recon = d->forward(recon).features;
  auto gz = model.generator()->forward(in.z);
  auto loss = ae_loss(phi_x, phi_recon, vr(in.x, gz, ex, in.z), w);
  const double value = checked(loss, "loss_ae", state);
  loss.backward();
  state.ae_optimizer().step();
  clear_grads(model);
  return value;
}

std::pair<double, double> discriminator_update(TrainState& state, const StepInputs& in) {
  auto& model = state.model();
  auto& d = model.discriminator();
  const auto& cfg = state.config();
  BufferGuard keep_eg({model.encoder().get(), model.generator().get()});
  clear_grads(model);

  torch::Tensor fake, recon;
  {
    torch::NoGradGuard no_grad;
    fake = model.generator()->forward(in.z);
    recon = model.decoder()->forward(model.encoder()->forward(in.x));
  }
  auto out_real = d->forward(in.x);
  auto out_recon = d->forward(recon);
  auto out_fake = d->forward(fake);
  auto out_real_t = d->forward(in.pseudo.images);

  const auto mode = cfg.mode;
  ScoreFn score = [&](const torch::Tensor& images) { return gan_score(d->forward(images).gan_logit, mode); };
  auto gp = gradient_penalty(score, in.x, fake, state.rng);
  auto gan = d_gan_loss(out_real.gan_logit, out_recon.gan_logit, out_fake.gan_logit, gp, in.alpha, cfg.weights, mode);

  torch::Tensor fake_logits;
  if (cfg.d_cls_fake_term) {
    fake_logits = cfg.rotate_fakes_for_d ? d->forward(apply_same(fake, in.pseudo.labels).images).class_logits
                                         : out_fake.class_logits;
  }
  auto cls = d_cls_loss(out_real_t.class_logits, in.pseudo.labels, fake_logits);
  const double gan_value = checked(gan, "loss_d_gan", state);
  const double cls_value = checked(cls, "loss_d_cls", state);
  d_total(gan, cls, cfg.weights).backward();
  state.d_optimizer().step();
  clear_grads(model);
  return {gan_value, cls_value};
}

std::pair<double, double> generator_update(TrainState& state, const StepInputs& in) {
  auto& model = state.model();
  auto& d = model.discriminator();
  const auto& cfg = state.config();
  BufferGuard keep_d({d.get()});
  clear_grads(model);

  auto fake = model.generator()->forward(in.z);
  torch::Tensor score_real, logits_real_t;
  {
    torch::NoGradGuard no_grad;
    score_real = gan_score(d->forward(in.x).gan_logit, cfg.mode);
    logits_real_t = d->forward(in.pseudo.images).class_logits;
  }
  auto score_fake = gan_score(d->forward(fake).gan_logit, cfg.mode);
  auto gan = g_gan_loss(score_real, score_fake);
  auto fake_t = apply_same(fake, in.pseudo.labels);
  auto cls = g_cls_loss(logits_real_t, in.pseudo.labels, d->forward(fake_t.images).class_logits, cfg.g_cls_mode);
  const double gan_value = checked(gan, "loss_g_gan", state);
  const double cls_value = checked(cls, "loss_g_cls", state);
  g_total(gan, cls, cfg.weights).backward();
  state.g_optimizer().step();
  clear_grads(model);
  return {gan_value, cls_value};
}

StepLosses train_step(TrainState& state, const torch::Tensor& x) {
  const auto& cfg = state.config();
  if (x.dim() != 4 || x.size(0) != cfg.batch_size)
    throw std::invalid_argument("train_step expects a batch of " + std::to_string(cfg.batch_size) + " images");
  StepInputs in;
  in.x = x;
  in.alpha = alpha_schedule(std::min(state.iteration, cfg.n_iter), cfg.n_iter, cfg.effective_n_decay(),
                            cfg.weights.alpha0, cfg.alpha_literal_ramp);
  in.z = sample_latent(x.size(0), cfg.arch.latent_dim, state.rng);
  in.pseudo = make_pseudo_batch(x, cfg.arch.num_transforms, state.rng);

  StepLosses losses;
  losses.alpha = in.alpha;
  losses.ae = ae_update(state, in);
  for (int i = 0; i < cfg.n_critic; ++i) std::tie(losses.d_gan, losses.d_cls) = discriminator_update(state, in);
  std::tie(losses.g_gan, losses.g_cls) = generator_update(state, in);
  ++state.iteration;
  state.trace.push_back(losses);
  return losses;
}

// ---------------------------------------------------------------------------
// Evaluation

torch::Tensor generate_samples(TrainState& state, std::int64_t n, std::uint64_t stream) {
  EvalGuard eval(state.model());
  GeneratorSource source(state, n, stream);
  std::vector<torch::Tensor> chunks;
  for (std::int64_t done = 0; done < n; done += 500) chunks.push_back(source.draw(std::min<std::int64_t>(500, n - done)));
  return torch::cat(chunks);
}

double evaluate_fid(TrainState& state, const FrechetReference& real, const FeatureExtractor& extractor) {
  EvalGuard eval(state.model());
  GeneratorSource source(state, state.config().fid.n_fake, static_cast<std::uint64_t>(state.iteration));
  return real.distance(source_stats(source, extractor, state.config().fid.n_fake));
}

// ---------------------------------------------------------------------------
// Loop

TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options) {
  config.validate();
  if (dataset.size() < config.batch_size) throw std::invalid_argument("dataset is smaller than one minibatch");
  if (dataset.image_side() != config.arch.image_side || dataset.channels() != config.arch.channels)
    throw std::invalid_argument("dataset images do not match the architecture");

  auto state = std::make_unique<TrainState>(config);
  if (options.resume_from) load_checkpoint_into(*options.resume_from, *state);

  MinibatchStream stream(dataset, config.batch_size, Rng::derive(config.seed, kDataStream).next_u64());
  stream.seek(state->data_position);

  std::optional<FrechetReference> reference;
  FeatureExtractor extractor = options.extractor;
  if (config.fid_every > 0) {
    if (!extractor) extractor = make_feature_extractor(config.fid.extractor, config.fid.extractor_path);
    if (dataset.size() < config.fid.n_real)
      throw std::invalid_argument("fid.n_real (" + std::to_string(config.fid.n_real) + ") exceeds the dataset size (" +
                                  std::to_string(dataset.size()) + ")");
    DatasetImageSource real(dataset);
    reference.emplace(source_stats(real, extractor, config.fid.n_real));
  }

  std::ofstream log;
  std::filesystem::path checkpoint_path;
  if (options.output_dir) {
    std::filesystem::create_directories(*options.output_dir);
    checkpoint_path = *options.output_dir / "checkpoint.bin";
    log.open(*options.output_dir / "metrics.jsonl", std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write metric log in " + options.output_dir->string());
    for (const auto& r : state->history) log << to_json_line(r) << "\n";
    log.flush();
  }

  const auto last = std::min(config.n_iter, options.stop_at.value_or(config.n_iter));
  while (state->iteration < last) {
    const auto losses = train_step(*state, stream.next());
    state->data_position = stream.position();
    const auto t = state->iteration;
    const bool fid_due = reference && t % config.fid_every == 0;
    if (fid_due || t % config.log_every == 0 || t == config.n_iter) {
      MetricRecord record{t, losses, std::nullopt};
      if (fid_due) record.fid = evaluate_fid(*state, *reference, extractor);
      state->history.push_back(record);
      if (log.is_open()) {
        log << to_json_line(record) << "\n";
        log.flush();
      }
      if (options.on_record) options.on_record(record);
    }
    if (options.output_dir && config.checkpoint_every > 0 && t % config.checkpoint_every == 0 && t < last)
      save_checkpoint(*state, checkpoint_path);
  }
  if (options.output_dir) save_checkpoint(*state, checkpoint_path);

  TrainResult result;
  result.log = state->history;
  result.state = std::move(state);
  return result;
}

}  // namespace advss
