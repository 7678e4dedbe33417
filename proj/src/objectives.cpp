#include "advss/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace advss {

namespace {

const double kLogFloor = std::log(kProbabilityFloor);

torch::Tensor safe_log_sigmoid(const torch::Tensor& x) { return torch::log_sigmoid(x).clamp_min(kLogFloor); }

torch::Tensor safe_log_softmax(const torch::Tensor& logits) {
  return torch::log_softmax(logits, 1).clamp_min(kLogFloor);
}

void require_same_rows(const torch::Tensor& a, const torch::Tensor& b, const char* op) {
  if (a.size(0) != b.size(0))
    throw std::invalid_argument(std::string(op) + ": batch sizes differ (" + std::to_string(a.size(0)) + " vs " +
                                std::to_string(b.size(0)) + ")");
}

/// Log-probabilities of the 1-based labels; checks they index real classes.
torch::Tensor label_log_prob(const torch::Tensor& logits, const torch::Tensor& labels, const char* op) {
  if (logits.dim() != 2) throw std::invalid_argument(std::string(op) + ": logits must be N x (K+1)");
  if (labels.dim() != 1 || labels.size(0) != logits.size(0))
    throw std::invalid_argument(std::string(op) + ": need one label per logits row");
  const auto k = logits.size(1) - 1;
  auto idx = labels.to(torch::kInt64);
  if (idx.numel() > 0) {
    const auto lo = idx.min().item<std::int64_t>();
    const auto hi = idx.max().item<std::int64_t>();
    if (hi == k + 1)
      throw std::invalid_argument(std::string(op) + ": real samples cannot carry the fake label K+1");
    if (lo < 1 || hi > k)
      throw std::invalid_argument(std::string(op) + ": labels must lie in {1.." + std::to_string(k) + "}");
  }
  return safe_log_softmax(logits).gather(1, (idx - 1).unsqueeze(1)).squeeze(1);
}

}  // namespace

std::string to_string(GanLossMode mode) { return mode == GanLossMode::log ? "log" : "hinge"; }

std::string to_string(GeneratorClsMode mode) { return mode == GeneratorClsMode::match ? "match" : "ssgan_min"; }

GanLossMode parse_gan_loss_mode(std::string_view name) {
  if (name == "log") return GanLossMode::log;
  if (name == "hinge") return GanLossMode::hinge;
  throw std::invalid_argument("unknown GAN loss mode '" + std::string(name) + "' (expected log or hinge)");
}

GeneratorClsMode parse_generator_cls_mode(std::string_view name) {
  if (name == "match") return GeneratorClsMode::match;
  if (name == "ssgan_min") return GeneratorClsMode::ssgan_min;
  throw std::invalid_argument("unknown generator classification mode '" + std::string(name) +
                              "' (expected match or ssgan_min)");
}

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument(std::string(name) + " must be finite and non-negative");
  };
  check(lambda_d, "lambda_d");
  check(lambda_g, "lambda_g");
  check(lambda_p, "lambda_p");
  check(lambda_r, "lambda_r");
  check(alpha0, "alpha0");
  if (alpha0 > 1.0) throw std::invalid_argument("alpha0 must be <= 1");
}

torch::Tensor gan_score(const torch::Tensor& logit, GanLossMode mode) {
  return mode == GanLossMode::log ? torch::sigmoid(logit) : logit;
}

torch::Tensor gradient_penalty(const ScoreFn& score, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& mu) {
  if (real.sizes() != fake.sizes())
    throw std::invalid_argument("gradient_penalty: real and fake batches differ in shape");
  if (mu.dim() != 1 || mu.size(0) != real.size(0))
    throw std::invalid_argument("gradient_penalty: need one interpolation weight per sample");

  std::vector<std::int64_t> bshape(real.dim(), 1);
  bshape[0] = real.size(0);
  auto m = mu.to(real.scalar_type()).reshape(bshape);
  auto x_hat = (m * real.detach() + (1 - m) * fake.detach()).requires_grad_(true);
  auto s = score(x_hat);
  auto grad = torch::autograd::grad({s.sum()}, {x_hat}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                    /*create_graph=*/true)[0];
  // The epsilon keeps the norm differentiable at a zero gradient.
  auto norm = (grad.flatten(1).pow(2).sum(1) + 1e-12).sqrt();
  return (norm - 1).pow(2).mean();
}

torch::Tensor gradient_penalty(const ScoreFn& score, const torch::Tensor& real, const torch::Tensor& fake,
                               Rng& rng) {
  return gradient_penalty(score, real, fake, rng.uniform_tensor({real.size(0)}, torch::kFloat64));
}

torch::Tensor d_gan_loss(const torch::Tensor& logit_real, const torch::Tensor& logit_recon,
                         const torch::Tensor& logit_fake, const torch::Tensor& gp, double alpha,
                         const LossWeights& weights, GanLossMode mode) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("d_gan_loss: alpha must lie in [0, 1]");
  torch::Tensor real_term, recon_term, fake_term;
  if (mode == GanLossMode::log) {
    real_term = safe_log_sigmoid(logit_real).mean();
    recon_term = safe_log_sigmoid(logit_recon).mean();
    fake_term = safe_log_sigmoid(-logit_fake).mean();  // log(1 - sigmoid(s))
  } else {
    real_term = torch::clamp_max(logit_real - 1, 0).mean();
    recon_term = torch::clamp_max(logit_recon - 1, 0).mean();
    fake_term = torch::clamp_max(-logit_fake - 1, 0).mean();
  }
  return -(1 - alpha) * real_term - alpha * recon_term - fake_term + weights.lambda_p * gp;
}

torch::Tensor d_cls_loss(const torch::Tensor& logits_real_t, const torch::Tensor& labels,
                         const torch::Tensor& logits_fake) {
  auto loss = -label_log_prob(logits_real_t, labels, "d_cls_loss").mean();
  if (!logits_fake.defined()) return loss;
  if (logits_fake.dim() != 2 || logits_fake.size(1) != logits_real_t.size(1))
    throw std::invalid_argument("d_cls_loss: real and fake logits differ in width");
  const auto fake_class = logits_fake.size(1) - 1;
  return loss - safe_log_softmax(logits_fake).select(1, fake_class).mean();
}

torch::Tensor d_total(const torch::Tensor& gan, const torch::Tensor& cls, const LossWeights& weights) {
  return gan + weights.lambda_d * cls;
}

torch::Tensor g_gan_loss(const torch::Tensor& score_real, const torch::Tensor& score_fake) {
  return (score_real.mean() - score_fake.mean()).abs();
}

torch::Tensor g_cls_loss(const torch::Tensor& logits_real_t, const torch::Tensor& labels,
                         const torch::Tensor& logits_fake_t, GeneratorClsMode mode) {
  require_same_rows(logits_fake_t, labels, "g_cls_loss");
  auto fake_lp = label_log_prob(logits_fake_t, labels, "g_cls_loss").mean();
  if (mode == GeneratorClsMode::ssgan_min) return -fake_lp;
  auto real_lp = label_log_prob(logits_real_t, labels, "g_cls_loss").mean();
  return (real_lp - fake_lp).abs();
}

torch::Tensor g_total(const torch::Tensor& gan, const torch::Tensor& cls, const LossWeights& weights) {
  return gan + weights.lambda_g * cls;
}

torch::Tensor ae_loss(const torch::Tensor& phi_x, const torch::Tensor& phi_recon, const torch::Tensor& vr,
                      const LossWeights& weights) {
  if (phi_x.sizes() != phi_recon.sizes()) throw std::invalid_argument("ae_loss: feature shapes differ");
  return (phi_x - phi_recon).pow(2).mean() + weights.lambda_r * vr;
}

torch::Tensor distance_regularizer(const torch::Tensor& x, const torch::Tensor& gz, const torch::Tensor& ex,
                                   const torch::Tensor& z) {
  if (x.sizes() != gz.sizes()) throw std::invalid_argument("distance_regularizer: x and G(z) differ in shape");
  if (ex.sizes() != z.sizes()) throw std::invalid_argument("distance_regularizer: E(x) and z differ in shape");
  require_same_rows(x, z, "distance_regularizer");
  const double d_x = static_cast<double>(x[0].numel());
  const double d_z = static_cast<double>(z[0].numel());
  auto data_dist = (x - gz).abs().flatten(1).sum(1) / d_x;
  auto latent_dist = (ex - z).abs().flatten(1).sum(1) / d_z;
  return (data_dist - latent_dist).pow(2).mean();
}

double alpha_schedule(std::int64_t iter, std::int64_t n_iter, std::int64_t n_decay, double alpha0,
                      bool literal_ramp) {
  if (n_decay < 0 || n_decay >= n_iter)
    throw std::invalid_argument("alpha_schedule: need 0 <= n_decay < n_iter");
  if (iter < 0 || iter > n_iter) throw std::invalid_argument("alpha_schedule: iter outside [0, n_iter]");
  if (iter < n_decay) return alpha0;
  const double frac = static_cast<double>(iter - n_decay) / static_cast<double>(n_iter - n_decay);
  return literal_ramp ? alpha0 * frac : alpha0 * (1.0 - frac);
}

}  // namespace advss
