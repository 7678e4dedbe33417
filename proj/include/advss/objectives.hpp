#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <string_view>

#include "advss/rng.hpp"

namespace advss {

// Every objective here is a quantity its owner minimizes: D minimizes
// d_total, G minimizes g_total, E and G minimize ae_loss. Expectations are
// minibatch means.

enum class GanLossMode { log, hinge };
enum class GeneratorClsMode { match, ssgan_min };

std::string to_string(GanLossMode mode);
std::string to_string(GeneratorClsMode mode);
GanLossMode parse_gan_loss_mode(std::string_view name);
GeneratorClsMode parse_generator_cls_mode(std::string_view name);

struct LossWeights {
  double lambda_d = 1.0;  // classification weight in the discriminator objective
  double lambda_g = 0.1;  // classification weight in the generator objective
  double lambda_p = 1.0;  // gradient penalty
  double lambda_r = 1.0;  // auto-encoder distance regularizer
  double alpha0 = 0.05;   // weight of reconstructions treated as real

  /// Throws std::invalid_argument on negative / non-finite weights or alpha0 > 1.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Probabilities below this are clamped before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// The GAN score in the domain the losses consume: sigmoid(logit) for log
/// mode, the raw logit for hinge mode.
torch::Tensor gan_score(const torch::Tensor& logit, GanLossMode mode);

/// Maps an image batch to one GAN score per sample.
using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Mean over samples of (||grad_xhat score(xhat)||_2 - 1)^2 with
/// xhat_i = mu_i * real_i + (1 - mu_i) * fake_i. `mu` has one entry per
/// sample. The returned value stays differentiable w.r.t. the parameters
/// behind `score`.
torch::Tensor gradient_penalty(const ScoreFn& score, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& mu);
/// Same, drawing mu_i ~ U[0,1) from `rng`.
torch::Tensor gradient_penalty(const ScoreFn& score, const torch::Tensor& real, const torch::Tensor& fake,
                               Rng& rng);

/// Discriminator GAN objective on raw logits, with reconstructions weighted
/// by alpha on the real side.
torch::Tensor d_gan_loss(const torch::Tensor& logit_real, const torch::Tensor& logit_recon,
                         const torch::Tensor& logit_fake, const torch::Tensor& gp, double alpha,
                         const LossWeights& weights, GanLossMode mode);

/// (K+1)-way cross-entropy: transformed reals against their 1-based labels
/// plus untransformed fakes against class K+1. Passing an undefined
/// `logits_fake` drops the fake term (non-adversarial classifier).
torch::Tensor d_cls_loss(const torch::Tensor& logits_real_t, const torch::Tensor& labels,
                         const torch::Tensor& logits_fake);

torch::Tensor d_total(const torch::Tensor& gan, const torch::Tensor& cls, const LossWeights& weights);

/// |mean(score_real) - mean(score_fake)|.
torch::Tensor g_gan_loss(const torch::Tensor& score_real, const torch::Tensor& score_fake);

/// match: |mean log P(label | real_t) - mean log P(label | fake_t)|.
/// ssgan_min: mean cross-entropy of fake_t against the labels.
torch::Tensor g_cls_loss(const torch::Tensor& logits_real_t, const torch::Tensor& labels,
                         const torch::Tensor& logits_fake_t, GeneratorClsMode mode);

torch::Tensor g_total(const torch::Tensor& gan, const torch::Tensor& cls, const LossWeights& weights);

/// Feature-space reconstruction error (mean of squared differences) plus
/// lambda_r * vr.
torch::Tensor ae_loss(const torch::Tensor& phi_x, const torch::Tensor& phi_recon, const torch::Tensor& vr,
                      const LossWeights& weights);

/// Pluggable latent/data distance constraint V_R(x, G(z), E(x), z).
using DistanceRegularizer = std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& gz,
                                                        const torch::Tensor& ex, const torch::Tensor& z)>;

/// Default V_R: batch mean of (|x - G(z)|_1 / d_x - |E(x) - z|_1 / d_z)^2.
torch::Tensor distance_regularizer(const torch::Tensor& x, const torch::Tensor& gz, const torch::Tensor& ex,
                                   const torch::Tensor& z);

/// alpha0 until n_decay, then a linear ramp down to 0 at n_iter. With
/// `literal_ramp` the post-decay value is alpha0 * n / (n_iter - n_decay)
/// instead (rising from 0).
double alpha_schedule(std::int64_t iter, std::int64_t n_iter, std::int64_t n_decay, double alpha0,
                      bool literal_ramp = false);

}  // namespace advss
