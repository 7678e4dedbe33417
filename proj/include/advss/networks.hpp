#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace advss {

enum class Family { dcgan, sncnn, resnet };

std::string to_string(Family family);
Family parse_family(std::string_view name);

/// Network family plus the sizes every builder needs.
///
/// Channel counts follow the published tables at base_width == 64 and scale
/// linearly with base_width otherwise, so base_width == 8 gives a desk-sized
/// network with the same layer plan.
struct ArchitectureSpec {
  Family family = Family::dcgan;
  int image_side = 32;
  int latent_dim = 128;
  int base_width = 64;
  int num_transforms = 4;
  int channels = 3;
  int sn_power_iterations = 1;

  /// Channel count for a layer the tables list with `paper_channels` maps.
  int width(int paper_channels) const;

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Throws std::invalid_argument when the family cannot be built at this size.
void validate(const ArchitectureSpec& spec);

/// Shape of the discriminator feature tap for a spec.
std::int64_t feature_dim(const ArchitectureSpec& spec);

struct DiscriminatorOutput {
  torch::Tensor gan_logit;     // N, raw real/fake logit
  torch::Tensor class_logits;  // N x (K+1)
  torch::Tensor features;      // N x F, flattened last trunk activation
};

// ---------------------------------------------------------------------------
// Building blocks

/// Convolution whose weight is divided by a power-iteration estimate of its
/// largest singular value on every forward pass. The estimate vector `u`
/// is refined only in training mode.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(int in_channels, int out_channels, int kernel, int stride, int padding,
               int power_iterations);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor normalized_weight();
  /// Runs `iterations` power iterations on the current weight.
  void refine(int iterations);

  torch::Tensor weight, bias, u;

 private:
  int stride_, padding_, power_iterations_;
};
TORCH_MODULE(SNConv2d);

class SumPoolImpl : public torch::nn::Module {
 public:
  torch::Tensor forward(const torch::Tensor& x) { return x.sum({2, 3}); }
};
TORCH_MODULE(SumPool);

/// Residual block. `resample` is +1 for nearest upsampling (generator),
/// -1 for average-pool downsampling and 0 for none. `optimized` selects the
/// first-block variant of the discriminator (no leading activation).
struct ResBlockOptions {
  int in_channels;
  int out_channels;
  int resample = 0;
  bool batch_norm = false;
  bool spectral_norm = false;
  bool optimized = false;
  int power_iterations = 1;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(const ResBlockOptions& options);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::Tensor run_conv(torch::nn::AnyModule& layer, const torch::Tensor& x);
  torch::Tensor resample(const torch::Tensor& x) const;

  ResBlockOptions options_;
  torch::nn::AnyModule conv1_, conv2_, shortcut_;
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(ResBlock);

// ---------------------------------------------------------------------------
// Networks. Each registers its layers under consecutive integer names so
// parameters are addressable as "<component>/<layer-index>/<role>".

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ArchitectureSpec& spec);
  /// N x H x W x C images -> N x d_z codes.
  torch::Tensor forward(const torch::Tensor& images);
  const ArchitectureSpec& spec() const { return spec_; }

 private:
  ArchitectureSpec spec_;
  std::vector<torch::nn::AnyModule> layers_;
};
TORCH_MODULE(Encoder);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const ArchitectureSpec& spec);
  /// N x d_z codes -> N x H x W x 3 images in [0, 1].
  torch::Tensor forward(const torch::Tensor& z);
  const ArchitectureSpec& spec() const { return spec_; }

 private:
  ArchitectureSpec spec_;
  std::vector<torch::nn::AnyModule> layers_;
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ArchitectureSpec& spec);
  /// One trunk evaluation feeding both heads.
  DiscriminatorOutput forward(const torch::Tensor& images);
  const ArchitectureSpec& spec() const { return spec_; }

  torch::nn::Linear gan_head() const { return gan_head_; }
  torch::nn::Linear class_head() const { return class_head_; }
  /// Parameters of the shared trunk only (heads excluded).
  std::vector<torch::Tensor> trunk_parameters() const;
  /// Spectrally normalized trunk layers (empty unless family == sncnn).
  std::vector<SNConv2d> spectral_layers() const;

 private:
  ArchitectureSpec spec_;
  std::vector<torch::nn::AnyModule> trunk_;
  torch::nn::Linear gan_head_{nullptr}, class_head_{nullptr};
};
TORCH_MODULE(Discriminator);

Encoder build_encoder(const ArchitectureSpec& spec);
Generator build_generator(const ArchitectureSpec& spec);
Discriminator build_discriminator(const ArchitectureSpec& spec);

/// Validates the batch shape, then runs D once.
DiscriminatorOutput discriminate(Discriminator& d, const torch::Tensor& batch);

/// Applies sigmoid for log-mode losses; the GAN head itself is linear.
torch::Tensor probability(const torch::Tensor& logit);

/// Encoder, shared decoder/generator and dual-head discriminator.
class GanModel {
 public:
  explicit GanModel(const ArchitectureSpec& spec);

  const ArchitectureSpec& spec() const { return spec_; }
  Encoder& encoder() { return encoder_; }
  Generator& generator() { return generator_; }
  /// The auto-encoder decoder is the generator itself.
  Generator& decoder() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }

  void train(bool on = true);
  void eval() { train(false); }
  void to(torch::ScalarType dtype);

  /// Parameters and buffers keyed "<component>/<layer-index>/<role>".
  std::vector<std::pair<std::string, torch::Tensor>> named_state();

 private:
  ArchitectureSpec spec_;
  Encoder encoder_;
  Generator generator_;
  Discriminator discriminator_;
};

/// Orthogonal init for every conv/linear weight and zero bias.
void initialize_weights(torch::nn::Module& module);

/// Converts a module's dotted parameter name to "<component>/<index>/<role>".
std::string state_key(std::string_view component, std::string_view dotted_name);

}  // namespace advss
