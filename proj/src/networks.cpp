#include "advss/networks.hpp"

#include <stdexcept>

namespace advss {

namespace nn = torch::nn;

std::string to_string(Family family) {
  switch (family) {
    case Family::dcgan: return "dcgan";
    case Family::sncnn: return "sncnn";
    case Family::resnet: return "resnet";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "dcgan") return Family::dcgan;
  if (name == "sncnn") return Family::sncnn;
  if (name == "resnet") return Family::resnet;
  throw std::invalid_argument("unknown architecture family '" + std::string(name) +
                              "' (expected dcgan, sncnn or resnet)");
}

int ArchitectureSpec::width(int paper_channels) const {
  return std::max(1, paper_channels * base_width / 64);
}

void validate(const ArchitectureSpec& spec) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("architecture " + to_string(spec.family) + "/" +
                                std::to_string(spec.image_side) + ": " + why);
  };
  if (spec.latent_dim <= 0) fail("latent_dim must be positive");
  if (spec.base_width <= 0) fail("base_width must be positive");
  if (spec.num_transforms < 1) fail("num_transforms must be >= 1");
  if (spec.channels <= 0) fail("channels must be positive");
  if (spec.sn_power_iterations < 1) fail("sn_power_iterations must be >= 1");
  if (spec.image_side <= 0) fail("image_side must be positive");
  switch (spec.family) {
    case Family::dcgan:
    case Family::sncnn:
      if (spec.image_side % 16 != 0) fail("image_side must be divisible by 16");
      break;
    case Family::resnet:
      if (spec.image_side != 32 && spec.image_side != 48)
        fail("resnet plans exist for image_side 32 (CIFAR-10) and 48 (STL-10) only");
      break;
  }
}

std::int64_t feature_dim(const ArchitectureSpec& spec) {
  validate(spec);
  const std::int64_t s = spec.image_side;
  switch (spec.family) {
    case Family::dcgan: return spec.width(512) * (s / 16) * (s / 16);
    case Family::sncnn: return spec.width(512) * (s / 8) * (s / 8);
    case Family::resnet:
      return s == 32 ? spec.width(128) * 8 * 8 : spec.width(1024) * 3 * 3;
  }
  return 0;
}

namespace {

torch::Tensor to_nchw(const torch::Tensor& x) { return x.permute({0, 3, 1, 2}); }
torch::Tensor to_nhwc(const torch::Tensor& x) { return x.permute({0, 2, 3, 1}).contiguous(); }

/// Registers layers under "0", "1", ... in order of addition.
class LayerList {
 public:
  LayerList(nn::Module& owner, std::vector<nn::AnyModule>& layers) : owner_(owner), layers_(layers) {}

  template <typename Holder>
  Holder add(Holder layer) {
    owner_.register_module(std::to_string(layers_.size()), layer.ptr());
    layers_.emplace_back(layer);
    return layer;
  }

  std::size_t size() const { return layers_.size(); }

 private:
  nn::Module& owner_;
  std::vector<nn::AnyModule>& layers_;
};

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

nn::ConvTranspose2d deconv(int in, int out, int kernel, int stride, int padding, int output_padding) {
  return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, kernel)
                                 .stride(stride)
                                 .padding(padding)
                                 .output_padding(output_padding));
}

nn::LeakyReLU lrelu(double slope) { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(slope)); }

torch::Tensor run(std::vector<nn::AnyModule>& layers, torch::Tensor x) {
  for (auto& layer : layers) x = layer.forward(x);
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------

SNConv2dImpl::SNConv2dImpl(int in_channels, int out_channels, int kernel, int stride, int padding,
                           int power_iterations)
    : stride_(stride), padding_(padding), power_iterations_(power_iterations) {
  weight = register_parameter("weight", torch::empty({out_channels, in_channels, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out_channels}));
  nn::init::kaiming_uniform_(weight, std::sqrt(5.0));
  u = register_buffer("u", torch::nn::functional::normalize(
                               torch::randn({out_channels}),
                               torch::nn::functional::NormalizeFuncOptions().dim(0).eps(1e-12)));
}

void SNConv2dImpl::refine(int iterations) {
  torch::NoGradGuard no_grad;
  const auto opts = torch::nn::functional::NormalizeFuncOptions().dim(0).eps(1e-12);
  auto w = weight.reshape({weight.size(0), -1});
  auto u_est = u.clone();
  for (int i = 0; i < iterations; ++i) {
    auto v = torch::nn::functional::normalize(torch::mv(w.t(), u_est), opts);
    u_est = torch::nn::functional::normalize(torch::mv(w, v), opts);
  }
  u.copy_(u_est);
}

torch::Tensor SNConv2dImpl::normalized_weight() {
  if (is_training()) refine(power_iterations_);
  auto w = weight.reshape({weight.size(0), -1});
  // Snapshot u: the next training forward updates the buffer in place, which
  // would invalidate it for a backward through this graph.
  torch::Tensor u_now, v;
  {
    torch::NoGradGuard no_grad;
    u_now = u.clone();
    v = torch::nn::functional::normalize(torch::mv(w.t(), u_now),
                                         torch::nn::functional::NormalizeFuncOptions().dim(0).eps(1e-12));
  }
  auto sigma = torch::dot(u_now, torch::mv(w, v));
  return weight / sigma;
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, normalized_weight(), bias, stride_, padding_);
}

// ---------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(const ResBlockOptions& options) : options_(options) {
  auto make_conv = [&](int in, int out, int kernel, int padding) -> nn::AnyModule {
    if (options_.spectral_norm)
      return nn::AnyModule(SNConv2d(in, out, kernel, 1, padding, options_.power_iterations));
    return nn::AnyModule(conv(in, out, kernel, 1, padding));
  };
  const int in = options_.in_channels;
  const int out = options_.out_channels;
  // The hidden width follows the output width in both directions.
  conv1_ = make_conv(in, out, 3, 1);
  conv2_ = make_conv(out, out, 3, 1);
  register_module("conv1", conv1_.ptr());
  register_module("conv2", conv2_.ptr());
  if (options_.batch_norm) {
    bn1_ = register_module("bn1", nn::BatchNorm2d(in));
    bn2_ = register_module("bn2", nn::BatchNorm2d(out));
  }
  if (in != out || options_.resample != 0) {
    shortcut_ = make_conv(in, out, 1, 0);
    register_module("shortcut", shortcut_.ptr());
  }
}

torch::Tensor ResBlockImpl::resample(const torch::Tensor& x) const {
  if (options_.resample > 0)
    return torch::upsample_nearest2d(x, std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2});
  if (options_.resample < 0) return torch::avg_pool2d(x, 2);
  return x;
}

torch::Tensor ResBlockImpl::run_conv(nn::AnyModule& layer, const torch::Tensor& x) { return layer.forward(x); }

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  const bool up = options_.resample > 0;
  torch::Tensor h = x;
  if (!options_.optimized) {
    if (bn1_) h = bn1_->forward(h);
    h = torch::relu(h);
  }
  if (up) h = resample(h);
  h = run_conv(conv1_, h);
  if (bn2_) h = bn2_->forward(h);
  h = torch::relu(h);
  h = run_conv(conv2_, h);
  if (!up) h = resample(h);

  torch::Tensor skip = x;
  if (!shortcut_.is_empty()) {
    if (options_.optimized) {
      skip = run_conv(shortcut_, resample(skip));
    } else if (up) {
      skip = run_conv(shortcut_, resample(skip));
    } else {
      skip = resample(run_conv(shortcut_, skip));
    }
  }
  return h + skip;
}

// ---------------------------------------------------------------------------

EncoderImpl::EncoderImpl(const ArchitectureSpec& spec) : spec_(spec) {
  validate(spec_);
  LayerList layers(*this, layers_);
  const int c = spec_.channels;
  const int s = spec_.image_side;
  switch (spec_.family) {
    case Family::dcgan: {
      const int d = spec_.width(64);
      layers.add(conv(c, d, 5, 2, 2));
      layers.add(nn::ReLU());
      int in = d;
      for (int mult : {2, 4, 8}) {
        layers.add(conv(in, d * mult, 5, 2, 2));
        layers.add(nn::BatchNorm2d(d * mult));
        layers.add(nn::ReLU());
        in = d * mult;
      }
      layers.add(nn::Flatten());
      layers.add(nn::Linear(in * (s / 16) * (s / 16), spec_.latent_dim));
      break;
    }
    case Family::sncnn: {
      layers.add(conv(c, spec_.width(64), 3, 1, 1));
      layers.add(nn::ReLU());
      int in = spec_.width(64);
      for (int paper : {128, 256, 512}) {
        layers.add(conv(in, spec_.width(paper), 4, 2, 1));
        layers.add(nn::BatchNorm2d(spec_.width(paper)));
        layers.add(nn::ReLU());
        in = spec_.width(paper);
      }
      layers.add(nn::Flatten());
      layers.add(nn::Linear(in * (s / 8) * (s / 8), spec_.latent_dim));
      break;
    }
    case Family::resnet: {
      const std::vector<int> widths =
          s == 32 ? std::vector<int>{256, 256, 256, 256} : std::vector<int>{64, 128, 256, 512};
      layers.add(conv(c, spec_.width(widths[0]), 3, 1, 1));
      int in = spec_.width(widths[0]);
      for (std::size_t i = 1; i < widths.size(); ++i) {
        ResBlockOptions o{in, spec_.width(widths[i])};
        o.resample = -1;
        o.batch_norm = true;
        layers.add(ResBlock(o));
        in = spec_.width(widths[i]);
      }
      layers.add(nn::BatchNorm2d(in));
      layers.add(nn::ReLU());
      layers.add(nn::Flatten());
      layers.add(nn::Linear(in * (s / 8) * (s / 8), spec_.latent_dim));
      break;
    }
  }
  initialize_weights(*this);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != spec_.image_side || images.size(2) != spec_.image_side ||
      images.size(3) != spec_.channels)
    throw std::invalid_argument("encoder: expected N x " + std::to_string(spec_.image_side) + " x " +
                                std::to_string(spec_.image_side) + " x " + std::to_string(spec_.channels) +
                                " batch");
  return run(layers_, to_nchw(images));
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const ArchitectureSpec& spec) : spec_(spec) {
  validate(spec_);
  LayerList layers(*this, layers_);
  const int s = spec_.image_side;
  const int out = spec_.channels;
  auto dense_to_map = [&](int channels, int side) {
    layers.add(nn::Linear(spec_.latent_dim, channels * side * side));
    layers.add(nn::Unflatten(nn::UnflattenOptions(1, {channels, side, side})));
  };
  switch (spec_.family) {
    case Family::dcgan: {
      const int d = spec_.width(64);
      dense_to_map(d * 8, s / 16);
      layers.add(nn::BatchNorm2d(d * 8));
      layers.add(nn::ReLU());
      int in = d * 8;
      for (int mult : {4, 2, 1}) {
        layers.add(deconv(in, d * mult, 5, 2, 2, 1));
        layers.add(nn::BatchNorm2d(d * mult));
        layers.add(nn::ReLU());
        in = d * mult;
      }
      layers.add(deconv(in, out, 5, 2, 2, 1));
      break;
    }
    case Family::sncnn: {
      int in = spec_.width(512);
      dense_to_map(in, s / 8);
      layers.add(nn::BatchNorm2d(in));
      layers.add(nn::ReLU());
      for (int paper : {256, 128, 64}) {
        layers.add(deconv(in, spec_.width(paper), 4, 2, 1, 0));
        layers.add(nn::BatchNorm2d(spec_.width(paper)));
        layers.add(nn::ReLU());
        in = spec_.width(paper);
      }
      layers.add(conv(in, out, 3, 1, 1));
      break;
    }
    case Family::resnet: {
      const std::vector<int> widths =
          s == 32 ? std::vector<int>{256, 256, 256, 256} : std::vector<int>{512, 256, 128, 64};
      int in = spec_.width(widths[0]);
      dense_to_map(in, s / 8);
      for (std::size_t i = 1; i < widths.size(); ++i) {
        ResBlockOptions o{in, spec_.width(widths[i])};
        o.resample = 1;
        o.batch_norm = true;
        layers.add(ResBlock(o));
        in = spec_.width(widths[i]);
      }
      layers.add(nn::BatchNorm2d(in));
      layers.add(nn::ReLU());
      layers.add(conv(in, out, 3, 1, 1));
      break;
    }
  }
  layers.add(nn::Sigmoid());
  initialize_weights(*this);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != spec_.latent_dim)
    throw std::invalid_argument("generator: expected N x " + std::to_string(spec_.latent_dim) + " latent batch");
  return to_nhwc(run(layers_, z));
}

// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const ArchitectureSpec& spec) : spec_(spec) {
  validate(spec_);
  LayerList layers(*this, trunk_);
  const int c = spec_.channels;
  const int s = spec_.image_side;
  const int pit = spec_.sn_power_iterations;
  std::int64_t head_in = 0;
  switch (spec_.family) {
    case Family::dcgan: {
      const int d = spec_.width(64);
      layers.add(conv(c, d, 5, 2, 2));
      layers.add(lrelu(0.2));
      int in = d;
      for (int mult : {2, 4, 8}) {
        layers.add(conv(in, d * mult, 5, 2, 2));
        layers.add(nn::BatchNorm2d(d * mult));
        layers.add(lrelu(0.2));
        in = d * mult;
      }
      head_in = feature_dim(spec_);
      break;
    }
    case Family::sncnn: {
      int in = c;
      for (int paper : {64, 128, 256}) {
        layers.add(SNConv2d(in, spec_.width(paper), 3, 1, 1, pit));
        layers.add(lrelu(0.1));
        layers.add(SNConv2d(spec_.width(paper), spec_.width(paper), 4, 2, 1, pit));
        layers.add(lrelu(0.1));
        in = spec_.width(paper);
      }
      layers.add(SNConv2d(in, spec_.width(512), 3, 1, 1, pit));
      layers.add(lrelu(0.1));
      head_in = feature_dim(spec_);
      break;
    }
    case Family::resnet: {
      auto block = [&](int in, int out, int resample, bool optimized) {
        ResBlockOptions o{in, out};
        o.resample = resample;
        o.optimized = optimized;
        layers.add(ResBlock(o));
      };
      if (s == 32) {
        const int w = spec_.width(128);
        block(c, w, -1, true);
        block(w, w, -1, false);
        block(w, w, 0, false);
        block(w, w, 0, false);
        head_in = w;
      } else {
        block(c, spec_.width(64), -1, true);
        block(spec_.width(64), spec_.width(128), -1, false);
        block(spec_.width(128), spec_.width(256), -1, false);
        block(spec_.width(256), spec_.width(512), -1, false);
        block(spec_.width(512), spec_.width(1024), 0, false);
        head_in = spec_.width(1024);
      }
      layers.add(nn::ReLU());
      break;
    }
  }
  gan_head_ = nn::Linear(head_in, 1);
  class_head_ = nn::Linear(head_in, spec_.num_transforms + 1);
  register_module(std::to_string(trunk_.size()), gan_head_.ptr());
  register_module(std::to_string(trunk_.size() + 1), class_head_.ptr());
  initialize_weights(*this);
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto x = run(trunk_, to_nchw(images));
  auto features = x.flatten(1);
  auto head_input = spec_.family == Family::resnet ? x.sum({2, 3}) : features;
  return {gan_head_->forward(head_input).squeeze(1), class_head_->forward(head_input), features};
}

std::vector<torch::Tensor> DiscriminatorImpl::trunk_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& layer : trunk_)
    for (auto& p : layer.ptr()->parameters()) out.push_back(p);
  return out;
}

std::vector<SNConv2d> DiscriminatorImpl::spectral_layers() const {
  std::vector<SNConv2d> out;
  for (const auto& layer : trunk_)
    if (auto sn = std::dynamic_pointer_cast<SNConv2dImpl>(layer.ptr())) out.emplace_back(sn);
  return out;
}

// ---------------------------------------------------------------------------

Encoder build_encoder(const ArchitectureSpec& spec) { return Encoder(spec); }
Generator build_generator(const ArchitectureSpec& spec) { return Generator(spec); }
Discriminator build_discriminator(const ArchitectureSpec& spec) { return Discriminator(spec); }

DiscriminatorOutput discriminate(Discriminator& d, const torch::Tensor& batch) {
  const auto& spec = d->spec();
  if (batch.dim() != 4 || batch.size(1) != spec.image_side || batch.size(2) != spec.image_side ||
      batch.size(3) != spec.channels)
    throw std::invalid_argument("discriminate: expected N x " + std::to_string(spec.image_side) + " x " +
                                std::to_string(spec.image_side) + " x " + std::to_string(spec.channels) +
                                " batch, got " + c10::str(batch.sizes()));
  return d->forward(batch);
}

torch::Tensor probability(const torch::Tensor& logit) { return torch::sigmoid(logit); }

GanModel::GanModel(const ArchitectureSpec& spec)
    : spec_(spec), encoder_(spec), generator_(spec), discriminator_(spec) {}

void GanModel::train(bool on) {
  encoder_->train(on);
  generator_->train(on);
  discriminator_->train(on);
}

void GanModel::to(torch::ScalarType dtype) {
  encoder_->to(dtype);
  generator_->to(dtype);
  discriminator_->to(dtype);
}

std::vector<std::pair<std::string, torch::Tensor>> GanModel::named_state() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto collect = [&](const char* component, nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) out.emplace_back(state_key(component, item.key()), item.value());
    for (const auto& item : module.named_buffers(true)) out.emplace_back(state_key(component, item.key()), item.value());
  };
  collect("encoder", *encoder_);
  collect("generator", *generator_);
  collect("discriminator", *discriminator_);
  return out;
}

std::string state_key(std::string_view component, std::string_view dotted_name) {
  const auto dot = dotted_name.find('.');
  if (dot == std::string_view::npos)
    return std::string(component) + "/" + std::string(dotted_name);
  return std::string(component) + "/" + std::string(dotted_name.substr(0, dot)) + "/" +
         std::string(dotted_name.substr(dot + 1));
}

void initialize_weights(nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/false)) {
    torch::Tensor weight, bias;
    if (auto* c = child->as<nn::Conv2d>()) {
      weight = c->weight, bias = c->bias;
    } else if (auto* t = child->as<nn::ConvTranspose2d>()) {
      weight = t->weight, bias = t->bias;
    } else if (auto* l = child->as<nn::Linear>()) {
      weight = l->weight, bias = l->bias;
    } else if (auto* sn = child->as<SNConv2d>()) {
      nn::init::orthogonal_(sn->weight);
      sn->bias.zero_();
      sn->refine(30);
      continue;
    } else {
      continue;
    }
    nn::init::orthogonal_(weight);
    if (bias.defined()) bias.zero_();
  }
}

}  // namespace advss
