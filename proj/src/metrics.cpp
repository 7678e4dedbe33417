#include "advss/metrics.hpp"

#include <torch/script.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advss {

namespace {

torch::Tensor as_feature_matrix(const torch::Tensor& features) {
  if (features.dim() != 2) throw std::invalid_argument("features must be an N x F matrix");
  return features.detach().to(torch::kFloat64);
}

/// Clips small negative eigenvalues; rejects clearly indefinite input.
torch::Tensor clipped_eigenvalues(const torch::Tensor& eigenvalues) {
  const double scale = std::max(1.0, eigenvalues.abs().max().item<double>());
  const double most_negative = eigenvalues.min().item<double>();
  if (most_negative < -1e-6 * scale)
    throw std::domain_error("covariance product is not positive semi-definite (eigenvalue " +
                            std::to_string(most_negative) + ")");
  return eigenvalues.clamp_min(0.0);
}

}  // namespace

FrechetStats gaussian_stats(const torch::Tensor& features) {
  StatsAccumulator acc;
  acc.add(features);
  return acc.finalize();
}

void StatsAccumulator::add(const torch::Tensor& features) {
  auto f = as_feature_matrix(features);
  const auto m = f.size(0);
  if (m == 0) return;
  StatsAccumulator chunk;
  chunk.n_ = m;
  chunk.mean_ = f.mean(0);
  auto centered = f - chunk.mean_;
  chunk.scatter_ = centered.t().mm(centered);
  merge(chunk);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    mean_ = other.mean_.clone();
    scatter_ = other.scatter_.clone();
    return;
  }
  if (mean_.size(0) != other.mean_.size(0)) throw std::invalid_argument("StatsAccumulator: feature width mismatch");
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  auto delta = other.mean_ - mean_;
  mean_ = mean_ + delta * (nb / n);
  scatter_ = scatter_ + other.scatter_ + torch::outer(delta, delta) * (na * nb / n);
  n_ += other.n_;
}

FrechetStats StatsAccumulator::finalize() const {
  if (n_ < 2) throw std::invalid_argument("gaussian_stats: need at least 2 samples, got " + std::to_string(n_));
  auto sigma = scatter_ / static_cast<double>(n_ - 1);
  sigma = 0.5 * (sigma + sigma.t());
  return {mean_.clone(), sigma, n_};
}

torch::Tensor psd_sqrt(const torch::Tensor& matrix) {
  auto sym = 0.5 * (matrix + matrix.t());
  auto [eigenvalues, eigenvectors] = torch::linalg_eigh(sym);
  auto roots = clipped_eigenvalues(eigenvalues).sqrt();
  return (eigenvectors * roots.unsqueeze(0)).mm(eigenvectors.t());
}

namespace {

double trace_sqrt_product(const torch::Tensor& sqrt_a, const torch::Tensor& sigma_b) {
  auto inner = sqrt_a.mm(sigma_b).mm(sqrt_a);
  inner = 0.5 * (inner + inner.t());
  return clipped_eigenvalues(torch::linalg_eigvalsh(inner)).sqrt().sum().item<double>();
}

void require_matching(const FrechetStats& a, const FrechetStats& b) {
  if (!a.mu.defined() || !b.mu.defined()) throw std::invalid_argument("frechet_distance: empty stats");
  if (a.mu.size(0) != b.mu.size(0))
    throw std::invalid_argument("frechet_distance: feature dimensions differ (" + std::to_string(a.mu.size(0)) +
                                " vs " + std::to_string(b.mu.size(0)) + ")");
}

}  // namespace

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  require_matching(a, b);
  const double mean_term = (a.mu - b.mu).pow(2).sum().item<double>();
  const double traces = (a.sigma.trace() + b.sigma.trace()).item<double>();
  const double d = mean_term + traces - 2.0 * trace_sqrt_product(psd_sqrt(a.sigma), b.sigma);
  return std::max(0.0, d);
}

FrechetReference::FrechetReference(FrechetStats stats)
    : stats_(std::move(stats)), sigma_sqrt_(psd_sqrt(stats_.sigma)), trace_(stats_.sigma.trace().item<double>()) {}

double FrechetReference::distance(const FrechetStats& other) const {
  require_matching(stats_, other);
  const double mean_term = (stats_.mu - other.mu).pow(2).sum().item<double>();
  const double d =
      mean_term + trace_ + other.sigma.trace().item<double>() - 2.0 * trace_sqrt_product(sigma_sqrt_, other.sigma);
  return std::max(0.0, d);
}

torch::Tensor TensorImageSource::draw(std::int64_t count) {
  if (count > available())
    throw std::invalid_argument("image source exhausted: requested " + std::to_string(count) + ", " +
                                std::to_string(available()) + " left");
  auto out = images_.narrow(0, cursor_, count);
  cursor_ += count;
  if (out.scalar_type() == torch::kUInt8) return out.to(torch::kFloat32) / 255.0;
  return out;
}

FeatureExtractor identity_features() {
  return [](const torch::Tensor& images) { return images.flatten(1); };
}

FeatureExtractor torchscript_features(const std::string& path) {
  auto module = std::make_shared<torch::jit::script::Module>(torch::jit::load(path));
  module->eval();
  return [module](const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    auto out = module->forward({images.permute({0, 3, 1, 2}).to(torch::kFloat32).contiguous()}).toTensor();
    return out.flatten(1);
  };
}

FeatureExtractor make_feature_extractor(const std::string& name, const std::string& path) {
  if (name == "identity") return identity_features();
  if (name == "torchscript") {
    if (path.empty()) throw std::invalid_argument("torchscript feature extractor needs a module path");
    return torchscript_features(path);
  }
  throw std::invalid_argument("unknown feature extractor '" + name + "' (expected identity or torchscript)");
}

FrechetStats source_stats(ImageSource& source, const FeatureExtractor& extractor, std::int64_t count,
                          std::int64_t chunk) {
  if (count < 2) throw std::invalid_argument("need at least 2 samples for feature statistics");
  if (source.available() < count)
    throw std::invalid_argument("insufficient samples: requested " + std::to_string(count) + ", source has " +
                                std::to_string(source.available()));
  torch::NoGradGuard no_grad;
  StatsAccumulator acc;
  for (std::int64_t done = 0; done < count; done += chunk) {
    const auto take = std::min(chunk, count - done);
    acc.add(extractor(source.draw(take)));
  }
  return acc.finalize();
}

double fid(ImageSource& real, ImageSource& fake, const FeatureExtractor& extractor, std::int64_t n_real,
           std::int64_t n_fake) {
  if (real.available() < n_real)
    throw std::invalid_argument("fid: real source has " + std::to_string(real.available()) + " samples, need " +
                                std::to_string(n_real));
  if (fake.available() < n_fake)
    throw std::invalid_argument("fid: fake source has " + std::to_string(fake.available()) + " samples, need " +
                                std::to_string(n_fake));
  auto a = source_stats(real, extractor, n_real);
  auto b = source_stats(fake, extractor, n_fake);
  return frechet_distance(a, b);
}

std::vector<double> smooth(const std::vector<double>& series, int window) {
  if (window < 1) throw std::invalid_argument("smooth: window must be >= 1");
  const auto n = static_cast<std::int64_t>(series.size());
  const std::int64_t left = (window - 1) / 2;
  const std::int64_t right = window / 2;
  std::vector<double> out(series.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::int64_t>(0, i - left);
    const auto hi = std::min<std::int64_t>(n - 1, i + right);
    double sum = 0.0;
    for (auto j = lo; j <= hi; ++j) sum += series[j];
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace advss
