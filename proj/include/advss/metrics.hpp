#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace advss {

/// Gaussian fit of a feature distribution (double precision).
struct FrechetStats {
  torch::Tensor mu;     // F
  torch::Tensor sigma;  // F x F, unbiased
  std::int64_t n = 0;
};

/// Sample mean and unbiased covariance of N x F features; N >= 2.
FrechetStats gaussian_stats(const torch::Tensor& features);

/// Streaming mean / scatter accumulator. Partial accumulators built on
/// disjoint chunks can be merged before finalizing.
class StatsAccumulator {
 public:
  void add(const torch::Tensor& features);
  void merge(const StatsAccumulator& other);
  FrechetStats finalize() const;
  std::int64_t count() const { return n_; }

 private:
  std::int64_t n_ = 0;
  torch::Tensor mean_;     // F
  torch::Tensor scatter_;  // F x F, sum of centered outer products
};

/// Symmetric PSD square root via eigendecomposition. Eigenvalues in
/// [-tol, 0) are clipped to 0; more negative ones throw std::domain_error.
torch::Tensor psd_sqrt(const torch::Tensor& matrix);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

/// Frechet distance with the square root of a's covariance precomputed.
/// Used when one side (the real data) is fixed across many evaluations.
class FrechetReference {
 public:
  explicit FrechetReference(FrechetStats stats);
  double distance(const FrechetStats& other) const;
  const FrechetStats& stats() const { return stats_; }

 private:
  FrechetStats stats_;
  torch::Tensor sigma_sqrt_;
  double trace_;
};

/// Yields images N x H x W x C in [0, 1].
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  /// Upper bound on how many images draw() may return in total.
  virtual std::int64_t available() const = 0;
  /// Next `count` images of the source.
  virtual torch::Tensor draw(std::int64_t count) = 0;
};

/// Wraps a fixed tensor of images; draws advance through it in order.
class TensorImageSource : public ImageSource {
 public:
  explicit TensorImageSource(torch::Tensor images) : images_(std::move(images)) {}
  std::int64_t available() const override { return images_.size(0) - cursor_; }
  torch::Tensor draw(std::int64_t count) override;

 private:
  torch::Tensor images_;
  std::int64_t cursor_ = 0;
};

/// Maps an image batch to an N x F feature matrix.
using FeatureExtractor = std::function<torch::Tensor(const torch::Tensor& images)>;

/// Raw pixels as features.
FeatureExtractor identity_features();

/// Loads a TorchScript module (for instance an exported Inception-v3 pool
/// layer). Images are handed over as N x C x H x W floats in [0, 1].
FeatureExtractor torchscript_features(const std::string& path);

/// Builds an extractor by name: "identity" or "torchscript" (needs `path`).
FeatureExtractor make_feature_extractor(const std::string& name, const std::string& path = "");

/// Accumulates extractor features over `count` images drawn in chunks.
FrechetStats source_stats(ImageSource& source, const FeatureExtractor& extractor, std::int64_t count,
                          std::int64_t chunk = 500);

/// Frechet distance between n_real drawn reals and n_fake drawn fakes.
double fid(ImageSource& real, ImageSource& fake, const FeatureExtractor& extractor, std::int64_t n_real = 10000,
           std::int64_t n_fake = 5000);

/// Centered moving average; windows shrink at the boundaries.
std::vector<double> smooth(const std::vector<double>& series, int window = 5);

}  // namespace advss
