#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advss/metrics.hpp"
#include "advss/rng.hpp"

namespace advss {

/// Error raised when a dataset archive is missing or fails verification.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::string name = "synthetic-blobs";  // cifar10 | stl10 | synthetic-blobs
  int image_side = 32;
  std::int64_t n_train = 4096;  // 0 keeps every image of a real dataset
  std::string cache_dir;        // empty: $ADVSS_DATA_ROOT or ~/.cache/advss
  std::uint64_t seed = 0;       // synthetic generator seed

  /// Throws std::invalid_argument on unknown names / bad sizes.
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

/// In-memory image set, stored as uint8 N x H x W x C.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(torch::Tensor images_u8);

  std::int64_t size() const { return images_.defined() ? images_.size(0) : 0; }
  int image_side() const { return static_cast<int>(images_.size(1)); }
  int channels() const { return static_cast<int>(images_.size(3)); }
  const torch::Tensor& raw() const { return images_; }

  /// Float32 images in [0, 1] for the given row indices.
  torch::Tensor batch(const torch::Tensor& indices) const;
  /// Float32 images in [0, 1] for rows [begin, begin + count).
  torch::Tensor slice(std::int64_t begin, std::int64_t count) const;

 private:
  torch::Tensor images_;
};

/// Resolves spec.cache_dir, the ADVSS_DATA_ROOT variable, then ~/.cache/advss.
std::filesystem::path resolve_cache_dir(const DatasetSpec& spec);

Dataset load_dataset(const DatasetSpec& spec);

/// 1-3 axis-aligned, horizontally elongated Gaussian color blobs per image on
/// black, with centers biased toward the top, so rotations are detectable.
/// Image i depends only on (seed, i).
Dataset make_synthetic_blobs(std::int64_t n, int side, std::uint64_t seed);

/// CIFAR-10 binary batches (50000 training images, 32 x 32).
Dataset load_cifar10(const std::filesystem::path& cache_dir, std::int64_t limit = 0);

/// STL-10 unlabeled split (100000 images), resized from 96 to `side`.
Dataset load_stl10(const std::filesystem::path& cache_dir, int side = 48, std::int64_t limit = 0);

/// Bilinear resize of float N x H x W x C images (half-pixel centers).
torch::Tensor resize_bilinear(const torch::Tensor& images, int side);

/// Hex MD5 digest of a file.
std::string md5_file(const std::filesystem::path& path);

/// Extracts the named members of a .tar.gz archive into `dest`.
void extract_tar_gz(const std::filesystem::path& archive, const std::filesystem::path& dest,
                    const std::vector<std::string>& members);

/// Endless stream of shuffled minibatches. Each epoch visits every sample
/// exactly once in an order derived from (seed, epoch); batches continue
/// across epoch boundaries. The stream state is a single sample position,
/// so it can be checkpointed and resumed.
class MinibatchStream {
 public:
  MinibatchStream(const Dataset& dataset, std::int64_t batch_size, std::uint64_t seed);

  torch::Tensor next();
  /// Row indices of the next batch without advancing.
  torch::Tensor peek_indices() const;

  std::int64_t position() const { return position_; }
  void seek(std::int64_t position) { position_ = position; }
  std::vector<std::int64_t> epoch_order(std::int64_t epoch) const;

 private:
  const Dataset* dataset_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  std::int64_t position_ = 0;
  mutable std::int64_t cached_epoch_ = -1;
  mutable std::vector<std::int64_t> cached_order_;
};

/// Serves consecutive images of a dataset (or a shuffled prefix of it).
class DatasetImageSource : public ImageSource {
 public:
  explicit DatasetImageSource(const Dataset& dataset) : dataset_(&dataset) {}
  std::int64_t available() const override { return dataset_->size() - cursor_; }
  torch::Tensor draw(std::int64_t count) override;

 private:
  const Dataset* dataset_;
  std::int64_t cursor_ = 0;
};

/// n x d_z latent codes, i.i.d. uniform on [0, 1).
torch::Tensor sample_latent(std::int64_t n, std::int64_t latent_dim, Rng& rng);

}  // namespace advss
