#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "advss/rng.hpp"

namespace advss {

// Images are channel-last everywhere outside the networks: a single image is
// H x W x C, a batch is N x H x W x C.

/// Number of distinct planar rotations available as transforms.
inline constexpr int kMaxRotations = 4;

/// Transform index k in {1..K}; k maps to a counter-clockwise rotation by
/// 90 * (k - 1) degrees, so k == 1 is the identity.
class TransformId {
 public:
  TransformId(int k, int num_transforms = kMaxRotations);

  int k() const { return k_; }
  int num_transforms() const { return num_transforms_; }
  int quarter_turns() const { return k_ - 1; }

 private:
  int k_;
  int num_transforms_;
};

/// Images paired with the 1-based transform id applied to each of them.
struct TransformedBatch {
  torch::Tensor images;  // N x H x W x C
  torch::Tensor labels;  // int64, length N, entries in {1..K}
};

/// Rotates one H x W x C image counter-clockwise by 90 * (k - 1) degrees.
/// Throws std::invalid_argument for non-square input.
torch::Tensor rotate(const torch::Tensor& image, TransformId k);

/// Draws an independent uniform k_i in {1..K} per sample and rotates sample i
/// by it. K must lie in [1, 4].
TransformedBatch make_pseudo_batch(const torch::Tensor& batch, int num_transforms, Rng& rng);

/// Rotates batch[i] by labels[i]; labels are passed through unchanged.
TransformedBatch apply_same(const torch::Tensor& batch, const torch::Tensor& labels);

/// Label of the inverse rotation (K = 4).
inline std::int64_t inverse_label(std::int64_t k) { return ((4 - (k - 1)) % 4) + 1; }

}  // namespace advss
