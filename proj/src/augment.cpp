#include "advss/augment.hpp"

#include <stdexcept>
#include <string>

namespace advss {

namespace {

void require_square_batch(const torch::Tensor& batch, const char* op) {
  if (batch.dim() != 4)
    throw std::invalid_argument(std::string(op) + ": expected N x H x W x C batch, got rank " +
                                std::to_string(batch.dim()));
  if (batch.size(1) != batch.size(2))
    throw std::invalid_argument(std::string(op) + ": rotation needs square images, got " +
                                std::to_string(batch.size(1)) + "x" + std::to_string(batch.size(2)));
}

}  // namespace

TransformId::TransformId(int k, int num_transforms) : k_(k), num_transforms_(num_transforms) {
  if (num_transforms < 1 || num_transforms > kMaxRotations)
    throw std::invalid_argument("TransformId: K must be in [1, 4], got " + std::to_string(num_transforms));
  if (k < 1 || k > num_transforms)
    throw std::invalid_argument("TransformId: k=" + std::to_string(k) + " outside {1.." +
                                std::to_string(num_transforms) + "}");
}

torch::Tensor rotate(const torch::Tensor& image, TransformId k) {
  if (image.dim() != 3)
    throw std::invalid_argument("rotate: expected H x W x C image, got rank " + std::to_string(image.dim()));
  if (image.size(0) != image.size(1))
    throw std::invalid_argument("rotate: non-square image " + std::to_string(image.size(0)) + "x" +
                                std::to_string(image.size(1)));
  if (k.quarter_turns() == 0) return image.clone();
  return torch::rot90(image, k.quarter_turns(), {0, 1}).contiguous();
}

TransformedBatch make_pseudo_batch(const torch::Tensor& batch, int num_transforms, Rng& rng) {
  require_square_batch(batch, "make_pseudo_batch");
  if (batch.size(0) == 0) throw std::invalid_argument("make_pseudo_batch: empty batch");
  if (num_transforms < 1 || num_transforms > kMaxRotations)
    throw std::invalid_argument("make_pseudo_batch: K must be in [1, 4]");

  const auto n = batch.size(0);
  auto labels = torch::empty({n}, torch::kInt64);
  auto* out = labels.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < n; ++i) out[i] = rng.uniform_int(1, num_transforms);
  return apply_same(batch, labels);
}

TransformedBatch apply_same(const torch::Tensor& batch, const torch::Tensor& labels) {
  require_square_batch(batch, "apply_same");
  if (labels.dim() != 1 || labels.size(0) != batch.size(0))
    throw std::invalid_argument("apply_same: " + std::to_string(labels.numel()) + " labels for batch of " +
                                std::to_string(batch.size(0)));
  auto labels_i64 = labels.to(torch::kInt64);
  if (labels_i64.numel() > 0) {
    const auto lo = labels_i64.min().item<std::int64_t>();
    const auto hi = labels_i64.max().item<std::int64_t>();
    if (lo < 1 || hi > kMaxRotations)
      throw std::invalid_argument("apply_same: labels must lie in {1..4}");
  }

  // Gather from the stacked rotations so the result stays differentiable
  // with respect to the batch.
  std::vector<torch::Tensor> rotations;
  rotations.reserve(kMaxRotations);
  rotations.push_back(batch);
  for (int q = 1; q < kMaxRotations; ++q) rotations.push_back(torch::rot90(batch, q, {1, 2}));
  auto stacked = torch::stack(rotations);  // 4 x N x H x W x C
  auto rows = torch::arange(batch.size(0), torch::kInt64);
  auto images = stacked.index({labels_i64 - 1, rows}).contiguous();
  return {images, labels_i64.clone()};
}

}  // namespace advss
