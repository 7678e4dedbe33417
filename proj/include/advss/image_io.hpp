#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace advss {

/// Writes an H x W x C image (C in {1, 3}); float input is taken as [0, 1].
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Reads a PNG as uint8 H x W x 3 (gray and palette images are expanded,
/// alpha is dropped).
torch::Tensor read_png(const std::filesystem::path& path);

/// Reads every *.png in a directory, in name order, as float N x H x W x 3.
torch::Tensor read_png_dir(const std::filesystem::path& dir);

/// Tiles N x H x W x C images into a near-square sheet with 2 px gutters.
torch::Tensor image_grid(const torch::Tensor& images, int columns = 0);

struct Curve {
  std::string label;
  std::vector<double> x, y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "iteration";
  std::string y_label = "FID";
  int width = 900;
  int height = 520;
};

/// Renders line curves with axes, ticks and a legend as an RGB uint8 image.
torch::Tensor plot_curves(const std::vector<Curve>& curves, const PlotOptions& options = {});

}  // namespace advss
