#include "advss/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace advss {

namespace {

using FilePtr = std::unique_ptr<FILE, int (*)(FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

torch::Tensor to_u8(const torch::Tensor& image) {
  if (image.scalar_type() == torch::kUInt8) return image.contiguous();
  return (image.detach().to(torch::kFloat64).clamp(0, 1) * 255.0).round().to(torch::kUInt8).contiguous();
}

// 5 x 7 bitmap font; each row is 5 bits, most significant bit leftmost.
struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
};

const Glyph* find_glyph(char c) {
  c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.c == c) return &g;
  return nullptr;
}

struct Color {
  std::uint8_t r, g, b;
};

constexpr Color kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},  {148, 103, 189},
                              {140, 86, 75},  {227, 119, 194}, {127, 127, 127}, {188, 189, 34}, {23, 190, 207}};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c.r, p[1] = c.g, p[2] = c.b;
  }
  void rect(int x0, int y0, int x1, int y1, Color c) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
  }
  void line(int x0, int y0, int x1, int y1, Color c, int thickness = 1) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    const int lo = -(thickness - 1) / 2, hi = thickness / 2;
    while (true) {
      for (int oy = lo; oy <= hi; ++oy)
        for (int ox = lo; ox <= hi; ++ox) set(x0 + ox, y0 + oy, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) err += dy, x0 += sx;
      if (e2 <= dx) err += dx, y0 += sy;
    }
  }
  /// Draws text with its top-left corner at (x, y); returns the pixel width.
  int text(int x, int y, const std::string& s, Color c, bool vertical = false) {
    int pos = 0;
    for (char ch : s) {
      if (const auto* g = find_glyph(ch)) {
        for (int row = 0; row < 7; ++row)
          for (int col = 0; col < 5; ++col)
            if (g->rows[row] & (0x10 >> col)) {
              if (vertical)
                set(x + row, y - pos - col, c);
              else
                set(x + pos + col, y + row, c);
            }
      }
      pos += 6;
    }
    return pos;
  }
  torch::Tensor tensor() const {
    return torch::from_blob(const_cast<std::uint8_t*>(px_.data()), {h_, w_, 3}, torch::kUInt8).clone();
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) hi = lo + 1;
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) ticks.push_back(std::abs(t) < step * 1e-9 ? 0 : t);
  return ticks;
}

std::string tick_label(double v) {
  char buf[32];
  if (std::abs(v) >= 1e5)
    std::snprintf(buf, sizeof(buf), "%.0fK", v / 1000);
  else
    std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || (image.size(2) != 1 && image.size(2) != 3))
    throw std::invalid_argument("write_png expects H x W x 1 or H x W x 3");
  auto px = to_u8(image);
  const auto h = static_cast<png_uint_32>(px.size(0)), w = static_cast<png_uint_32>(px.size(1));
  const int channels = static_cast<int>(px.size(2));

  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* data = px.data_ptr<std::uint8_t>();
  for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, data + static_cast<std::size_t>(y) * w * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  torch::Tensor out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  out = torch::empty({static_cast<std::int64_t>(h), static_cast<std::int64_t>(w), 3}, torch::kUInt8);
  auto* data = out.data_ptr<std::uint8_t>();
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = data + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

torch::Tensor read_png_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  if (files.empty()) throw std::runtime_error("no .png files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<torch::Tensor> images;
  for (const auto& f : files) {
    images.push_back(read_png(f));
    if (images.back().sizes() != images.front().sizes())
      throw std::runtime_error(f.string() + " differs in size from " + files.front().string());
  }
  return torch::stack(images).to(torch::kFloat32) / 255.0;
}

torch::Tensor image_grid(const torch::Tensor& images, int columns) {
  if (images.dim() != 4) throw std::invalid_argument("image_grid expects N x H x W x C");
  const auto n = images.size(0), h = images.size(1), w = images.size(2), c = images.size(3);
  if (columns <= 0) columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const auto rows = (n + columns - 1) / columns;
  constexpr int pad = 2;
  auto sheet = torch::ones({rows * (h + pad) + pad, columns * (w + pad) + pad, c}, images.options());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto y = pad + (i / columns) * (h + pad), x = pad + (i % columns) * (w + pad);
    sheet.slice(0, y, y + h).slice(1, x, x + w).copy_(images[i]);
  }
  return sheet;
}

torch::Tensor plot_curves(const std::vector<Curve>& curves, const PlotOptions& options) {
  Canvas canvas(options.width, options.height);
  constexpr Color black{0, 0, 0}, grid{225, 225, 225};
  const int left = 70, right = options.width - 230, top = 34, bottom = options.height - 46;

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
      if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) continue;
      xmin = std::min(xmin, c.x[i]), xmax = std::max(xmax, c.x[i]);
      ymin = std::min(ymin, c.y[i]), ymax = std::max(ymax, c.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad, ymax += ypad;

  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };

  for (double t : nice_ticks(ymin, ymax)) {
    if (t < ymin || t > ymax) continue;
    const int y = py(t);
    canvas.line(left, y, right, y, grid);
    const auto label = tick_label(t);
    canvas.text(left - 8 - 6 * static_cast<int>(label.size()), y - 3, label, black);
  }
  for (double t : nice_ticks(xmin, xmax)) {
    if (t < xmin || t > xmax) continue;
    const int x = px(t);
    canvas.line(x, top, x, bottom, grid);
    const auto label = tick_label(t);
    canvas.text(x - 3 * static_cast<int>(label.size()), bottom + 8, label, black);
  }
  canvas.line(left, top, left, bottom, black);
  canvas.line(left, bottom, right, bottom, black);
  canvas.text((left + right) / 2 - 3 * static_cast<int>(options.x_label.size()), bottom + 26, options.x_label, black);
  canvas.text(12, (top + bottom) / 2 + 3 * static_cast<int>(options.y_label.size()), options.y_label, black, true);
  canvas.text(left, 12, options.title, black);

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto color = kPalette[k % std::size(kPalette)];
    const auto& c = curves[k];
    bool have_prev = false;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
      if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = px(c.x[i]), y = py(c.y[i]);
      if (have_prev) canvas.line(prev_x, prev_y, x, y, color, 2);
      else canvas.rect(x - 1, y - 1, x + 1, y + 1, color);
      prev_x = x, prev_y = y, have_prev = true;
    }
    const int ly = top + 4 + static_cast<int>(k) * 14;
    if (ly + 7 > bottom) continue;
    canvas.rect(right + 14, ly + 2, right + 30, ly + 4, color);
    auto label = c.label;
    if (label.size() > 30) label = label.substr(0, 29) + "-";
    canvas.text(right + 36, ly, label, black);
  }
  return canvas.tensor();
}

}  // namespace advss
