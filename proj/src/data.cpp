#include "advss/data.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace advss {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCifarArchive = "cifar-10-binary.tar.gz";
constexpr const char* kCifarMd5 = "c32a1d4ab5d03f1284b67883e8d87530";
constexpr const char* kCifarUrl = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
constexpr std::int64_t kCifarRecord = 1 + 3 * 32 * 32;
constexpr std::int64_t kCifarPerBatch = 10000;

constexpr const char* kStlArchive = "stl10_binary.tar.gz";
constexpr const char* kStlMd5 = "91f7769df0f17e558f3565bffb0c7dfb";
constexpr const char* kStlUrl = "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz";
constexpr std::int64_t kStlSide = 96;
constexpr std::int64_t kStlUnlabeled = 100000;

std::string fetch_instructions(const fs::path& cache_dir, const char* archive, const char* url) {
  return "download " + std::string(url) + " and place " + archive + " (or its extracted contents) in " +
         cache_dir.string() + ", or point ADVSS_DATA_ROOT at a directory that holds it";
}

/// Makes sure every member exists under cache_dir, extracting from the
/// verified archive when needed.
void ensure_members(const fs::path& cache_dir, const char* archive, const char* md5, const char* url,
                    const std::vector<std::string>& members, const std::vector<std::uintmax_t>& sizes) {
  bool complete = true;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto p = cache_dir / members[i];
    if (!fs::exists(p)) {
      complete = false;
      break;
    }
    if (fs::file_size(p) != sizes[i])
      throw DatasetError(p.string() + " has " + std::to_string(fs::file_size(p)) + " bytes, expected " +
                         std::to_string(sizes[i]) + "; remove it and re-extract");
  }
  if (complete) return;

  const auto archive_path = cache_dir / archive;
  if (!fs::exists(archive_path))
    throw DatasetError("missing dataset files in " + cache_dir.string() + ": " +
                       fetch_instructions(cache_dir, archive, url));
  const auto digest = md5_file(archive_path);
  if (digest != md5)
    throw DatasetError("checksum mismatch for " + archive_path.string() + ": got " + digest + ", expected " + md5 +
                       "; " + fetch_instructions(cache_dir, archive, url));
  extract_tar_gz(archive_path, cache_dir, members);
  for (std::size_t i = 0; i < members.size(); ++i)
    if (!fs::exists(cache_dir / members[i]) || fs::file_size(cache_dir / members[i]) != sizes[i])
      throw DatasetError("archive " + archive_path.string() + " does not contain a valid " + members[i]);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path, std::uintmax_t offset, std::uintmax_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<std::uint8_t> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::uintmax_t>(in.gcount()) != count) throw DatasetError("short read from " + path.string());
  return buf;
}

std::uint64_t parse_octal(const char* field, std::size_t len) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < len && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') throw DatasetError("malformed tar header");
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

std::array<float, 3> hue_to_rgb(double hue) {
  const double h = hue * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h) % 6) {
    case 0: return {1.0f, static_cast<float>(x), 0.0f};
    case 1: return {static_cast<float>(x), 1.0f, 0.0f};
    case 2: return {0.0f, 1.0f, static_cast<float>(x)};
    case 3: return {0.0f, static_cast<float>(x), 1.0f};
    case 4: return {static_cast<float>(x), 0.0f, 1.0f};
    default: return {1.0f, 0.0f, static_cast<float>(x)};
  }
}

}  // namespace

void DatasetSpec::validate() const {
  if (name == "cifar10") {
    if (image_side != 32) throw std::invalid_argument("cifar10 uses image_side 32");
  } else if (name == "stl10") {
    if (image_side != 48) throw std::invalid_argument("stl10 uses image_side 48");
  } else if (name == "synthetic-blobs") {
    if (image_side < 4) throw std::invalid_argument("synthetic-blobs needs image_side >= 4");
    if (n_train < 1) throw std::invalid_argument("synthetic-blobs needs n_train >= 1");
  } else {
    throw std::invalid_argument("unknown dataset '" + name + "' (expected cifar10, stl10 or synthetic-blobs)");
  }
  if (n_train < 0) throw std::invalid_argument("n_train must be >= 0");
}

Dataset::Dataset(torch::Tensor images_u8) : images_(std::move(images_u8)) {
  if (images_.dim() != 4 || images_.scalar_type() != torch::kUInt8)
    throw std::invalid_argument("Dataset: expected uint8 N x H x W x C images");
  if (images_.size(1) != images_.size(2)) throw std::invalid_argument("Dataset: images must be square");
}

torch::Tensor Dataset::batch(const torch::Tensor& indices) const {
  return images_.index_select(0, indices.to(torch::kInt64)).to(torch::kFloat32).div_(255.0);
}

torch::Tensor Dataset::slice(std::int64_t begin, std::int64_t count) const {
  return images_.narrow(0, begin, count).to(torch::kFloat32).div_(255.0);
}

fs::path resolve_cache_dir(const DatasetSpec& spec) {
  if (!spec.cache_dir.empty()) return spec.cache_dir;
  if (const char* root = std::getenv("ADVSS_DATA_ROOT"); root && *root) return root;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "advss";
  return fs::path(".advss-cache");
}

Dataset load_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.name == "synthetic-blobs") return make_synthetic_blobs(spec.n_train, spec.image_side, spec.seed);
  const auto dir = resolve_cache_dir(spec);
  if (spec.name == "cifar10") return load_cifar10(dir, spec.n_train);
  return load_stl10(dir, spec.image_side, spec.n_train);
}

Dataset make_synthetic_blobs(std::int64_t n, int side, std::uint64_t seed) {
  if (n < 1 || side < 4) throw std::invalid_argument("make_synthetic_blobs: need n >= 1 and side >= 4");
  auto images = torch::empty({n, side, side, 3}, torch::kUInt8);
  auto* out = images.data_ptr<std::uint8_t>();
  std::vector<float> canvas(static_cast<std::size_t>(side) * side * 3);
  const double s = side;
  for (std::int64_t i = 0; i < n; ++i) {
    auto rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    std::fill(canvas.begin(), canvas.end(), 0.0f);
    const auto blobs = rng.uniform_int(1, 3);
    for (std::int64_t b = 0; b < blobs; ++b) {
      const double cx = s * (0.15 + 0.70 * rng.uniform());
      const double cy = s * (0.15 + 0.45 * rng.uniform());
      const double sx = s * (0.10 + 0.12 * rng.uniform());
      const double sy = s * (0.04 + 0.05 * rng.uniform());
      const double amplitude = 0.7 + 0.3 * rng.uniform();
      const auto rgb = hue_to_rgb(rng.uniform());
      for (int y = 0; y < side; ++y) {
        const double dy = (y + 0.5 - cy) / sy;
        for (int x = 0; x < side; ++x) {
          const double dx = (x + 0.5 - cx) / sx;
          const float g = static_cast<float>(amplitude * std::exp(-0.5 * (dx * dx + dy * dy)));
          float* px = &canvas[(static_cast<std::size_t>(y) * side + x) * 3];
          for (int c = 0; c < 3; ++c) px[c] += g * rgb[c];
        }
      }
    }
    auto* dst = out + i * side * side * 3;
    for (std::size_t j = 0; j < canvas.size(); ++j)
      dst[j] = static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(canvas[j], 0.0f, 1.0f)));
  }
  return Dataset(images);
}

Dataset load_cifar10(const fs::path& cache_dir, std::int64_t limit) {
  std::vector<std::string> members;
  for (int b = 1; b <= 5; ++b) members.push_back("cifar-10-batches-bin/data_batch_" + std::to_string(b) + ".bin");
  const std::vector<std::uintmax_t> sizes(members.size(), kCifarRecord * kCifarPerBatch);
  ensure_members(cache_dir, kCifarArchive, kCifarMd5, kCifarUrl, members, sizes);

  const std::int64_t total = 5 * kCifarPerBatch;
  const std::int64_t n = limit > 0 ? std::min(limit, total) : total;
  auto images = torch::empty({n, 32, 32, 3}, torch::kUInt8);
  std::int64_t filled = 0;
  for (const auto& member : members) {
    if (filled == n) break;
    const auto take = std::min(kCifarPerBatch, n - filled);
    auto bytes = read_bytes(cache_dir / member, 0, static_cast<std::uintmax_t>(take * kCifarRecord));
    auto records = torch::from_blob(bytes.data(), {take, kCifarRecord}, torch::kUInt8);
    // Drop the label byte; pixels are stored channel-major.
    auto chw = records.narrow(1, 1, 3 * 32 * 32).reshape({take, 3, 32, 32});
    images.narrow(0, filled, take).copy_(chw.permute({0, 2, 3, 1}));
    filled += take;
  }
  return Dataset(images);
}

Dataset load_stl10(const fs::path& cache_dir, int side, std::int64_t limit) {
  const std::string member = "stl10_binary/unlabeled_X.bin";
  const std::uintmax_t image_bytes = 3 * kStlSide * kStlSide;
  ensure_members(cache_dir, kStlArchive, kStlMd5, kStlUrl, {member}, {image_bytes * kStlUnlabeled});

  const std::int64_t n = limit > 0 ? std::min(limit, kStlUnlabeled) : kStlUnlabeled;
  auto images = torch::empty({n, side, side, 3}, torch::kUInt8);
  constexpr std::int64_t kChunk = 1000;
  for (std::int64_t begin = 0; begin < n; begin += kChunk) {
    const auto take = std::min(kChunk, n - begin);
    auto bytes = read_bytes(cache_dir / member, static_cast<std::uintmax_t>(begin) * image_bytes,
                            static_cast<std::uintmax_t>(take) * image_bytes);
    // Column-major per channel: byte (c, x, y).
    auto raw = torch::from_blob(bytes.data(), {take, 3, kStlSide, kStlSide}, torch::kUInt8);
    auto nhwc = raw.permute({0, 3, 2, 1}).to(torch::kFloat32).div_(255.0);
    auto resized = resize_bilinear(nhwc, side);
    images.narrow(0, begin, take).copy_(resized.mul(255.0).round_().clamp_(0, 255).to(torch::kUInt8));
  }
  return Dataset(images);
}

torch::Tensor resize_bilinear(const torch::Tensor& images, int side) {
  if (images.dim() != 4) throw std::invalid_argument("resize_bilinear: expected N x H x W x C");
  auto nchw = images.permute({0, 3, 1, 2}).contiguous();
  auto out = torch::nn::functional::interpolate(nchw, torch::nn::functional::InterpolateFuncOptions()
                                                          .size(std::vector<int64_t>{side, side})
                                                          .mode(torch::kBilinear)
                                                          .align_corners(false)
                                                          .antialias(false));
  return out.permute({0, 2, 3, 1}).contiguous();
}

std::string md5_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_md5(), nullptr) != 1) throw DatasetError("md5 initialization failed");
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

void extract_tar_gz(const fs::path& archive, const fs::path& dest, const std::vector<std::string>& members) {
  gzFile gz = gzopen(archive.string().c_str(), "rb");
  if (!gz) throw DatasetError("cannot open " + archive.string());
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(gz, &gzclose);

  auto read_exact = [&](char* buf, std::size_t len) {
    std::size_t done = 0;
    while (done < len) {
      const int got = gzread(gz, buf + done, static_cast<unsigned>(std::min<std::size_t>(len - done, 1 << 20)));
      if (got <= 0) return false;
      done += static_cast<std::size_t>(got);
    }
    return true;
  };

  std::size_t remaining = members.size();
  std::array<char, 512> header{};
  std::vector<char> buf(1 << 20);
  while (remaining > 0 && read_exact(header.data(), header.size())) {
    if (header[0] == '\0') break;  // end-of-archive block
    std::string name(header.data(), strnlen(header.data(), 100));
    std::string prefix(header.data() + 345, strnlen(header.data() + 345, 155));
    if (!prefix.empty()) name = prefix + "/" + name;
    if (name.rfind("./", 0) == 0) name = name.substr(2);
    const auto size = parse_octal(header.data() + 124, 12);
    const bool wanted = std::find(members.begin(), members.end(), name) != members.end();

    std::ofstream out;
    if (wanted) {
      fs::create_directories((dest / name).parent_path());
      out.open(dest / name, std::ios::binary | std::ios::trunc);
      if (!out) throw DatasetError("cannot write " + (dest / name).string());
    }
    std::uint64_t left = (size + 511) / 512 * 512;
    std::uint64_t payload = size;
    while (left > 0) {
      const auto chunk = static_cast<std::size_t>(std::min<std::uint64_t>(left, buf.size()));
      if (!read_exact(buf.data(), chunk)) throw DatasetError("truncated archive " + archive.string());
      if (wanted) {
        const auto keep = static_cast<std::size_t>(std::min<std::uint64_t>(payload, chunk));
        out.write(buf.data(), static_cast<std::streamsize>(keep));
        payload -= keep;
      }
      left -= chunk;
    }
    if (wanted) --remaining;
  }
}

// ---------------------------------------------------------------------------

MinibatchStream::MinibatchStream(const Dataset& dataset, std::int64_t batch_size, std::uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("MinibatchStream: batch_size must be >= 1");
  if (batch_size > dataset.size())
    throw std::invalid_argument("MinibatchStream: batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                                std::to_string(dataset.size()));
}

std::vector<std::int64_t> MinibatchStream::epoch_order(std::int64_t epoch) const {
  std::vector<std::int64_t> order(static_cast<std::size_t>(dataset_->size()));
  std::iota(order.begin(), order.end(), 0);
  auto rng = Rng::derive(seed_, static_cast<std::uint64_t>(epoch));
  for (std::int64_t i = static_cast<std::int64_t>(order.size()) - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  return order;
}

torch::Tensor MinibatchStream::peek_indices() const {
  const auto n = dataset_->size();
  auto indices = torch::empty({batch_size_}, torch::kInt64);
  auto* out = indices.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < batch_size_; ++i) {
    const auto p = position_ + i;
    const auto epoch = p / n;
    if (epoch != cached_epoch_) {
      cached_order_ = epoch_order(epoch);
      cached_epoch_ = epoch;
    }
    out[i] = cached_order_[static_cast<std::size_t>(p % n)];
  }
  return indices;
}

torch::Tensor MinibatchStream::next() {
  auto batch = dataset_->batch(peek_indices());
  position_ += batch_size_;
  return batch;
}

torch::Tensor DatasetImageSource::draw(std::int64_t count) {
  if (count > available())
    throw std::invalid_argument("dataset source exhausted: requested " + std::to_string(count) + ", " +
                                std::to_string(available()) + " left");
  auto out = dataset_->slice(cursor_, count);
  cursor_ += count;
  return out;
}

torch::Tensor sample_latent(std::int64_t n, std::int64_t latent_dim, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_latent: n must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("sample_latent: latent_dim must be >= 1");
  return rng.uniform_tensor({n, latent_dim}, torch::kFloat32);
}

}  // namespace advss
