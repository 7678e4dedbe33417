#include <cmath>
#include <fstream>
#include <set>

#include "advss/data.hpp"
#include "support.hpp"

using namespace advss;
namespace fs = std::filesystem;

TEST_CASE("synthetic blobs: shape, range and determinism") {
  auto a = make_synthetic_blobs(1024, 32, 9);
  auto b = make_synthetic_blobs(1024, 32, 9);
  CHECK(a.size() == 1024);
  CHECK(a.image_side() == 32);
  CHECK(a.channels() == 3);
  CHECK(torch::equal(a.raw(), b.raw()));
  CHECK_FALSE(torch::equal(a.raw(), make_synthetic_blobs(1024, 32, 10).raw()));
  auto x = a.slice(0, 16);
  CHECK((x.scalar_type() == torch::kFloat32));
  CHECK(x.min().item<float>() >= 0.f);
  CHECK(x.max().item<float>() <= 1.f);
  // Image i depends only on (seed, i).
  CHECK(torch::equal(make_synthetic_blobs(10, 32, 9).raw(), a.raw().slice(0, 0, 10)));
}

TEST_CASE("synthetic blobs are orientation-dependent on average") {
  auto x = make_synthetic_blobs(512, 32, 1).slice(0, 512).mean(0).mean(-1);  // H x W mean intensity
  auto top = x.slice(0, 0, 16).sum().item<double>(), bottom = x.slice(0, 16, 32).sum().item<double>();
  CHECK(top > bottom);
}

TEST_CASE("minibatch stream: epochs, determinism, seeking") {
  auto ds = make_synthetic_blobs(10, 8, 0);
  MinibatchStream s(ds, 5, 123);
  auto i0 = s.peek_indices();
  s.next();
  auto i1 = s.peek_indices();
  s.next();
  std::set<int64_t> seen;
  for (auto t : {i0, i1})
    for (int64_t k = 0; k < 5; ++k) seen.insert(t[k].item<int64_t>());
  CHECK(seen.size() == 10);

  MinibatchStream again(ds, 5, 123);
  CHECK(torch::equal(again.peek_indices(), i0));
  again.seek(5);
  CHECK(torch::equal(again.peek_indices(), i1));
  CHECK(again.position() == 5);

  // Batches straddle epoch boundaries; every epoch is a permutation.
  MinibatchStream odd(ds, 3, 4);
  for (int e = 0; e < 3; ++e) {
    auto order = odd.epoch_order(e);
    std::set<int64_t> unique(order.begin(), order.end());
    CHECK(unique.size() == 10);
    CHECK(*unique.begin() == 0);
    CHECK(*unique.rbegin() == 9);
  }
  std::multiset<int64_t> first_epoch;
  for (int b = 0; b < 4; ++b) {
    auto idx = odd.peek_indices();
    for (int64_t k = 0; k < 3; ++k)
      if (odd.position() + k < 10) first_epoch.insert(idx[k].item<int64_t>());
    auto batch = odd.next();
    CHECK(batch.size(0) == 3);
    CHECK(batch.max().item<float>() <= 1.f);
  }
  CHECK(first_epoch.size() == 10);
  CHECK(std::set<int64_t>(first_epoch.begin(), first_epoch.end()).size() == 10);

  CHECK_THROWS_AS(MinibatchStream(ds, 11, 0), std::invalid_argument);
}

TEST_CASE("sample_latent: range and uniform-mean oracle") {
  Rng rng(2024);
  auto z = sample_latent(64, 128, rng);
  CHECK(z.sizes() == torch::IntArrayRef({64, 128}));
  CHECK(z.min().item<float>() >= 0.f);
  CHECK(z.max().item<float>() < 1.f);

  auto big = sample_latent(100000, 1, rng);
  const double sigma = std::sqrt(1.0 / 12.0 / 100000.0);
  CHECK(std::abs(big.to(torch::kFloat64).mean().item<double>() - 0.5) <= 3 * sigma);
  CHECK_THROWS_AS(sample_latent(0, 4, rng), std::invalid_argument);
}

TEST_CASE("resize_bilinear: identity at equal size, 2x2 block means when halving") {
  auto x = torch::rand({2, 48, 48, 3});
  CHECK(max_abs_diff(resize_bilinear(x, 48), x) <= 1e-6);
  auto small = torch::arange(16, torch::kFloat32).reshape({1, 4, 4, 1});
  auto half = resize_bilinear(small, 2);
  auto expect = torch::tensor({2.5f, 4.5f, 10.5f, 12.5f}).reshape({1, 2, 2, 1});
  CHECK(max_abs_diff(half, expect) <= 1e-5);
}

TEST_CASE("md5 and tar.gz extraction") {
  auto dir = test::scratch("md5tar");
  {
    std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
    std::ofstream(dir / "other.bin", std::ios::binary) << std::string(1000, 'x');
  }
  CHECK(md5_file(dir / "abc.txt") == "900150983cd24fb0d6963f7d28e17f72");
  const auto cmd = "tar -czf " + (dir / "a.tar.gz").string() + " -C " + dir.string() + " abc.txt other.bin";
  REQUIRE(std::system(cmd.c_str()) == 0);
  auto out = dir / "out";
  extract_tar_gz(dir / "a.tar.gz", out, {"other.bin"});
  CHECK(fs::exists(out / "other.bin"));
  CHECK(fs::file_size(out / "other.bin") == 1000);
  CHECK_FALSE(fs::exists(out / "abc.txt"));
}

TEST_CASE("real datasets: missing archive and bad checksum give fetch instructions") {
  auto dir = test::scratch("datasets");
  DatasetSpec spec;
  spec.name = "cifar10";
  spec.cache_dir = dir.string();
  try {
    load_dataset(spec);
    FAIL("expected a DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("download") != std::string::npos);
  }
  std::ofstream(dir / "cifar-10-binary.tar.gz") << "not an archive";
  try {
    load_dataset(spec);
    FAIL("expected a DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("checksum mismatch") != std::string::npos);
  }
}

TEST_CASE("dataset spec validation and cache resolution") {
  DatasetSpec s;
  s.name = "stl10";
  s.image_side = 32;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.image_side = 48;
  CHECK_NOTHROW(s.validate());
  s.name = "imagenet";
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  DatasetSpec c;
  c.cache_dir = "/some/where";
  CHECK(resolve_cache_dir(c) == fs::path("/some/where"));
  setenv("ADVSS_DATA_ROOT", "/env/root", 1);
  CHECK(resolve_cache_dir(DatasetSpec{}) == fs::path("/env/root"));
  unsetenv("ADVSS_DATA_ROOT");
}

TEST_CASE("dataset image source serves consecutive images") {
  auto ds = make_synthetic_blobs(20, 8, 3);
  DatasetImageSource src(ds);
  CHECK(src.available() == 20);
  auto a = src.draw(12);
  CHECK(torch::equal(a, ds.slice(0, 12)));
  CHECK(src.available() == 8);
  CHECK_THROWS_AS(src.draw(9), std::invalid_argument);
}
