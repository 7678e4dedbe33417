#include <cmath>

#include "advss/metrics.hpp"
#include "support.hpp"

using namespace advss;

namespace {

FrechetStats stats_1d(double mu, double var) {
  return {torch::tensor({mu}, torch::kFloat64), torch::tensor({{var}}, torch::kFloat64), 2};
}

FrechetStats diagonal(const torch::Tensor& mu, const torch::Tensor& var) {
  return {mu.to(torch::kFloat64), torch::diag(var.to(torch::kFloat64)), 2};
}

}  // namespace

TEST_CASE("gaussian_stats: constant rows, hand-computed variance, permutation") {
  auto same = torch::ones({5, 3}) * 0.7;
  auto s = gaussian_stats(same);
  CHECK(s.sigma.abs().max().item<double>() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(s.n == 5);

  auto two = gaussian_stats(torch::tensor({{0.0}, {2.0}}, torch::kFloat64));
  CHECK(two.mu.item<double>() == doctest::Approx(1.0));
  CHECK(two.sigma.item<double>() == doctest::Approx(2.0));

  auto f = torch::randn({50, 4}, torch::kFloat64);
  auto a = gaussian_stats(f), b = gaussian_stats(f.index_select(0, torch::randperm(50)));
  CHECK(max_abs_diff(a.mu, b.mu) <= 1e-12);
  CHECK(max_abs_diff(a.sigma, b.sigma) <= 1e-12);
  CHECK(max_abs_diff(a.sigma, a.sigma.t()) <= 1e-12);

  CHECK_THROWS_AS(gaussian_stats(torch::ones({1, 3})), std::invalid_argument);
}

TEST_CASE("StatsAccumulator: merged chunks equal the one-shot statistics") {
  auto f = torch::randn({97, 6}, torch::kFloat64) * 3 + 1;
  StatsAccumulator x, y;
  x.add(f.slice(0, 0, 40));
  y.add(f.slice(0, 40, 60));
  y.add(f.slice(0, 60, 97));
  x.merge(y);
  auto merged = x.finalize(), direct = gaussian_stats(f);
  CHECK(merged.n == 97);
  CHECK(max_abs_diff(merged.mu, direct.mu) <= 1e-12);
  CHECK(max_abs_diff(merged.sigma, direct.sigma) <= 1e-10);
  StatsAccumulator lone;
  lone.add(f.slice(0, 0, 1));
  CHECK_THROWS_AS(lone.finalize(), std::invalid_argument);
}

TEST_CASE("frechet_distance: identity, 1-D closed form, symmetry") {
  auto f = torch::randn({40, 5}, torch::kFloat64);
  auto s = gaussian_stats(f);
  CHECK(std::abs(frechet_distance(s, s)) <= 1e-9);

  // 1 + (1 + 4 - 2 * sqrt(1 * 4)) = 2.
  CHECK(frechet_distance(stats_1d(0, 1), stats_1d(1, 4)) == doctest::Approx(2.0).epsilon(1e-12));

  auto t = gaussian_stats(torch::randn({40, 5}, torch::kFloat64) * 2 + 0.5);
  CHECK(std::abs(frechet_distance(s, t) - frechet_distance(t, s)) <= 1e-9);
  CHECK(frechet_distance(s, t) > 0);
  CHECK_THROWS_AS(frechet_distance(s, stats_1d(0, 1)), std::invalid_argument);
}

TEST_CASE("frechet_distance: diagonal-covariance oracle") {
  for (int trial = 0; trial < 20; ++trial) {
    auto mu_a = torch::randn({7}, torch::kFloat64), mu_b = torch::randn({7}, torch::kFloat64);
    auto var_a = torch::rand({7}, torch::kFloat64) * 3, var_b = torch::rand({7}, torch::kFloat64) * 3;
    const double oracle =
        (mu_a - mu_b).pow(2).sum().item<double>() + (var_a.sqrt() - var_b.sqrt()).pow(2).sum().item<double>();
    CHECK(std::abs(frechet_distance(diagonal(mu_a, var_a), diagonal(mu_b, var_b)) - oracle) <= 1e-8);
  }
}

TEST_CASE("psd_sqrt: clips tiny negative eigenvalues, rejects large ones") {
  auto m = torch::diag(torch::tensor({4.0, 9.0, -1e-9}, torch::kFloat64));
  auto r = psd_sqrt(m);
  CHECK(max_abs_diff(r, torch::diag(torch::tensor({2.0, 3.0, 0.0}, torch::kFloat64))) <= 1e-12);
  CHECK_THROWS_AS(psd_sqrt(torch::diag(torch::tensor({1.0, -0.5}, torch::kFloat64))), std::domain_error);
}

TEST_CASE("FrechetReference agrees with frechet_distance") {
  auto a = gaussian_stats(torch::randn({30, 4}, torch::kFloat64));
  auto b = gaussian_stats(torch::randn({30, 4}, torch::kFloat64) + 1);
  FrechetReference ref(a);
  CHECK(ref.distance(b) == doctest::Approx(frechet_distance(a, b)).epsilon(1e-10));
}

TEST_CASE("fid: same source, sample order, insufficient samples") {
  auto images = torch::rand({64, 4, 4, 3});
  TensorImageSource real(images), fake(images);
  CHECK(fid(real, fake, identity_features(), 64, 64) <= 1e-6);

  auto fake_images = torch::rand({64, 4, 4, 3});
  TensorImageSource r1(images), f1(fake_images), r2(images), f2(fake_images.flip(0));
  const double d1 = fid(r1, f1, identity_features(), 64, 64);
  const double d2 = fid(r2, f2, identity_features(), 64, 64);
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-9));

  TensorImageSource small(torch::rand({10, 4, 4, 3})), other(images);
  CHECK_THROWS_AS(fid(small, other, identity_features(), 20, 20), std::invalid_argument);
}

TEST_CASE("feature extractor factory") {
  auto id = make_feature_extractor("identity");
  CHECK(id(torch::rand({3, 2, 2, 3})).sizes() == torch::IntArrayRef({3, 12}));
  CHECK_THROWS_AS(make_feature_extractor("inception"), std::invalid_argument);
  CHECK_THROWS_AS(make_feature_extractor("torchscript", ""), std::invalid_argument);
}

TEST_CASE("smooth") {
  std::vector<double> constant(7, 3.5);
  CHECK(smooth(constant) == constant);
  std::vector<double> series{1, 5, 2, 8, 3};
  CHECK(smooth(series, 1) == series);
  auto s = smooth({0, 0, 0, 0, 5, 0, 0, 0, 0}, 5);
  REQUIRE(s.size() == 9);
  CHECK(s[4] == doctest::Approx(1.0));
  CHECK(s[0] == doctest::Approx(0.0));
  // Shrinking window at the edge: the last value averages the final three.
  auto edge = smooth({1, 2, 3, 4, 5, 6}, 5);
  CHECK(edge.back() == doctest::Approx(5.0));
  CHECK(smooth({}, 5).empty());
  CHECK_THROWS_AS(smooth({1.0}, 0), std::invalid_argument);
}
