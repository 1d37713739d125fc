#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "xdg/align.hpp"
#include "xdg/ops.hpp"

using namespace xdg;
using xdg::testing::random_tensor;

namespace {

Tensor random_distributions(std::size_t B, std::size_t N, Rng& rng) {
  Tensor t({B, N});
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += (t[b * N + i] = rng.uniform(0.01, 1.0));
    for (std::size_t i = 0; i < N; ++i) t[b * N + i] /= s;
  }
  return t;
}

double kernel_oracle(const Tensor& a, const Tensor& b, double gamma) {
  auto k = [&](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double d = 0.0;
    for (std::size_t c = 0; c < x.dim(1); ++c) d += (x.at(i, c) - y.at(j, c)) * (x.at(i, c) - y.at(j, c));
    return std::exp(-gamma * d);
  };
  const std::size_t n = a.dim(0), m = b.dim(0);
  double aa = 0, bb = 0, ab = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) aa += k(a, i, a, j);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) bb += k(b, i, b, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) ab += k(a, i, b, j);
  return aa / double(n * n) + bb / double(m * m) - 2 * ab / double(n * m);
}

}  // namespace

TEST_CASE("threshold average pooling") {
  Rng rng(1);
  const Tensor z = random_tensor({2, 3, 2, 2}, rng, 0.1, 1.0);
  CHECK(max_abs_diff(tap_pool(Var::constant(z), 0.0).value(), global_avg_pool(Var::constant(z)).value()) < 1e-15);
  CHECK(tap_pool(Var::constant(Tensor({1, 1, 2, 2}, {0, 0, 0, 8})), 0.5).value().item() == 8.0);
  CHECK(tap_pool(Var::constant(Tensor({1, 1, 2, 2}, {1, 3, 2, 4})), 0.5).value().item() == 3.5);
  CHECK(tap_pool(Var::constant(Tensor({1, 2, 2, 2}, 0.0)), 0.3).value() == Tensor({1, 2}, 0.0));
  CHECK_THROWS_AS(tap_pool(Var::constant(z), 1.0), ValueError);
}

TEST_CASE("homogeneous negative cam loss") {
  CHECK(std::abs(hnc_map_loss(Tensor({1, 4, 4}, 1.0 / 16)) - std::log(16.0)) <= 1e-9);
  CHECK(hnc_map_loss(Tensor({1, 2, 2}, {0.7, 0.1, 0.1, 0.1})) ==
        doctest::Approx(-(std::log(0.7) + 3 * std::log(0.1)) / 4).epsilon(1e-14));
  CHECK(hnc_map_loss(Tensor({1, 2, 2}, {0.7, 0.1, 0.1, 0.1})) == doctest::Approx(1.8160).epsilon(1e-4));
  CHECK_THROWS_AS(hnc_map_loss(Tensor({1, 2, 2}, 0.3)), ValueError);
  CHECK_THROWS_AS(hnc_map_loss(Tensor({1, 2, 2}, {1.0, 0.0, 0.0, 0.0})), ValueError);

  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t N = 2 + rng.below(30);
    const Tensor maps = random_distributions(3, N, rng);
    const double loss = hnc_map_loss(maps);
    CHECK(loss > std::log(static_cast<double>(N)));
    CHECK(std::abs(kl_uniform(maps) - (loss - std::log(static_cast<double>(N)))) <= 1e-9);
  }
}

TEST_CASE("hnc loss from unnormalized maps") {
  Rng rng(3);
  const Tensor raw = random_tensor({2, 9}, rng);
  const Tensor norm = softmax_rows(raw);
  CHECK(std::abs(hnc_map_loss_logits(Var::constant(raw)).value().item() - hnc_map_loss(norm)) < 1e-12);
}

TEST_CASE("negative class selection and the approximate hnc term") {
  const Tensor logits({2, 4}, {5, 1, 3, 3, 0, 2, 1, 9});
  const std::vector<int> labels{0, 3};
  const auto sets = top_negative_classes(logits, labels, 2);
  CHECK(sets[0] == std::vector<int>{2, 3});
  CHECK(sets[1] == std::vector<int>{1, 2});
  const std::vector<int> two{1};
  CHECK(top_negative_classes(Tensor({1, 2}, {0.3, 0.1}), two, 1)[0] == std::vector<int>{0});
  CHECK_THROWS_AS(top_negative_classes(logits, labels, 4), ValueError);

  Rng rng(4);
  const Tensor w = random_tensor({3, 2}, rng);
  const HeadFn head = [w](const Var& z) { return linear(global_avg_pool(z), Var::constant(w), Var{}); };
  const Var z = Var::constant(random_tensor({2, 2, 2, 2}, rng, 0, 1));
  const std::vector<int> y{0, 2};
  CHECK(hnc_approx_loss(z, head, y, 1, 0.0).value().item() == 0.0);
  const double loss = hnc_approx_loss(z, head, y, 2, 1.0).value().item();
  CHECK(loss >= std::log(4.0) - 1e-12);
  CHECK(hnc_approx_loss(z, head, y, 2, 0.5).value().item() == doctest::Approx(0.5 * loss).epsilon(1e-14));
}

TEST_CASE("mmd") {
  Rng rng(5);
  const KernelConfig kc;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng.below(16), m = 1 + rng.below(16), d = 1 + rng.below(6);
    const Tensor a = random_tensor({n, d}, rng), b = random_tensor({m, d}, rng, -0.5, 1.5);
    CHECK(std::abs(mmd_mixture(a, a, kc)) <= 1e-9);
    const double ab = mmd_mixture(a, b, kc), ba = mmd_mixture(b, a, kc);
    CHECK(std::memcmp(&ab, &ba, sizeof ab) == 0);
    double want = 0.0;
    for (double g : kc.gammas) want += kernel_oracle(a, b, g);
    want /= static_cast<double>(kc.gammas.size());
    CHECK(std::abs(ab - want) <= 1e-9);
  }

  // far-apart clouds: the cross term vanishes
  const Tensor a = random_tensor({5, 2}, rng), b = [&] {
    Tensor t = random_tensor({4, 2}, rng);
    for (auto& v : t.data()) v += 100.0;
    return t;
  }();
  KernelConfig one;
  one.gammas = {0.5};
  double aa = 0, bb = 0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double d = std::pow(a.at(i, 0) - a.at(j, 0), 2) + std::pow(a.at(i, 1) - a.at(j, 1), 2);
      aa += std::exp(-0.5 * d) / 25;
    }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = std::pow(b.at(i, 0) - b.at(j, 0), 2) + std::pow(b.at(i, 1) - b.at(j, 1), 2);
      bb += std::exp(-0.5 * d) / 16;
    }
  CHECK(std::abs(mmd_mixture(a, b, one) - (aa + bb)) <= 1e-9);
  KernelConfig bad;
  bad.gammas = {};
  CHECK_THROWS_AS(mmd_mixture(a, a, bad), ValueError);
  CHECK_THROWS_AS(mmd_mixture(a, random_tensor({3, 3}, rng)), ShapeError);
}

TEST_CASE("class balance weights") {
  const std::vector<int> labels{0, 0, 1, 0};
  const auto w = class_balance_weights(labels, 2);
  CHECK(w == std::vector<double>{1.0 / 6, 1.0 / 6, 0.5, 1.0 / 6});
  CHECK(w[2] / w[0] == doctest::Approx(3.0));
}

TEST_CASE("conditional adversarial losses") {
  Rng rng(6);
  DomainDiscriminator disc(4, 3, MlpConfig{8, 2, 0.0}, rng);
  // zero weights give uniform logits over three domains and a constant output
  for (auto& p : disc.parameters()) p.mutable_value().fill(0.0);
  const Var maps = Var::constant(random_tensor({4, 4}, rng, 0, 1));
  const std::vector<int> domains{0, 1, 2, 1};
  const std::vector<int> labels{0, 0, 1, 1};
  const auto l = cdann_losses(maps, domains, labels, 2, disc, 0.7, 2.0, nullptr);
  const double weights = 4 * 0.25;  // each class holds half of the batch
  CHECK(l.weighted_ce.value().item() == doctest::Approx(std::log(3.0) * weights).epsilon(1e-14));
  const auto ce = cross_entropy_per_sample(disc.forward(maps, nullptr).logits, domains).value();
  for (double v : ce.data()) CHECK(v == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(l.penalty.value().item() == 0.0);
  CHECK(l.discriminator.value().item() == doctest::Approx(l.weighted_ce.value().item()).epsilon(1e-15));
  CHECK(l.generator.value().item() == doctest::Approx(-0.7 * l.weighted_ce.value().item()).epsilon(1e-15));

  DomainDiscriminator live(4, 3, MlpConfig{8, 3, 0.5}, rng);
  Rng d1(9), d2(9);
  const auto a = cdann_losses(maps, domains, labels, 2, live, 1.0, 1.0, &d1);
  const auto b = cdann_losses(maps, domains, labels, 2, live, 1.0, 1.0, &d2);
  CHECK(a.discriminator.value() == b.discriminator.value());
  CHECK(a.penalty.value().item() > 0.0);
  CHECK(live.domains() == 3);
}
