#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "xdg/ops.hpp"
#include "xdg/xattn.hpp"

using namespace xdg;
using xdg::testing::random_tensor;

TEST_CASE("attention weights") {
  CHECK(attention_weights(Tensor({1, 1, 3}, {0.2, -1, 4}), Tensor({1, 3}, {1, 2, 3})).item() == 1.0);

  // scores {0, ln 3} after scaling by 1/sqrt(d)
  const double d = 4.0;
  Tensor keys({1, 2, 4}, 0.0);
  keys.at(0, 1, 0) = std::log(3.0) * std::sqrt(d);
  const Tensor w = attention_weights(keys, Tensor({1, 4}, {1, 0, 0, 0}));
  CHECK(w.shape() == Shape{2, 1});
  CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 1 + rng.below(4), L = 1 + rng.below(9), dk = 1 + rng.below(8);
    const Tensor ww = attention_weights(random_tensor({n, L, dk}, rng, -3, 3), random_tensor({L, dk}, rng, -3, 3));
    for (std::size_t q = 0; q < L; ++q) {
      double s = 0.0;
      for (std::size_t r = 0; r < n * L; ++r) s += ww.at(r, q);
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
  CHECK_THROWS_AS(attention_weights(Tensor({1, 2, 3}), Tensor({2, 4})), ShapeError);
}

TEST_CASE("spatial prototypes") {
  const Tensor v0({1, 3}, {0.5, -1, 2});
  Tensor values({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) values.at(i, k) = v0[k];
  const Tensor p = spatial_prototypes(Tensor({4, 2}, 0.25), values);
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t k = 0; k < 3; ++k) CHECK(p.at(q, k) == doctest::Approx(v0[k]).epsilon(1e-15));

  Rng rng(2);
  const Tensor vals = random_tensor({3, 2}, rng);
  const Tensor one = spatial_prototypes(Tensor({3, 1}, {0, 1, 0}), vals);
  CHECK(one.vec() == std::vector<double>{vals.at(1, 0), vals.at(1, 1)});
  const Tensor two = spatial_prototypes(Tensor({2, 1}, {0.25, 0.75}), Tensor({2, 2}, {4, 0, 0, 8}));
  CHECK(two.vec() == std::vector<double>{1, 6});
}

TEST_CASE("prototypes do not depend on the order of support locations") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 1 + rng.below(4), L = 1 + rng.below(6), dk = 2 + rng.below(5), dv = 1 + rng.below(5);
    const Tensor keys = random_tensor({n, L, dk}, rng, -2, 2), vals = random_tensor({n * L, dv}, rng);
    const Tensor query = random_tensor({L, dk}, rng, -2, 2);
    const auto perm = rng.permutation(n * L);
    Tensor pk({n * L, dk}), pv({n * L, dv});
    for (std::size_t r = 0; r < n * L; ++r) {
      for (std::size_t k = 0; k < dk; ++k) pk.at(r, k) = keys[perm[r] * dk + k];
      for (std::size_t k = 0; k < dv; ++k) pv.at(r, k) = vals.at(perm[r], k);
    }
    const Tensor a = spatial_prototypes(attention_weights(keys, query), vals);
    const Tensor b = spatial_prototypes(attention_weights(pk.reshaped({1, n * L, dk}), query), pv);
    CHECK(max_abs_diff(a, b) <= 1e-9);
  }
}

TEST_CASE("environment and class scores") {
  const Tensor w({1, 2}, {0.6, 0.8});
  const std::vector<std::vector<Tensor>> zero{{Tensor({1, 2}, 0.0), Tensor({1, 2}, 0.0)}};
  CHECK(env_class_distance(zero, w) == std::vector<double>{0, 0});
  const std::vector<std::vector<Tensor>> aligned{{w, Tensor({1, 2}, {0.8, -0.6})}};
  const auto s = env_class_distance(aligned, w);
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.0).scale(1.0));
  const std::vector<std::vector<Tensor>> two_env{{w, w}, {w, w}};
  CHECK(env_class_distance(two_env, w)[1] == doctest::Approx(2.0).epsilon(1e-15));
  const std::vector<std::vector<Tensor>> missing{{w, w}, {w}};
  CHECK_THROWS_AS(env_class_distance(missing, w), ValueError);
}

TEST_CASE("support sampling") {
  const auto ds = testing::tiny_glyphs(1, 6, 2);
  const auto a = sample_support(ds, 4, 9);
  const auto b = sample_support(ds, 4, 9);
  CHECK(a.rows == b.rows);
  REQUIRE(a.rows.size() == 2);
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(a.rows[e][c].size() == 4);
      for (auto r : a.rows[e][c]) CHECK(ds.envs[e].labels[r] == static_cast<int>(c));
    }
  const auto all = sample_support(ds, 50, 9);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(all.rows[0][c].size() == 6);
    CHECK(std::set<std::size_t>(all.rows[0][c].begin(), all.rows[0][c].end()).size() == 6);
  }

  // a per-step support never overlaps the query rows it excludes
  Rng rng(4);
  for (int step = 0; step < 100; ++step) {
    std::vector<std::vector<std::size_t>> query(2);
    for (std::size_t e = 0; e < 2; ++e) {
      auto perm = rng.permutation(ds.envs[e].size());
      query[e].assign(perm.begin(), perm.begin() + 5);
    }
    const auto s = sample_support(ds, 2, mix_seed(7, static_cast<std::uint64_t>(step)), query);
    for (std::size_t e = 0; e < 2; ++e)
      for (const auto& rows : s.rows[e])
        for (auto r : rows) CHECK(std::find(query[e].begin(), query[e].end(), r) == query[e].end());
  }

  MultiDomainDataset lacking = ds;
  for (auto& l : lacking.envs[1].labels) l = l == 2 ? 0 : l;
  try {
    sample_support(lacking, 2, 0);
    FAIL("missing class accepted");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
    CHECK(std::string(e.what()).find("environment 1") != std::string::npos);
  }
}

TEST_CASE("classic prototype baseline") {
  const Tensor f({1, 3}, {1, 2, 3});
  const Tensor q({2, 3}, {1, 0, 0, 0, 1, 1});
  const std::vector<Tensor> single{f, Tensor({1, 3}, {0, 0, 1})};
  const Tensor l1 = classic_proto_baseline(single, q);
  CHECK(l1.vec() == std::vector<double>{1, 0, 5, 1});
  Tensor twice({2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) twice.at(i, k) = f[k];
  const std::vector<Tensor> doubled{twice, Tensor({1, 3}, {0, 0, 1})};
  CHECK(classic_proto_baseline(doubled, q) == l1);

  Rng rng(5);
  const Tensor s0 = random_tensor({3, 4}, rng), s1 = random_tensor({2, 4}, rng), qq = random_tensor({2, 4}, rng);
  const Tensor got = classic_proto_baseline({s0, s1}, qq);
  for (std::size_t b = 0; b < 2; ++b) {
    double d0 = 0, d1 = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      d0 += (s0.at(0, k) + s0.at(1, k) + s0.at(2, k)) / 3 * qq.at(b, k);
      d1 += (s1.at(0, k) + s1.at(1, k)) / 2 * qq.at(b, k);
    }
    CHECK(std::abs(got.at(b, 0) - d0) < 1e-12);
    CHECK(std::abs(got.at(b, 1) - d1) < 1e-12);
  }
}

TEST_CASE("cross-attention network") {
  Rng rng(6);
  const DTransformer net(DTransformerConfig{FeaturizerConfig{1, 4, 2}, 3, 5}, rng);
  const auto ds = testing::tiny_glyphs(2, 4, 2);
  const auto support = support_images(ds, sample_support(ds, 2, 1));
  REQUIRE(support.size() == 2);
  CHECK(support[0][1].shape() == Shape{2, 1, 16, 16});
  const Var x = Var::constant(slice0(ds.envs[0].images, 0, 3));
  const Tensor logits = net.logits(x, support).value();
  CHECK(logits.shape() == Shape{3, 3});
  CHECK(all_finite(logits));

  // the batched logits agree with the per-image formulation
  const auto params = net.parameters();
  const std::size_t P = params.size();
  const Conv2d key{params[P - 3], Var{}}, value{params[P - 2], Var{}}, query{params[P - 1], Var{}};
  auto rows_of = [](const Tensor& t) { return nchw_to_rows(Var::constant(t)).value(); };
  for (std::size_t b = 0; b < 3; ++b) {
    const Tensor zq = net.featurizer()(Var::constant(slice0(ds.envs[0].images, b, b + 1))).value();
    const Tensor q = rows_of(query(Var::constant(zq)).value());
    const Tensor w = rows_of(value(Var::constant(zq)).value());
    std::vector<std::vector<Tensor>> protos(2);
    for (std::size_t e = 0; e < 2; ++e)
      for (std::size_t c = 0; c < 3; ++c) {
        const Tensor zs = net.featurizer()(Var::constant(support[e][c])).value();
        const Tensor k = rows_of(key(Var::constant(zs)).value());
        const Tensor v = rows_of(value(Var::constant(zs)).value());
        const std::size_t n = support[e][c].dim(0);
        protos[e].push_back(spatial_prototypes(attention_weights(k.reshaped({n, k.dim(0) / n, 3}), q), v));
      }
    const auto score = env_class_distance(protos, w);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(score[c] - logits.at(b, c)) < 1e-10);
  }
  CHECK(make_attention_heads(4, 3, 5, rng).parameters().size() == 3);
}
