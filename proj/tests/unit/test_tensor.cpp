#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "xdg/checkpoint.hpp"
#include "xdg/nn.hpp"
#include "xdg/ops.hpp"

using namespace xdg;
using xdg::testing::random_tensor;

namespace {

Tensor reference_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({B, K, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < K; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = b.empty() ? 0.0 : b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += k.at(o, c, u, v) * x.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
              }
          out.at(n, o, i, j) = s;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  const Tensor s = slice0(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), 1, 3);
  CHECK(s.vec() == std::vector<double>{3, 4, 5, 6});
  const std::size_t rows[] = {2, 0};
  CHECK(take0(Tensor({3, 1}, {7, 8, 9}), rows).vec() == std::vector<double>{9, 7});
  CHECK_THROWS(Tensor({2}, 0.0).item());
}

TEST_CASE("conv2d identity kernel returns the input") {
  Rng rng(1);
  const Tensor x = random_tensor({2, 1, 4, 5}, rng);
  const Tensor k({1, 1, 1, 1}, 1.0);
  const Tensor y = conv2d(Var::constant(x), Var::constant(k), Var::constant(Tensor({1}, 0.0)), 1, 0).value();
  CHECK(y == x);
}

TEST_CASE("conv2d zero kernels give the bias") {
  Rng rng(2);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor y = conv2d(Var::constant(x), Var::constant(Tensor({3, 2, 3, 3}, 0.0)),
                          Var::constant(Tensor({3}, {0.5, -1.0, 2.0})), 1, 1)
                       .value();
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, k, i, j) == (k == 0 ? 0.5 : k == 1 ? -1.0 : 2.0));
}

TEST_CASE("conv2d matches a nested-loop reference") {
  Rng rng(3);
  const Tensor x = random_tensor({1, 1, 5, 5}, rng);
  const Tensor k = random_tensor({1, 1, 3, 3}, rng);
  const Tensor b = random_tensor({1}, rng);
  const Tensor y = conv2d(Var::constant(x), Var::constant(k), Var::constant(b), 1, 0).value();
  CHECK(max_abs_diff(y, reference_conv(x, k, b, 1, 0)) < 1e-6);

  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1, 2}) {
      const Tensor x2 = random_tensor({2, 3, 7, 6}, rng);
      const Tensor k2 = random_tensor({4, 3, 3, 2}, rng);
      const Tensor y2 = conv2d(Var::constant(x2), Var::constant(k2), Var{}, stride, pad).value();
      CHECK(max_abs_diff(y2, reference_conv(x2, k2, Tensor{}, stride, pad)) < 1e-12);
    }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  const Var x = Var::constant(Tensor({1, 2, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({3, 1, 3, 3})), Var{}, 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({3, 2, 3, 3})), Var::constant(Tensor({2})), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({3, 2, 5, 5})), Var{}, 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(Var::constant(Tensor({2, 4, 4})), Var::constant(Tensor({3, 2, 3, 3})), Var{}, 1, 0),
                  ShapeError);
}

TEST_CASE("backward of sum gives ones and of <x,x> gives 2x") {
  Rng rng(4);
  Var x = Var::parameter(random_tensor({3, 2}, rng));
  backward(sum(x));
  CHECK(x.grad() == Tensor({3, 2}, 1.0));

  Var y = Var::parameter(random_tensor({5}, rng));
  backward(sum(mul(y, y)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(y.grad()[i] == doctest::Approx(2.0 * y.value()[i]).epsilon(1e-15));
}

TEST_CASE("backward accumulates and grad() leaves stored gradients alone") {
  Var x = Var::parameter(Tensor({2}, {1.0, -2.0}));
  backward(sum(x));
  backward(sum(x));
  CHECK(x.grad() == Tensor({2}, 2.0));
  const Var wrt[] = {x};
  const auto g = grad(sum(square(x)), wrt);
  CHECK(g[0].vec() == std::vector<double>{2.0, -4.0});
  CHECK(x.grad() == Tensor({2}, 2.0));
  x.zero_grad();
  CHECK(x.grad() == Tensor({2}, 0.0));
}

TEST_CASE("backward from a non-scalar is rejected") {
  Var x = Var::parameter(Tensor({3}, 1.0));
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);
}

TEST_CASE("random two-layer conv net matches finite differences with step 1e-3") {
  Rng rng(5);
  const Conv2d c1 = make_conv(2, 3, 3, 1, rng, "c1");
  const Conv2d c2 = make_conv(3, 2, 3, 0, rng, "c2");
  c1.bias.node()->value = random_tensor({3}, rng, -0.1, 0.1);
  const Tensor x = random_tensor({2, 2, 6, 6}, rng);
  auto params = join({c1.parameters(), c2.parameters()});
  auto loss = [&] { return testing::random_projection(c2(relu(c1(Var::constant(x)))), 99); };
  CHECK(testing::max_relative_error(loss, params, 1e-3, 1e-4) < 1e-3);
}

TEST_CASE("every differentiable op passes the finite-difference check") {
  for (const auto& r : testing::run_gradient_suite(3, 17)) {
    INFO(r.name);
    CHECK(r.max_rel < 1e-3);
  }
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits") {
    const Tensor onehot = one_hot(std::vector<int>{2}, 4);
    CHECK(softmax_cross_entropy(Var::constant(Tensor({1, 4}, 0.3)), onehot).value().item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }
  SUBCASE("saturated ground truth") {
    Tensor logits({1, 3}, 0.0);
    logits.at(0, 1) = 50.0;
    CHECK(softmax_cross_entropy(Var::constant(logits), one_hot(std::vector<int>{1}, 3)).value().item() < 1e-10);
  }
  SUBCASE("log-sum-exp reference") {
    Rng rng(6);
    const Tensor logits = random_tensor({3, 5}, rng, -4, 4);
    const std::vector<int> labels{4, 0, 2};
    double ref = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      double m = -1e300;
      for (std::size_t c = 0; c < 5; ++c) m = std::max(m, logits.at(b, c));
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += std::exp(logits.at(b, c) - m);
      ref += m + std::log(s) - logits.at(b, static_cast<std::size_t>(labels[b]));
    }
    ref /= 3.0;
    CHECK(std::abs(softmax_cross_entropy(Var::constant(logits), one_hot(labels, 5)).value().item() - ref) < 1e-9);
  }
  SUBCASE("non one-hot rows are rejected") {
    const Var logits = Var::constant(Tensor({2, 2}, 0.0));
    CHECK_THROWS(softmax_cross_entropy(logits, Tensor({2, 2}, {1, 0, 0.5, 0.5})));
    CHECK_THROWS(softmax_cross_entropy(logits, Tensor({2, 2}, {1, 1, 0, 1})));
    CHECK_THROWS(softmax_cross_entropy(logits, Tensor({2, 3}, {1, 0, 0, 0, 1, 0})));
  }
}

TEST_CASE("global average pooling") {
  CHECK(global_avg_pool(Var::constant(Tensor({2, 3, 4, 4}, 1.25))).value() == Tensor({2, 3}, 1.25));
  CHECK(global_avg_pool(Var::constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))).value().item() == 2.5);
  CHECK(global_avg_pool(Var::constant(Tensor({2, 2, 3, 3}))).value() == Tensor({2, 2}, 0.0));
}

TEST_CASE("pooling is linear") {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 3, 4, 4}, rng);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    Tensor mix = a;
    for (std::size_t j = 0; j < mix.size(); ++j) mix[j] = alpha * a[j] + beta * b[j];
    const Tensor lhs = global_avg_pool(Var::constant(mix)).value();
    const Tensor pa = global_avg_pool(Var::constant(a)).value(), pb = global_avg_pool(Var::constant(b)).value();
    for (std::size_t j = 0; j < lhs.size(); ++j) CHECK(std::abs(lhs[j] - (alpha * pa[j] + beta * pb[j])) < 1e-12);
  }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const Tensor p = softmax_rows(random_tensor({4, 6}, rng, -30, 30));
    for (std::size_t b = 0; b < 4; ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        CHECK(p.at(b, c) >= 0.0);
        s += p.at(b, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("pooling and shape helpers") {
  const Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 8});
  CHECK(maxpool2(Var::constant(x)).value().vec() == std::vector<double>{5, 8});
  CHECK(avgpool2(Var::constant(x)).value().vec() == std::vector<double>{3.25, 4.5});
  CHECK(global_max_pool(Var::constant(x)).value().item() == 8);
  const Tensor r = nchw_to_rows(Var::constant(Tensor({1, 2, 1, 2}, {1, 2, 3, 4}))).value();
  CHECK(r.shape() == Shape{2, 2});
  CHECK(r.vec() == std::vector<double>{1, 3, 2, 4});
  CHECK(argmax_rows(Tensor({2, 3}, {1, 3, 3, 0, -1, -2})) == std::vector<int>{1, 0});
  CHECK_THROWS_AS(one_hot(std::vector<int>{3}, 3), ValueError);
  CHECK_THROWS_AS(add(Var::constant(Tensor({2})), Var::constant(Tensor({3}))), ShapeError);
}

TEST_CASE("checkpoint containers round trip") {
  Rng rng(9);
  NamedArrays arrays{{"a", random_tensor({2, 3}, rng)}, {"b.c", random_tensor({4}, rng)}};
  const std::string bytes = encode_arrays(arrays);
  CHECK(bytes.substr(0, 4) == "XDG1");
  const auto back = decode_arrays(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a");
  CHECK(back[0].second == arrays[0].second);
  CHECK(back[1].second == arrays[1].second);
  CHECK_THROWS_AS(decode_arrays(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_arrays("nope"), FormatError);

  std::vector<Var> params{Var::parameter(Tensor({2}, 0.0), "a"), Var::parameter(Tensor({4}, 0.0), "b.c")};
  params[0] = Var::parameter(Tensor({2, 3}, 0.0), "a");
  restore(params, arrays);
  CHECK(params[0].value() == arrays[0].second);
  std::vector<Var> wrong{Var::parameter(Tensor({5}, 0.0), "a")};
  CHECK_THROWS(restore(wrong, arrays));
  CHECK(snapshot(params)[1].second == arrays[1].second);
}
