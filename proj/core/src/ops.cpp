#include "xdg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "gemm.hpp"

namespace xdg {

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  auto xs = std::make_shared<Tensor>(x);
  auto ys = std::make_shared<Tensor>(y);
  return make_op(std::move(y), {a}, [xs, ys, df](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df((*xs)[i], (*ys)[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  return make_op(std::move(y), {a, b}, [](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) *gin[0] += g;
    if (gin[1]) *gin[1] += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return make_op(std::move(y), {a, b}, [](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) *gin[0] += g;
    if (gin[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  auto as = std::make_shared<Tensor>(a.value());
  auto bs = std::make_shared<Tensor>(b.value());
  return make_op(std::move(y), {a, b}, [as, bs](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*bs)[i];
    }
    if (gin[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*as)[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor y = a.value();
  y *= s;
  return make_op(std::move(y), {a}, [s](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y = a.value();
  for (auto& v : y.data()) v += s;
  return make_op(std::move(y), {a}, [](const Tensor& g, std::span<Tensor* const> gin) { *gin[0] += g; });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op(Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0];
    for (auto& v : gin[0]->data()) v += gv;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) return Var::constant(Tensor::scalar(0.0));
  double s = 0.0;
  for (const auto& t : terms) {
    if (t.value().size() != 1) throw ShapeError("add_n expects scalars, got " + shape_str(t.shape()));
    s += t.value()[0];
  }
  std::vector<Var> parents(terms.begin(), terms.end());
  return make_op(Tensor::scalar(s), std::move(parents), [](const Tensor& g, std::span<Tensor* const> gin) {
    for (auto* p : gin) {
      if (p) (*p)[0] += g[0];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_op(std::move(y), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

Var slice0(const Var& a, std::size_t begin, std::size_t end) {
  Tensor y = xdg::slice0(a.value(), begin, end);
  const std::size_t offset = begin * (a.value().size() / a.shape()[0]);
  return make_op(std::move(y), {a}, [offset](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[offset + i] += g[i];
  });
}

Var concat0(std::span<const Var> parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor y = xdg::concat0(values);
  std::vector<std::size_t> sizes;
  for (const auto& v : values) sizes.push_back(v.size());
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(y), std::move(parents), [sizes](const Tensor& g, std::span<Tensor* const> gin) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      if (gin[p]) {
        for (std::size_t i = 0; i < sizes[p]; ++i) (*gin[p])[i] += g[off + i];
      }
      off += sizes[p];
    }
  });
}

Var gather(const Var& a, std::span<const std::size_t> flat_index) {
  if (flat_index.empty()) throw ShapeError("gather with empty index");
  Tensor y(Shape{flat_index.size()});
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= a.value().size()) throw ShapeError("gather index out of range");
    y[i] = a.value()[flat_index[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(flat_index.begin(), flat_index.end());
  return make_op(std::move(y), {a}, [idx](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < idx->size(); ++i) (*gin[0])[(*idx)[i]] += g[i];
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor y(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.at(j, i) = a.value().at(i, j);
  return make_op(std::move(y), {a}, [n, m](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gin[0]->at(i, j) += g.at(j, i);
  });
}

Var nchw_to_rows(const Var& a) {
  require_rank(a, 4, "nchw_to_rows");
  const auto& s = a.shape();
  const std::size_t B = s[0], K = s[1], HW = s[2] * s[3];
  Tensor y(Shape{B * HW, K});
  const Tensor& x = a.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < HW; ++p) y[(b * HW + p) * K + k] = x[(b * K + k) * HW + p];
  return make_op(std::move(y), {a}, [B, K, HW](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& gx = *gin[0];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < HW; ++p) gx[(b * K + k) * HW + p] += g[(b * HW + p) * K + k];
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor y(Shape{n, m});
  detail::gemm(false, false, n, m, k, a.value().data().data(), b.value().data().data(), y.data().data(), false);
  auto as = std::make_shared<Tensor>(a.value());
  auto bs = std::make_shared<Tensor>(b.value());
  return make_op(std::move(y), {a, b}, [as, bs, n, k, m](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) detail::gemm(false, true, n, k, m, g.data().data(), bs->data().data(), gin[0]->data().data(), true);
    if (gin[1]) detail::gemm(true, false, k, m, n, as->data().data(), g.data().data(), gin[1]->data().data(), true);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t B = x.shape()[0], in = x.shape()[1], out = weight.shape()[0];
  if (weight.shape()[1] != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(out) +
                     " outputs");
  }
  Tensor y(Shape{B, out});
  detail::gemm(false, true, B, out, in, x.value().data().data(), weight.value().data().data(), y.data().data(),
               false);
  if (has_bias) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < out; ++o) y.at(b, o) += bias.value()[o];
  }
  auto xs = std::make_shared<Tensor>(x.value());
  auto ws = std::make_shared<Tensor>(weight.value());
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_op(std::move(y), std::move(parents),
                 [xs, ws, B, in, out, has_bias](const Tensor& g, std::span<Tensor* const> gin) {
                   if (gin[0])
                     detail::gemm(false, false, B, in, out, g.data().data(), ws->data().data(),
                                  gin[0]->data().data(), true);
                   if (gin[1])
                     detail::gemm(true, false, out, in, B, g.data().data(), xs->data().data(),
                                  gin[1]->data().data(), true);
                   if (has_bias && gin[2]) {
                     for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t o = 0; o < out; ++o) (*gin[2])[o] += g.at(b, o);
                   }
                 });
}

namespace {

struct ConvGeometry {
  std::size_t C, H, W, kh, kw, stride, pad, Ho, Wo;
};

// one image [C,H,W] -> columns [C*kh*kw, Ho*Wo], zero where the window leaves the image
void im2col(const ConvGeometry& g, const double* img, double* col) {
  const std::size_t P = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          double* out = row + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<long>(g.H)) {
            std::fill(out, out + g.Wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.W)) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* col, double* img) {
  const std::size_t P = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          double* dst = img + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.W)) dst[ix] += row[oy * g.Wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& kernels, const Var& bias, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  const auto& xs = x.shape();
  const auto& ks = kernels.shape();
  const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t K = ks[0], kh = ks[2], kw = ks[3];
  if (ks[1] != C) {
    throw ShapeError("conv2d: kernels " + shape_str(ks) + " expect " + std::to_string(ks[1]) +
                     " input channels, input " + shape_str(xs) + " has " + std::to_string(C));
  }
  if (kh > H + 2 * pad || kw > W + 2 * pad) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + shape_str(xs) + " with pad " + std::to_string(pad));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{K}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(K) +
                     " kernels");
  }
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t P = Ho * Wo, R = C * kh * kw;

  const ConvGeometry geo{C, H, W, kh, kw, stride, pad, Ho, Wo};
  const Tensor& xv = x.value();
  std::vector<double> col(R * P);
  Tensor y(Shape{B, K, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b) {
    im2col(geo, xv.data().data() + b * C * H * W, col.data());
    detail::gemm(false, false, K, P, R, kernels.value().data().data(), col.data(), y.data().data() + b * K * P, false);
    if (has_bias) {
      for (std::size_t k = 0; k < K; ++k) {
        const double bk = bias.value()[k];
        double* o = y.data().data() + (b * K + k) * P;
        for (std::size_t p = 0; p < P; ++p) o[p] += bk;
      }
    }
  }

  // columns are rebuilt per image in the backward pass instead of being stored
  auto xin = std::make_shared<Tensor>(xv);
  auto ws = std::make_shared<Tensor>(kernels.value());
  std::vector<Var> parents{x, kernels};
  if (has_bias) parents.push_back(bias);
  return make_op(std::move(y), std::move(parents),
                 [=](const Tensor& g, std::span<Tensor* const> gin) {
                   std::vector<double> buf(R * P);
                   for (std::size_t b = 0; b < B; ++b) {
                     const double* gb = g.data().data() + b * K * P;
                     if (gin[1]) {
                       im2col(geo, xin->data().data() + b * C * H * W, buf.data());
                       detail::gemm(false, true, K, R, P, gb, buf.data(), gin[1]->data().data(), true);
                     }
                     if (has_bias && gin[2]) {
                       for (std::size_t k = 0; k < K; ++k) {
                         double s = 0.0;
                         for (std::size_t p = 0; p < P; ++p) s += gb[k * P + p];
                         (*gin[2])[k] += s;
                       }
                     }
                     if (gin[0]) {
                       detail::gemm(true, false, R, P, K, ws->data().data(), gb, buf.data(), false);
                       col2im_add(geo, buf.data(), gin[0]->data().data() + b * C * H * W);
                     }
                   }
                 });
}

Var maxpool2(const Var& x) {
  require_rank(x, 4, "maxpool2");
  const auto& s = x.shape();
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (H < 2 || W < 2) throw ShapeError("maxpool2: spatial size below 2 in " + shape_str(s));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor y(Shape{B, C, Ho, Wo});
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  const Tensor& xv = x.value();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (bc * H + 2 * oy) * W + 2 * ox;
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) {
            const std::size_t idx = (bc * H + 2 * oy + i) * W + 2 * ox + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        y[o] = xv[best];
        (*arg)[o] = best;
      }
  return make_op(std::move(y), {x}, [arg](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t o = 0; o < g.size(); ++o) (*gin[0])[(*arg)[o]] += g[o];
  });
}

Var avgpool2(const Var& x) {
  require_rank(x, 4, "avgpool2");
  const auto& s = x.shape();
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (H < 2 || W < 2) throw ShapeError("avgpool2: spatial size below 2 in " + shape_str(s));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor y(Shape{B, C, Ho, Wo});
  const Tensor& xv = x.value();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) acc += xv[(bc * H + 2 * oy + i) * W + 2 * ox + j];
        y[(bc * Ho + oy) * Wo + ox] = 0.25 * acc;
      }
  return make_op(std::move(y), {x}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const double gv = 0.25 * g[(bc * Ho + oy) * Wo + ox];
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) (*gin[0])[(bc * H + 2 * oy + i) * W + 2 * ox + j] += gv;
        }
  });
}

Var global_avg_pool(const Var& z) {
  require_rank(z, 4, "global_avg_pool");
  const auto& s = z.shape();
  const std::size_t B = s[0], K = s[1], HW = s[2] * s[3];
  Tensor y(Shape{B, K});
  const Tensor& zv = z.value();
  for (std::size_t bk = 0; bk < B * K; ++bk) {
    double acc = 0.0;
    for (std::size_t p = 0; p < HW; ++p) acc += zv[bk * HW + p];
    y[bk] = acc / static_cast<double>(HW);
  }
  return make_op(std::move(y), {z}, [B, K, HW](const Tensor& g, std::span<Tensor* const> gin) {
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t bk = 0; bk < B * K; ++bk) {
      const double gv = g[bk] * inv;
      for (std::size_t p = 0; p < HW; ++p) (*gin[0])[bk * HW + p] += gv;
    }
  });
}

Var global_max_pool(const Var& z) {
  require_rank(z, 4, "global_max_pool");
  const auto& s = z.shape();
  const std::size_t B = s[0], M = s[1], HW = s[2] * s[3];
  Tensor y(Shape{B, M});
  auto arg = std::make_shared<std::vector<std::size_t>>(B * M);
  const Tensor& zv = z.value();
  for (std::size_t bm = 0; bm < B * M; ++bm) {
    std::size_t best = bm * HW;
    for (std::size_t p = 1; p < HW; ++p) {
      if (zv[bm * HW + p] > zv[best]) best = bm * HW + p;
    }
    y[bm] = zv[best];
    (*arg)[bm] = best;
  }
  return make_op(std::move(y), {z}, [arg](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[(*arg)[i]] += g[i];
  });
}

Var channel_weighted_sum(const Var& z, const Tensor& weights) {
  require_rank(z, 4, "channel_weighted_sum");
  const auto& s = z.shape();
  const std::size_t B = s[0], K = s[1], H = s[2], W = s[3], HW = H * W;
  if (weights.shape() != Shape{B, K}) {
    throw ShapeError("channel_weighted_sum: weights " + shape_str(weights.shape()) + " for features " +
                     shape_str(s));
  }
  Tensor y(Shape{B, H, W});
  const Tensor& zv = z.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      const double w = weights.at(b, k);
      for (std::size_t p = 0; p < HW; ++p) y[b * HW + p] += w * zv[(b * K + k) * HW + p];
    }
  auto ws = std::make_shared<Tensor>(weights);
  return make_op(std::move(y), {z}, [ws, B, K, HW](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const double w = ws->at(b, k);
        for (std::size_t p = 0; p < HW; ++p) (*gin[0])[(b * K + k) * HW + p] += w * g[b * HW + p];
      }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows expects [B,C], got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits.at(b, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (p.at(b, c) = std::exp(logits.at(b, c) - mx));
    for (std::size_t c = 0; c < C; ++c) p.at(b, c) /= z;
  }
  return p;
}

Var softmax_rows(const Var& logits) {
  require_rank(logits, 2, "softmax_rows");
  Tensor p = softmax_rows(logits.value());
  auto ps = std::make_shared<Tensor>(p);
  return make_op(std::move(p), {logits}, [ps](const Tensor& g, std::span<Tensor* const> gin) {
    const std::size_t B = ps->dim(0), C = ps->dim(1);
    for (std::size_t b = 0; b < B; ++b) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += g.at(b, c) * ps->at(b, c);
      for (std::size_t c = 0; c < C; ++c) gin[0]->at(b, c) += ps->at(b, c) * (g.at(b, c) - dot);
    }
  });
}

namespace {

Tensor log_softmax_values(const Tensor& x) {
  const std::size_t B = x.dim(0), C = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x.at(b, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(x.at(b, c) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) y.at(b, c) = x.at(b, c) - lse;
  }
  return y;
}

}  // namespace

Var log_softmax_rows(const Var& logits) {
  require_rank(logits, 2, "log_softmax_rows");
  Tensor y = log_softmax_values(logits.value());
  auto ys = std::make_shared<Tensor>(y);
  return make_op(std::move(y), {logits}, [ys](const Tensor& g, std::span<Tensor* const> gin) {
    const std::size_t B = ys->dim(0), C = ys->dim(1);
    for (std::size_t b = 0; b < B; ++b) {
      double gs = 0.0;
      for (std::size_t c = 0; c < C; ++c) gs += g.at(b, c);
      for (std::size_t c = 0; c < C; ++c) gin[0]->at(b, c) += g.at(b, c) - std::exp(ys->at(b, c)) * gs;
    }
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& onehot) {
  require_rank(logits, 2, "softmax_cross_entropy");
  if (onehot.shape() != logits.shape()) {
    throw ShapeError("softmax_cross_entropy: onehot " + shape_str(onehot.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  for (std::size_t b = 0; b < B; ++b) {
    int ones = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double v = onehot.at(b, c);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw ValueError("softmax_cross_entropy: row " + std::to_string(b) + " is not one-hot");
  }
  Tensor lp = log_softmax_values(logits.value());
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) loss -= onehot.at(b, c) * lp.at(b, c);
  loss /= static_cast<double>(B);
  auto lps = std::make_shared<Tensor>(std::move(lp));
  auto ys = std::make_shared<Tensor>(onehot);
  return make_op(Tensor::scalar(loss), {logits}, [lps, ys, B, C](const Tensor& g, std::span<Tensor* const> gin) {
    const double s = g[0] / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) gin[0]->at(b, c) += s * (std::exp(lps->at(b, c)) - ys->at(b, c));
  });
}

Var cross_entropy_per_sample(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_per_sample");
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  if (labels.size() != B) throw ShapeError("cross_entropy_per_sample: label count differs from batch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) throw ValueError("cross_entropy_per_sample: label out of range");
  }
  Tensor lp = log_softmax_values(logits.value());
  Tensor y(Shape{B});
  for (std::size_t b = 0; b < B; ++b) y[b] = -lp.at(b, static_cast<std::size_t>(labels[b]));
  auto lps = std::make_shared<Tensor>(std::move(lp));
  auto ls = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  return make_op(std::move(y), {logits}, [lps, ls, B, C](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double t = static_cast<int>(c) == (*ls)[b] ? 1.0 : 0.0;
        gin[0]->at(b, c) += g[b] * (std::exp(lps->at(b, c)) - t);
      }
  });
}

Var pairwise_sq_dists(const Var& a, const Var& b) {
  require_rank(a, 2, "pairwise_sq_dists");
  require_rank(b, 2, "pairwise_sq_dists");
  const std::size_t n = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
  if (b.shape()[1] != d) {
    throw ShapeError("pairwise_sq_dists: widths differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor y(Shape{n, m});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av.at(i, k) - bv.at(j, k);
        s += diff * diff;
      }
      y.at(i, j) = s;
    }
  auto as = std::make_shared<Tensor>(av);
  auto bs = std::make_shared<Tensor>(bv);
  return make_op(std::move(y), {a, b}, [as, bs, n, m, d](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double gv = 2.0 * g.at(i, j);
        if (gv == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = as->at(i, k) - bs->at(j, k);
          if (gin[0]) gin[0]->at(i, k) += gv * diff;
          if (gin[1]) gin[1]->at(j, k) -= gv * diff;
        }
      }
  });
}

Var patch_sq_dists(const Var& z, const Var& protos) {
  require_rank(z, 4, "patch_sq_dists features");
  require_rank(protos, 4, "patch_sq_dists prototypes");
  const auto& zs = z.shape();
  const auto& ps = protos.shape();
  const std::size_t B = zs[0], K = zs[1], H = zs[2], W = zs[3];
  const std::size_t M = ps[0], hp = ps[2], wp = ps[3];
  if (ps[1] != K || hp > H || wp > W) {
    throw ShapeError("patch_sq_dists: prototypes " + shape_str(ps) + " incompatible with features " +
                     shape_str(zs));
  }
  const std::size_t Ho = H - hp + 1, Wo = W - wp + 1;
  Tensor y(Shape{B, M, Ho, Wo});
  const Tensor& zv = z.value();
  const Tensor& pv = protos.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double s = 0.0;
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < hp; ++i)
              for (std::size_t j = 0; j < wp; ++j) {
                const double diff = zv.at(b, k, oy + i, ox + j) - pv.at(m, k, i, j);
                s += diff * diff;
              }
          y.at(b, m, oy, ox) = s;
        }
  auto zsv = std::make_shared<Tensor>(zv);
  auto psv = std::make_shared<Tensor>(pv);
  return make_op(std::move(y), {z, protos}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double gv = 2.0 * g.at(b, m, oy, ox);
            if (gv == 0.0) continue;
            for (std::size_t k = 0; k < K; ++k)
              for (std::size_t i = 0; i < hp; ++i)
                for (std::size_t j = 0; j < wp; ++j) {
                  const double diff = zsv->at(b, k, oy + i, ox + j) - psv->at(m, k, i, j);
                  if (gin[0]) gin[0]->at(b, k, oy + i, ox + j) += gv * diff;
                  if (gin[1]) gin[1]->at(m, k, i, j) -= gv * diff;
                }
          }
  });
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValueError("one_hot: label " + std::to_string(labels[i]) + " outside [0," + std::to_string(classes) + ")");
    }
    t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  const std::size_t C = logits.dim(1);
  for (std::size_t b = 0; b < out.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (logits.at(b, c) > logits.at(b, best)) best = c;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace xdg
