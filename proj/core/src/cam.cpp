#include "xdg/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "xdg/ops.hpp"

namespace xdg {

Tensor logit_gradient(const Tensor& z, const HeadFn& head, std::span<const int> classes) {
  if (z.rank() != 4) throw ShapeError("features must be [B,K,H,W], got " + shape_str(z.shape()));
  const std::size_t B = z.dim(0);
  if (classes.size() != B) throw ShapeError("one class per sample required");
  Var leaf = Var::parameter(z);
  Var logits = head(leaf);
  const std::size_t C = logits.shape().at(1);
  std::vector<std::size_t> idx(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (classes[b] < 0 || static_cast<std::size_t>(classes[b]) >= C) {
      throw ValueError("class " + std::to_string(classes[b]) + " outside [0," + std::to_string(C) + ")");
    }
    idx[b] = b * C + static_cast<std::size_t>(classes[b]);
  }
  Var target = sum(gather(logits, idx));
  const Var wrt[] = {leaf};
  return std::move(grad(target, wrt).front());
}

Tensor classic_cam(const Tensor& z, const Tensor& fc_weights, int c) {
  if (z.rank() != 4) throw ShapeError("features must be [B,K,H,W], got " + shape_str(z.shape()));
  if (fc_weights.rank() != 2 || fc_weights.dim(1) != z.dim(1)) {
    throw ShapeError("classifier weights " + shape_str(fc_weights.shape()) + " do not match features " +
                     shape_str(z.shape()));
  }
  if (c < 0 || static_cast<std::size_t>(c) >= fc_weights.dim(0)) {
    throw ValueError("class " + std::to_string(c) + " outside [0," + std::to_string(fc_weights.dim(0)) + ")");
  }
  const std::size_t B = z.dim(0), K = z.dim(1), HW = z.dim(2) * z.dim(3);
  Tensor m({B, z.dim(2), z.dim(3)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      const double w = fc_weights.at(static_cast<std::size_t>(c), k);
      for (std::size_t p = 0; p < HW; ++p) m[b * HW + p] += w * z[(b * K + k) * HW + p];
    }
  return m;
}

Tensor grad_cam_importance(const Tensor& z, const HeadFn& head, std::span<const int> classes) {
  Tensor g = logit_gradient(z, head, classes);
  if (!all_finite(g)) throw std::runtime_error("grad-cam: non-finite gradient of the class score");
  const std::size_t B = z.dim(0), K = z.dim(1), HW = z.dim(2) * z.dim(3);
  Tensor imp({B, K});
  for (std::size_t bk = 0; bk < B * K; ++bk) {
    double s = 0.0;
    for (std::size_t p = 0; p < HW; ++p) s += g[bk * HW + p];
    imp[bk] = s / static_cast<double>(HW);
  }
  return imp;
}

Tensor grad_cam(const Tensor& z, const HeadFn& head, std::span<const int> classes) {
  const Tensor imp = grad_cam_importance(z, head, classes);
  Tensor m = channel_weighted_sum(Var::constant(z), imp).value();
  for (auto& v : m.data()) v = std::max(v, 0.0);
  return m;
}

Tensor grad_cam(const Featurizer& featurizer, const HeadFn& head, const Tensor& x, int c) {
  const Tensor z = featurizer(Var::constant(x)).value();
  std::vector<int> classes(z.dim(0), c);
  return grad_cam(z, head, classes);
}

Tensor upsample_bilinear(const Tensor& maps, std::size_t H, std::size_t W) {
  if (maps.rank() != 3) throw ShapeError("maps must be [B,h,w], got " + shape_str(maps.shape()));
  if (H == 0 || W == 0) throw ValueError("target size must be positive");
  const std::size_t B = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  Tensor out({B, H, W});
  auto coord = [](std::size_t i, std::size_t dst, std::size_t src) {
    if (dst == 1 || src == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y) {
      const double sy = coord(y, H, h);
      const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double ay = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < W; ++x) {
        const double sx = coord(x, W, w);
        const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double ax = sx - static_cast<double>(x0);
        const double top = maps.at(b, y0, x0) + ax * (maps.at(b, y0, x1) - maps.at(b, y0, x0));
        const double bot = maps.at(b, y1, x0) + ax * (maps.at(b, y1, x1) - maps.at(b, y1, x0));
        out.at(b, y, x) = top + ay * (bot - top);
      }
    }
  return out;
}

std::array<double, 3> heat_ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double a = t - static_cast<double>(i);
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) rgb[c] = stops[i][c] + a * (stops[i + 1][c] - stops[i][c]);
  return rgb;
}

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

std::string heatmap_ppm(const Tensor& map, const Tensor& base) {
  if (map.rank() != 2 || !map.same_shape(base)) {
    throw ShapeError("heatmap needs equal [H,W] map and base, got " + shape_str(map.shape()) + " and " +
                     shape_str(base.shape()));
  }
  const std::size_t H = map.dim(0), W = map.dim(1);
  double mx = 0.0;
  for (double v : map.data()) mx = std::max(mx, v);
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (std::size_t i = 0; i < H * W; ++i) {
    const double t = mx > 0.0 ? std::max(map[i], 0.0) / mx : 0.0;
    const auto rgb = heat_ramp(t);
    const double gray = 255.0 * std::clamp(base[i], 0.0, 1.0);
    for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(0.5 * gray + 0.5 * rgb[c])));
  }
  return out;
}

std::string grayscale_pgm(const Tensor& values) {
  if (values.rank() != 2) throw ShapeError("grayscale image needs [H,W], got " + shape_str(values.shape()));
  const std::size_t H = values.dim(0), W = values.dim(1);
  const auto [lo, hi] = std::minmax_element(values.data().begin(), values.data().end());
  const double span = *hi - *lo;
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (double v : values.data()) {
    out.push_back(static_cast<char>(to_byte(span > 0.0 ? 255.0 * (v - *lo) / span : 0.0)));
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void export_heatmap(const Tensor& map, const Tensor& base, const std::filesystem::path& path) {
  write_bytes(path, heatmap_ppm(map, base));
}

}  // namespace xdg
