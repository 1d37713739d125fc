#include "xdg/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xdg/idx.hpp"
#include "xdg/random.hpp"

namespace xdg {

void MultiDomainDataset::validate() const {
  if (classes < 1) throw ValueError("dataset needs at least one class");
  if (envs.empty()) throw ValueError("dataset has no environments");
  const Shape shape = image_shape();
  std::vector<int> ids;
  for (const auto& e : envs) {
    if (e.images.rank() != 4 || e.images.dim(0) != e.labels.size()) {
      throw ValueError("environment '" + e.name + "': images " + shape_str(e.images.shape()) + " vs " +
                       std::to_string(e.labels.size()) + " labels");
    }
    if (Shape(e.images.shape().begin() + 1, e.images.shape().end()) != shape) {
      throw ValueError("environment '" + e.name + "' has a different image shape");
    }
    for (int l : e.labels) {
      if (l < 0 || l >= classes) throw ValueError("environment '" + e.name + "' has label " + std::to_string(l));
    }
    if (std::find(ids.begin(), ids.end(), e.domain_id) != ids.end()) {
      throw ValueError("duplicate domain id " + std::to_string(e.domain_id));
    }
    ids.push_back(e.domain_id);
  }
}

Shape MultiDomainDataset::image_shape() const {
  if (envs.empty()) throw ValueError("dataset has no environments");
  const auto& s = envs.front().images.shape();
  return Shape(s.begin() + 1, s.end());
}

// ---------------------------------------------------------------------------
// digit sources

bool mnist_available(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "train-images-idx3-ubyte") &&
         std::filesystem::exists(dir / "train-labels-idx1-ubyte");
}

DigitSource load_mnist(const std::filesystem::path& dir) {
  const auto img = read_file_bytes(dir / "train-images-idx3-ubyte");
  const auto lbl = read_file_bytes(dir / "train-labels-idx1-ubyte");
  Tensor images = parse_idx(img);
  if (images.rank() != 3) throw ValueError("MNIST image file must have three dimensions");
  DigitSource src;
  src.digits = parse_idx_labels(lbl);
  if (src.digits.size() != images.dim(0)) throw ValueError("MNIST image and label counts differ");
  src.images = images.reshaped({images.dim(0), 1, images.dim(1), images.dim(2)});
  return src;
}

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

std::vector<Stroke> ellipse(double cx, double cy, double rx, double ry, int n = 16) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return {s};
}

const std::vector<Stroke>& digit_strokes(int d) {
  static const std::vector<std::vector<Stroke>> table = [] {
    std::vector<std::vector<Stroke>> t(10);
    t[0] = ellipse(0.5, 0.5, 0.24, 0.36);
    t[1] = {{{0.36, 0.26}, {0.52, 0.1}, {0.52, 0.9}}};
    t[2] = {{{0.26, 0.3}, {0.36, 0.14}, {0.6, 0.12}, {0.73, 0.28}, {0.65, 0.46}, {0.26, 0.88}, {0.78, 0.88}}};
    t[3] = {{{0.26, 0.14}, {0.7, 0.14}, {0.46, 0.44}, {0.7, 0.58}, {0.7, 0.8}, {0.5, 0.9}, {0.26, 0.84}}};
    t[4] = {{{0.64, 0.9}, {0.64, 0.1}, {0.22, 0.64}, {0.8, 0.64}}};
    t[5] = {{{0.72, 0.12}, {0.32, 0.12}, {0.29, 0.46}, {0.56, 0.42}, {0.72, 0.6}, {0.65, 0.85}, {0.28, 0.88}}};
    t[6] = {{{0.66, 0.12}, {0.42, 0.3}, {0.29, 0.6}, {0.35, 0.85}, {0.6, 0.88}, {0.72, 0.68}, {0.55, 0.52}, {0.3, 0.62}}};
    t[7] = {{{0.22, 0.12}, {0.78, 0.12}, {0.44, 0.9}}};
    t[8] = ellipse(0.5, 0.3, 0.17, 0.17);
    t[8].push_back(ellipse(0.5, 0.68, 0.21, 0.21).front());
    t[9] = {{{0.7, 0.38}, {0.52, 0.5}, {0.32, 0.38}, {0.38, 0.16}, {0.62, 0.13}, {0.7, 0.38}, {0.6, 0.9}}};
    return t;
  }();
  return table.at(static_cast<std::size_t>(d));
}

double segment_distance(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

// Draws strokes given in unit coordinates, mapped through an affine transform into pixels.
// Intensity falls off linearly over one pixel outside the stroke half-width.
void draw_strokes(double* img, std::size_t side, const std::vector<Stroke>& strokes, const double affine[6],
                  double half_width, double intensity) {
  std::vector<std::pair<Pt, Pt>> segs;
  for (const auto& s : strokes) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      auto map = [&](Pt p) {
        return Pt{affine[0] * p.x + affine[1] * p.y + affine[2], affine[3] * p.x + affine[4] * p.y + affine[5]};
      };
      segs.emplace_back(map(s[i]), map(s[i + 1]));
    }
  }
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const Pt p{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& [a, b] : segs) d = std::min(d, segment_distance(p, a, b));
      const double v = std::clamp(1.0 + half_width - d, 0.0, 1.0) * intensity;
      double& px = img[y * side + x];
      px = std::max(px, v);
    }
}

}  // namespace

DigitSource render_digits(std::size_t n, std::uint64_t seed, std::size_t side) {
  if (n == 0) throw ValueError("render_digits: n must be positive");
  DigitSource src;
  src.images = Tensor({n, 1, side, side});
  src.digits.resize(n);
  Rng rng(mix_seed(seed, 0x6469676974ULL));
  const double s = static_cast<double>(side);
  for (std::size_t i = 0; i < n; ++i) {
    const int d = static_cast<int>(rng.below(10));
    src.digits[i] = d;
    const double scale = s * rng.uniform(0.62, 0.8);
    const double angle = rng.uniform(-0.2, 0.2);
    const double shear = rng.uniform(-0.25, 0.25);
    const double tx = s * 0.5 + rng.uniform(-0.08, 0.08) * s;
    const double ty = s * 0.5 + rng.uniform(-0.08, 0.08) * s;
    const double c = std::cos(angle), sn = std::sin(angle);
    // unit square centered at the origin, sheared, rotated, scaled and translated
    const double a = scale * c, b = scale * (c * shear - sn);
    const double dd = scale * sn, e = scale * (sn * shear + c);
    const double affine[6] = {a, b, tx - 0.5 * (a + b), dd, e, ty - 0.5 * (dd + e)};
    draw_strokes(src.images.data().data() + i * side * side, side, digit_strokes(d), affine,
                 rng.uniform(0.6, 1.4), rng.uniform(0.8, 1.0));
  }
  return src;
}

// ---------------------------------------------------------------------------
// colored / rotated variants

namespace {

std::vector<std::size_t> interleaved_rows(std::size_t n, std::size_t env, std::size_t envs) {
  std::vector<std::size_t> rows;
  for (std::size_t i = env; i < n; i += envs) rows.push_back(i);
  return rows;
}

}  // namespace

MultiDomainDataset gen_colored_mnist(const DigitSource& source, std::span<const double> domain_probs,
                                     double label_noise, std::uint64_t seed) {
  if (source.size() == 0) throw ValueError("gen_colored_mnist: empty digit source");
  if (domain_probs.empty()) throw ValueError("gen_colored_mnist: no domain probabilities");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ValueError("label_noise must lie in [0,1]");
  for (double p : domain_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("domain probabilities must lie in [0,1]");
  }
  const std::size_t E = domain_probs.size();
  if (source.size() < E) throw ValueError("gen_colored_mnist: fewer digits than environments");
  const std::size_t H = source.images.dim(2), W = source.images.dim(3), HW = H * W;
  MultiDomainDataset ds;
  ds.classes = 2;
  for (std::size_t e = 0; e < E; ++e) {
    Rng rng(mix_seed(seed, e));
    const auto rows = interleaved_rows(source.size(), e, E);
    Environment env;
    env.domain_id = static_cast<int>(e);
    env.name = "p=" + std::to_string(domain_probs[e]).substr(0, 4);
    env.images = Tensor({rows.size(), 2, H, W});
    env.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int base = source.digits[rows[i]] >= 5 ? 1 : 0;
      const int y = rng.bernoulli(label_noise) ? 1 - base : base;
      const int color = rng.bernoulli(domain_probs[e]) ? 1 - y : y;
      env.labels[i] = y;
      // red (channel 0) for color 1, green (channel 1) for color 0
      const std::size_t ch = color == 1 ? 0 : 1;
      const double* src = source.images.data().data() + rows[i] * HW;
      double* dst = env.images.data().data() + (i * 2 + ch) * HW;
      std::copy(src, src + HW, dst);
    }
    ds.envs.push_back(std::move(env));
  }
  return ds;
}

Tensor rotate_image(const Tensor& image, double angle_deg) {
  if (image.rank() != 3) throw ShapeError("rotate_image expects [C,H,W], got " + shape_str(image.shape()));
  if (!std::isfinite(angle_deg)) throw ValueError("rotation angle must be finite");
  if (angle_deg == 0.0) return image;
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  Tensor out(image.shape());
  auto sample = [&](std::size_t ch, long yy, long xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) return 0.0;
    return image.at(ch, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      // output pixel in math orientation (v up), rotated back by -t to find its source
      const double u = static_cast<double>(x) - cx;
      const double v = cy - static_cast<double>(y);
      const double su = c * u + s * v;
      const double sv = -s * u + c * v;
      const double sx = cx + su, sy = cy - sv;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t ch = 0; ch < C; ++ch) {
        out.at(ch, y, x) = (1 - ay) * ((1 - ax) * sample(ch, y0, x0) + ax * sample(ch, y0, x0 + 1)) +
                           ay * ((1 - ax) * sample(ch, y0 + 1, x0) + ax * sample(ch, y0 + 1, x0 + 1));
      }
    }
  return out;
}

MultiDomainDataset gen_rotated_mnist(const DigitSource& source, std::span<const double> angles_deg) {
  if (source.size() == 0) throw ValueError("gen_rotated_mnist: empty digit source");
  const std::size_t E = angles_deg.size();
  if (E == 0) throw ValueError("gen_rotated_mnist: no angles");
  if (source.size() < E) throw ValueError("gen_rotated_mnist: fewer digits than environments");
  const auto& s = source.images.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  MultiDomainDataset ds;
  ds.classes = 10;
  for (std::size_t e = 0; e < E; ++e) {
    const auto rows = interleaved_rows(source.size(), e, E);
    Environment env;
    env.domain_id = static_cast<int>(e);
    env.name = "rot" + std::to_string(static_cast<long>(std::lround(angles_deg[e])));
    env.images = Tensor({rows.size(), s[1], s[2], s[3]});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Tensor img({s[1], s[2], s[3]}, std::vector<double>(source.images.data().begin() + rows[i] * per,
                                                         source.images.data().begin() + (rows[i] + 1) * per));
      Tensor r = rotate_image(img, angles_deg[e]);
      std::copy(r.data().begin(), r.data().end(), env.images.data().begin() + i * per);
      env.labels.push_back(source.digits[rows[i]]);
    }
    ds.envs.push_back(std::move(env));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// glyphs

MultiDomainDataset gen_synth_glyphs(const GlyphSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ValueError("gen_synth_glyphs: classes must be >= 2");
  if (spec.domains < 1 || spec.per_class == 0) throw ValueError("gen_synth_glyphs: need domains >= 1, per_class >= 1");
  if (spec.channels != 1 && spec.channels != 2) throw ValueError("gen_synth_glyphs: channels must be 1 or 2");
  const std::size_t side = spec.side, HW = side * side;

  // class geometry: three random segments forming an open polyline plus one free segment
  std::vector<std::vector<Stroke>> shapes;
  for (int c = 0; c < spec.classes; ++c) {
    Rng g(mix_seed(seed, 0x676c797068ULL + static_cast<std::uint64_t>(c)));
    Stroke poly;
    for (int k = 0; k < 3; ++k) poly.push_back({g.uniform(0.15, 0.85), g.uniform(0.15, 0.85)});
    Stroke free{{g.uniform(0.15, 0.85), g.uniform(0.15, 0.85)}, {g.uniform(0.15, 0.85), g.uniform(0.15, 0.85)}};
    shapes.push_back({poly, free});
  }

  MultiDomainDataset ds;
  ds.classes = spec.classes;
  const double s = static_cast<double>(side);
  for (int d = 0; d < spec.domains; ++d) {
    Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(d)));
    const double half_width = 0.4 + 0.5 * d;
    const double background = 0.12 * (d % 4);
    const double red_share = spec.domains > 1 ? static_cast<double>(d) / (spec.domains - 1) : 1.0;
    Environment env;
    env.domain_id = d;
    env.name = "style" + std::to_string(d);
    const std::size_t n = spec.per_class * static_cast<std::size_t>(spec.classes);
    env.images = Tensor({n, spec.channels, side, side});
    std::vector<double> canvas(HW);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
      env.labels.push_back(c);
      std::fill(canvas.begin(), canvas.end(), 0.0);
      const double scale = s * rng.uniform(0.85, 1.0);
      const double tx = rng.uniform(-0.06, 0.06) * s + 0.5 * (s - scale);
      const double ty = rng.uniform(-0.06, 0.06) * s + 0.5 * (s - scale);
      const double affine[6] = {scale, 0.0, tx, 0.0, scale, ty};
      draw_strokes(canvas.data(), side, shapes[static_cast<std::size_t>(c)], affine, half_width, 1.0);
      for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        const double gain = spec.channels == 1 ? 1.0 : (ch == 0 ? red_share : 1.0 - red_share) * 0.7 + 0.3;
        double* dst = env.images.data().data() + (i * spec.channels + ch) * HW;
        for (std::size_t p = 0; p < HW; ++p) {
          const double v = background + (1.0 - background) * canvas[p] * gain + 0.03 * rng.normal();
          dst[p] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    ds.envs.push_back(std::move(env));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// splits and storage

SplitIndices split_indices(const MultiDomainDataset& ds, const SplitSpec& spec) {
  if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0)) throw ValueError("val_fraction must lie in [0,1)");
  SplitIndices out;
  for (std::size_t e = 0; e < ds.envs.size(); ++e) {
    const std::size_t n = ds.envs[e].size();
    Rng rng(mix_seed(spec.seed, 0x73706c6974ULL + e));
    auto perm = rng.permutation(n);
    const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
    std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<long>(n_val));
    std::vector<std::size_t> train(perm.begin() + static_cast<long>(n_val), perm.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    out.val.push_back(std::move(val));
    out.train.push_back(std::move(train));
  }
  return out;
}

MultiDomainDataset subset(const MultiDomainDataset& ds, const std::vector<std::vector<std::size_t>>& rows) {
  if (rows.size() != ds.envs.size()) throw ValueError("subset: one row list per environment required");
  MultiDomainDataset out;
  out.classes = ds.classes;
  for (std::size_t e = 0; e < ds.envs.size(); ++e) {
    const auto& src = ds.envs[e];
    Environment env;
    env.domain_id = src.domain_id;
    env.name = src.name;
    if (!rows[e].empty()) env.images = take0(src.images, rows[e]);
    for (auto r : rows[e]) env.labels.push_back(src.labels.at(r));
    out.envs.push_back(std::move(env));
  }
  return out;
}

std::pair<MultiDomainDataset, MultiDomainDataset> split_domains(const MultiDomainDataset& ds, const SplitSpec& spec) {
  const auto idx = split_indices(ds, spec);
  return {subset(ds, idx.train), subset(ds, idx.val)};
}

NamedArrays encode_dataset(const MultiDomainDataset& ds) {
  ds.validate();
  NamedArrays out;
  out.emplace_back("classes", Tensor::scalar(ds.classes));
  out.emplace_back("environments", Tensor::scalar(static_cast<double>(ds.envs.size())));
  for (std::size_t e = 0; e < ds.envs.size(); ++e) {
    const auto& env = ds.envs[e];
    const std::string p = "env" + std::to_string(e) + "/";
    out.emplace_back(p + "domain_id", Tensor::scalar(env.domain_id));
    std::vector<double> name(env.name.begin(), env.name.end());
    if (name.empty()) name.push_back(0.0);
    out.emplace_back(p + "name", Tensor({name.size()}, name));
    out.emplace_back(p + "images", env.images);
    out.emplace_back(p + "labels", Tensor({env.labels.size()}, std::vector<double>(env.labels.begin(), env.labels.end())));
  }
  return out;
}

MultiDomainDataset decode_dataset(const NamedArrays& arrays) {
  MultiDomainDataset ds;
  ds.classes = static_cast<int>(find_array(arrays, "classes").item());
  const auto n = static_cast<std::size_t>(find_array(arrays, "environments").item());
  for (std::size_t e = 0; e < n; ++e) {
    const std::string p = "env" + std::to_string(e) + "/";
    Environment env;
    env.domain_id = static_cast<int>(find_array(arrays, p + "domain_id").item());
    for (double c : find_array(arrays, p + "name").data()) {
      if (c != 0.0) env.name += static_cast<char>(c);
    }
    env.images = find_array(arrays, p + "images");
    for (double l : find_array(arrays, p + "labels").data()) env.labels.push_back(static_cast<int>(l));
    ds.envs.push_back(std::move(env));
  }
  ds.validate();
  return ds;
}

std::vector<std::vector<std::size_t>> class_counts(const MultiDomainDataset& ds) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& e : ds.envs) {
    std::vector<std::size_t> c(static_cast<std::size_t>(ds.classes), 0);
    for (int l : e.labels) ++c[static_cast<std::size_t>(l)];
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace xdg
