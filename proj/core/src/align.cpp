#include "xdg/align.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "xdg/ops.hpp"

namespace xdg {

Var tap_pool(const Var& z, double lambda_tap) {
  if (!(lambda_tap >= 0.0 && lambda_tap < 1.0)) throw ValueError("lambda_tap must lie in [0,1)");
  if (z.shape().size() != 4) throw ShapeError("tap_pool expects [B,K,H,W], got " + shape_str(z.shape()));
  const auto& s = z.shape();
  const std::size_t B = s[0], K = s[1], HW = s[2] * s[3];
  const Tensor& zv = z.value();
  Tensor y({B, K});
  // per (b,k): weight 1/count on selected cells
  auto weight = std::make_shared<Tensor>(zv.shape());
  for (std::size_t bk = 0; bk < B * K; ++bk) {
    const double* cell = zv.data().data() + bk * HW;
    const double tau = lambda_tap * *std::max_element(cell, cell + HW);
    std::size_t count = 0;
    double acc = 0.0;
    for (std::size_t p = 0; p < HW; ++p) {
      if (cell[p] > tau) {
        ++count;
        acc += cell[p];
      }
    }
    if (count == 0) continue;
    y[bk] = acc / static_cast<double>(count);
    for (std::size_t p = 0; p < HW; ++p) {
      if (cell[p] > tau) (*weight)[bk * HW + p] = 1.0 / static_cast<double>(count);
    }
  }
  return make_op(std::move(y), {z}, [weight, B, K, HW](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t bk = 0; bk < B * K; ++bk)
      for (std::size_t p = 0; p < HW; ++p) (*gin[0])[bk * HW + p] += g[bk] * (*weight)[bk * HW + p];
  });
}

namespace {

std::size_t cells_per_map(const Tensor& maps) {
  if (maps.rank() < 2) throw ShapeError("maps need a leading batch dimension, got " + shape_str(maps.shape()));
  return maps.size() / maps.dim(0);
}

void require_distributions(const Tensor& maps) {
  const std::size_t B = maps.dim(0), N = cells_per_map(maps);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double v = maps[b * N + i];
      if (!(v > 0.0)) throw ValueError("map " + std::to_string(b) + " has a nonpositive cell");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ValueError("map " + std::to_string(b) + " does not sum to 1");
  }
}

}  // namespace

double hnc_map_loss(const Tensor& maps) {
  require_distributions(maps);
  const std::size_t B = maps.dim(0), N = cells_per_map(maps);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += std::log(maps[b * N + i]);
    total += -s / static_cast<double>(N);
  }
  return total / static_cast<double>(B);
}

double kl_uniform(const Tensor& maps) {
  require_distributions(maps);
  const std::size_t B = maps.dim(0), N = cells_per_map(maps);
  const double u = 1.0 / static_cast<double>(N);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += u * std::log(u / maps[b * N + i]);
    total += s;
  }
  return total / static_cast<double>(B);
}

Var hnc_map_loss_logits(const Var& maps) {
  if (maps.shape().size() != 2) throw ShapeError("maps must be [B,N], got " + shape_str(maps.shape()));
  return scale(mean(log_softmax_rows(maps)), -1.0);
}

std::vector<std::vector<int>> top_negative_classes(const Tensor& logits, std::span<const int> labels, int top_m) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) throw ShapeError("one label per sample required");
  if (top_m < 1 || static_cast<std::size_t>(top_m) > C - 1) {
    throw ValueError("top_m must lie in [1, C-1], got " + std::to_string(top_m));
  }
  std::vector<std::vector<int>> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<int> neg;
    for (std::size_t c = 0; c < C; ++c) {
      if (static_cast<int>(c) != labels[b]) neg.push_back(static_cast<int>(c));
    }
    std::stable_sort(neg.begin(), neg.end(), [&](int a, int c) {
      return logits.at(b, static_cast<std::size_t>(a)) > logits.at(b, static_cast<std::size_t>(c));
    });
    neg.resize(static_cast<std::size_t>(top_m));
    std::sort(neg.begin(), neg.end());
    out[b] = std::move(neg);
  }
  return out;
}

Var hnc_approx_loss(const Var& z, const HeadFn& head, std::span<const int> labels, int top_m, double lambda) {
  if (lambda == 0.0) return Var::constant(Tensor::scalar(0.0));
  const Tensor& zv = z.value();
  const std::size_t B = zv.dim(0), K = zv.dim(1), H = zv.dim(2), W = zv.dim(3);

  Var leaf = Var::parameter(zv);
  Var logits = head(leaf);
  const std::size_t C = logits.shape()[1];
  const auto sets = top_negative_classes(logits.value(), labels, top_m);
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < B; ++b) {
    for (int c : sets[b]) idx.push_back(b * C + static_cast<std::size_t>(c));
  }
  const Var wrt[] = {leaf};
  const Tensor g = grad(sum(gather(logits, idx)), wrt).front();
  Tensor importance({B, K});
  const std::size_t HW = H * W;
  for (std::size_t bk = 0; bk < B * K; ++bk) {
    double s = 0.0;
    for (std::size_t p = 0; p < HW; ++p) s += g[bk * HW + p];
    importance[bk] = s / static_cast<double>(HW);
  }
  Var map = relu(channel_weighted_sum(z, importance));
  return scale(hnc_map_loss_logits(reshape(map, {B, HW})), lambda);
}

void KernelConfig::validate() const {
  if (gammas.empty()) throw ValueError("kernel mixture is empty");
  for (double g : gammas) {
    if (!(g > 0.0)) throw ValueError("kernel bandwidths must be positive");
  }
}

namespace {

// true when (a, b) should be swapped to reach canonical order
bool after(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return a.shape() > b.shape();
  return std::lexicographical_compare(b.data().begin(), b.data().end(), a.data().begin(), a.data().end());
}

}  // namespace

Var mmd_mixture(const Var& a_in, const Var& b_in, const KernelConfig& kc) {
  kc.validate();
  if (a_in.shape().size() != 2 || b_in.shape().size() != 2 || a_in.shape()[1] != b_in.shape()[1]) {
    throw ShapeError("mmd needs [n,d] and [m,d], got " + shape_str(a_in.shape()) + " and " + shape_str(b_in.shape()));
  }
  const bool swap = after(a_in.value(), b_in.value());
  const Var& a = swap ? b_in : a_in;
  const Var& b = swap ? a_in : b_in;
  const Var daa = pairwise_sq_dists(a, a);
  const Var dbb = pairwise_sq_dists(b, b);
  const Var dab = pairwise_sq_dists(a, b);
  std::vector<Var> terms;
  for (double g : kc.gammas) {
    terms.push_back(mean(exp(scale(daa, -g))));
    terms.push_back(mean(exp(scale(dbb, -g))));
    terms.push_back(scale(mean(exp(scale(dab, -g))), -2.0));
  }
  return scale(add_n(terms), 1.0 / static_cast<double>(kc.gammas.size()));
}

double mmd_mixture(const Tensor& a, const Tensor& b, const KernelConfig& kc) {
  return mmd_mixture(Var::constant(a), Var::constant(b), kc).value().item();
}

DomainDiscriminator::DomainDiscriminator(std::size_t inputs, std::size_t domains, const MlpConfig& cfg, Rng& rng,
                                         const std::string& prefix)
    : dropout_(cfg.dropout) {
  if (cfg.depth < 2) throw ValueError("discriminator depth must be at least 2");
  if (domains < 2) throw ValueError("discriminator needs at least two domains");
  std::size_t in = inputs;
  for (std::size_t l = 0; l + 1 < cfg.depth; ++l) {
    layers_.push_back(make_linear(in, cfg.width, rng, prefix + ".fc" + std::to_string(l)));
    in = cfg.width;
  }
  layers_.push_back(make_linear(in, domains, rng, prefix + ".fc" + std::to_string(cfg.depth - 1)));
}

DomainDiscriminator::Pass DomainDiscriminator::forward(const Var& x, Rng* rng) const {
  Pass pass;
  Var h = x;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    Var a = layers_[l](h);
    Tensor gate(a.shape());
    const Tensor drop = rng ? dropout_mask(a.shape(), dropout_, *rng) : Tensor(a.shape(), 1.0);
    for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = (a.value()[i] > 0.0 ? 1.0 : 0.0) * drop[i];
    h = mul(relu(a), Var::constant(drop));
    pass.gates.push_back(std::move(gate));
  }
  pass.logits = layers_.back()(h);
  return pass;
}

Var DomainDiscriminator::input_gradient(const Pass& pass, std::span<const int> domains) const {
  const Tensor target = one_hot(domains, this->domains());
  Var d = sub(softmax_rows(pass.logits), Var::constant(target));
  for (std::size_t l = layers_.size(); l-- > 0;) {
    d = matmul(d, layers_[l].weight);
    if (l > 0) d = mul(d, Var::constant(pass.gates[l - 1]));
  }
  return d;
}

std::vector<Var> DomainDiscriminator::parameters() const {
  std::vector<Var> out;
  for (const auto& l : layers_) {
    for (auto& p : l.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<double> class_balance_weights(std::span<const int> labels, int classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ValueError("class label out of range");
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  std::vector<double> w(labels.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 1.0 / (static_cast<double>(classes) * counts[static_cast<std::size_t>(labels[i])]);
  }
  return w;
}

CdannLosses cdann_losses(const Var& maps, std::span<const int> domains, std::span<const int> labels, int classes,
                         const DomainDiscriminator& disc, double lambda, double eta, Rng* dropout_rng) {
  if (maps.shape().size() != 2) throw ShapeError("maps must be [B,N], got " + shape_str(maps.shape()));
  const std::size_t B = maps.shape()[0];
  if (domains.size() != B || labels.size() != B) throw ShapeError("one domain and one label per map required");
  const auto pass = disc.forward(maps, dropout_rng);
  const auto w = class_balance_weights(labels, classes);
  CdannLosses out;
  out.weighted_ce = sum(mul(cross_entropy_per_sample(pass.logits, domains), Var::constant(Tensor({B}, w))));
  const Var g = disc.input_gradient(pass, domains);
  out.penalty = scale(sum(square(g)), 1.0 / static_cast<double>(B));
  out.discriminator = add(out.weighted_ce, scale(out.penalty, eta));
  out.generator = scale(out.weighted_ce, -lambda);
  return out;
}

}  // namespace xdg
