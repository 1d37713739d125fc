#include "xdg/challenge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xdg/ops.hpp"

namespace xdg {

void ChallengeConfig::validate() const {
  if (!(feature_drop >= 0.0 && feature_drop < 1.0)) throw ValueError("feature drop p must lie in [0,1)");
  if (!(batch_drop >= 0.0 && batch_drop <= 1.0)) throw ValueError("batch drop b must lie in [0,1]");
}

std::string ChallengeConfig::variant_name() const {
  std::string s = score == BatchScore::confidence ? "B" : score == BatchScore::change ? "C" : "T";
  if (per_domain) s += "-D";
  if (schedule) s += "-S";
  return s;
}

BatchScore parse_batch_score(const std::string& s) {
  if (s == "B" || s == "confidence") return BatchScore::confidence;
  if (s == "C" || s == "change") return BatchScore::change;
  if (s == "T" || s == "random") return BatchScore::random;
  throw ValueError("unknown batch score '" + s + "' (expected B, C or T)");
}

RscMode parse_rsc_mode(const std::string& s) {
  if (s == "spatial") return RscMode::spatial;
  if (s == "channel") return RscMode::channel;
  if (s == "alternate") return RscMode::alternate;
  throw ValueError("unknown rsc mode '" + s + "' (expected spatial, channel or alternate)");
}

Tensor target_gradient(const Tensor& z, const HeadFn& head, const Tensor& onehot) {
  if (z.rank() != 4) throw ShapeError("features must be [B,K,H,W], got " + shape_str(z.shape()));
  Var leaf = Var::parameter(z);
  Var logits = head(leaf);
  if (logits.shape() != onehot.shape()) {
    throw ShapeError("onehot " + shape_str(onehot.shape()) + " does not match logits " + shape_str(logits.shape()));
  }
  Var target = sum(mul(logits, Var::constant(onehot)));
  const Var wrt[] = {leaf};
  return std::move(grad(target, wrt).front());
}

Tensor pool_gradient(const Tensor& g, PoolAxis axis) {
  if (g.rank() != 4) throw ShapeError("gradient must be [B,K,H,W], got " + shape_str(g.shape()));
  const std::size_t B = g.dim(0), K = g.dim(1), H = g.dim(2), W = g.dim(3), HW = H * W;
  if (axis == PoolAxis::spatial) {
    Tensor out({B, H, W});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < HW; ++p) out[b * HW + p] += g[(b * K + k) * HW + p];
    out *= 1.0 / static_cast<double>(K);
    return out;
  }
  Tensor out({B, K});
  for (std::size_t bk = 0; bk < B * K; ++bk) {
    double s = 0.0;
    for (std::size_t p = 0; p < HW; ++p) s += g[bk * HW + p];
    out[bk] = s / static_cast<double>(HW);
  }
  return out;
}

namespace {

// Indices sorted by descending score; equal scores keep ascending index order.
std::vector<std::size_t> descending_order(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

std::size_t rounded_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

Tensor percentile_mask(const Tensor& scores, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ValueError("percentile mask factor must lie in [0,1)");
  if (scores.rank() < 2) throw ShapeError("scores need a leading batch dimension, got " + shape_str(scores.shape()));
  const std::size_t B = scores.dim(0), N = scores.size() / B;
  const std::size_t drop = rounded_count(p, N);
  Tensor mask(scores.shape(), 1.0);
  for (std::size_t b = 0; b < B; ++b) {
    const auto row = scores.data().subspan(b * N, N);
    const auto order = descending_order(row);
    for (std::size_t i = 0; i < drop; ++i) mask[b * N + order[i]] = 0.0;
  }
  return mask;
}

std::vector<char> top_fraction(std::span<const double> scores, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValueError("batch fraction must lie in [0,1]");
  std::vector<char> keep(scores.size(), 0);
  const std::size_t k = rounded_count(fraction, scores.size());
  const auto order = descending_order(scores);
  for (std::size_t i = 0; i < k; ++i) {
    const double s = scores[order[i]];
    if (s == -std::numeric_limits<double>::infinity()) break;
    keep[order[i]] = 1;
  }
  return keep;
}

namespace {

std::vector<double> gt_probability(const Tensor& logits, const Tensor& onehot) {
  if (logits.shape() != onehot.shape()) {
    throw ShapeError("onehot " + shape_str(onehot.shape()) + " does not match logits " + shape_str(logits.shape()));
  }
  const Tensor p = softmax_rows(logits);
  std::vector<double> out(logits.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b)
    for (std::size_t c = 0; c < logits.dim(1); ++c) out[b] += p.at(b, c) * onehot.at(b, c);
  return out;
}

Tensor head_logits(const HeadFn& head, const Tensor& z) { return head(Var::constant(z)).value(); }

Tensor masked(const Tensor& z, const Tensor& mask) {
  if (!z.same_shape(mask)) throw ShapeError("mask " + shape_str(mask.shape()) + " vs features " + shape_str(z.shape()));
  Tensor out = z;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return out;
}

}  // namespace

std::vector<double> change_vector(const Tensor& z, const Tensor& mask, const HeadFn& head, const Tensor& onehot) {
  const auto before = gt_probability(head_logits(head, z), onehot);
  const auto after = gt_probability(head_logits(head, masked(z, mask)), onehot);
  std::vector<double> c(before.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = before[i] - after[i];
  return c;
}

Tensor revert_mask(const Tensor& mask, std::span<const double> scores, double b) {
  if (mask.dim(0) != scores.size()) throw ShapeError("one score per masked sample required");
  const auto keep = top_fraction(scores, b);
  Tensor out = mask;
  const std::size_t N = mask.size() / mask.dim(0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) std::fill_n(out.data().begin() + static_cast<long>(i * N), N, 1.0);
  }
  return out;
}

Tensor revert_mask_grouped(const Tensor& mask, std::span<const double> scores, double b,
                           std::span<const int> groups) {
  if (mask.dim(0) != scores.size() || groups.size() != scores.size()) {
    throw ShapeError("one score and one group per masked sample required");
  }
  std::vector<int> ids(groups.begin(), groups.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Tensor out = mask;
  const std::size_t N = mask.size() / mask.dim(0);
  for (int g : ids) {
    std::vector<std::size_t> members;
    std::vector<double> sub;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i] == g) {
        members.push_back(i);
        sub.push_back(scores[i]);
      }
    }
    const auto keep = top_fraction(sub, b);
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (!keep[j]) std::fill_n(out.data().begin() + static_cast<long>(members[j] * N), N, 1.0);
    }
  }
  return out;
}

std::vector<double> select_batch_scores(BatchScore score, const Tensor& logits, const Tensor& masked_logits,
                                        const Tensor& onehot, Rng& rng) {
  const auto conf = gt_probability(logits, onehot);
  switch (score) {
    case BatchScore::confidence:
      return conf;
    case BatchScore::change: {
      const auto after = gt_probability(masked_logits, onehot);
      std::vector<double> c(conf.size());
      for (std::size_t i = 0; i < c.size(); ++i) c[i] = conf[i] - after[i];
      return c;
    }
    case BatchScore::random: {
      const auto pred = argmax_rows(logits);
      std::vector<double> c(conf.size());
      for (std::size_t i = 0; i < c.size(); ++i) {
        const double draw = rng.uniform();
        c[i] = onehot.at(i, static_cast<std::size_t>(pred[i])) == 1.0 ? draw
                                                                      : -std::numeric_limits<double>::infinity();
      }
      return c;
    }
  }
  return conf;
}

double linear_schedule(long step, long total, double b_final) {
  if (total <= 0 || step < 0 || step > total) throw ValueError("schedule needs 0 <= step <= total and total > 0");
  return b_final * static_cast<double>(step) / static_cast<double>(total);
}

Tensor expand_mask(const Tensor& mask, const Shape& fs) {
  if (fs.size() != 4) throw ShapeError("feature shape must be [B,K,H,W]");
  const std::size_t B = fs[0], K = fs[1], H = fs[2], W = fs[3], HW = H * W;
  Tensor out(fs);
  if (mask.shape() == Shape{B, H, W}) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < HW; ++p) out[(b * K + k) * HW + p] = mask[b * HW + p];
  } else if (mask.shape() == Shape{B, K}) {
    for (std::size_t bk = 0; bk < B * K; ++bk)
      for (std::size_t p = 0; p < HW; ++p) out[bk * HW + p] = mask[bk];
  } else {
    throw ShapeError("mask " + shape_str(mask.shape()) + " cannot be expanded to " + shape_str(fs));
  }
  return out;
}

namespace {

std::size_t zeros_in(const Tensor& m) {
  return static_cast<std::size_t>(std::count(m.data().begin(), m.data().end(), 0.0));
}

std::vector<char> kept_rows(const Tensor& reverted, const Tensor& original) {
  const std::size_t B = reverted.dim(0), N = reverted.size() / B;
  std::vector<char> kept(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    bool any_zero = false;
    for (std::size_t i = 0; i < N; ++i) any_zero = any_zero || original[b * N + i] == 0.0;
    bool same = true;
    for (std::size_t i = 0; i < N && same; ++i) same = reverted[b * N + i] == original[b * N + i];
    kept[b] = any_zero && same;
  }
  return kept;
}

}  // namespace

ChallengeOutcome rsc_step(const Tensor& z, const HeadFn& head, const Tensor& onehot, const ChallengeConfig& cfg,
                          Rng& rng, const PreviousLayer* previous) {
  cfg.validate();
  ChallengeOutcome out;
  bool spatial = cfg.rsc_mode == RscMode::spatial;
  if (cfg.rsc_mode == RscMode::alternate) spatial = rng.bernoulli(0.5);
  out.mode = spatial ? "spatial" : "channel";

  Tensor pooled;
  if (spatial && previous != nullptr) {
    const auto composed = [&](const Var& h) { return head(previous->to_z(h)); };
    const Tensor g = target_gradient(previous->features, composed, onehot);
    const Tensor mean_map = pool_gradient(g, PoolAxis::spatial);
    const auto& s = mean_map.shape();
    pooled = avgpool2(Var::constant(mean_map.reshaped({s[0], 1, s[1], s[2]}))).value();
    pooled = pooled.reshaped({s[0], pooled.dim(2), pooled.dim(3)});
    if (pooled.dim(1) != z.dim(2) || pooled.dim(2) != z.dim(3)) {
      throw ShapeError("downsampled previous-layer map " + shape_str(pooled.shape()) + " does not match features " +
                       shape_str(z.shape()));
    }
  } else {
    pooled = pool_gradient(target_gradient(z, head, onehot), spatial ? PoolAxis::spatial : PoolAxis::channel);
  }

  const Tensor raw = expand_mask(percentile_mask(pooled, cfg.feature_drop), z.shape());
  const auto c = change_vector(z, raw, head, onehot);
  out.mask = revert_mask(raw, c, cfg.batch_drop);
  out.kept = kept_rows(out.mask, raw);
  out.zero_count = zeros_in(out.mask);
  return out;
}

ChallengeOutcome divcam_step(const Tensor& z, const HeadFn& head, const Tensor& onehot, const ChallengeConfig& cfg,
                             long step, long total, std::span<const int> domains, Rng& rng) {
  cfg.validate();
  ChallengeOutcome out;
  out.mode = "cam";
  const std::size_t B = z.dim(0);
  if (cfg.feature_drop == 0.0) {
    out.mask = Tensor(z.shape(), 1.0);
    out.kept.assign(B, 0);
    return out;
  }
  const Tensor weights = pool_gradient(target_gradient(z, head, onehot), PoolAxis::channel);
  Tensor cam = channel_weighted_sum(Var::constant(z), weights).value();
  for (auto& v : cam.data()) v = std::max(v, 0.0);

  const Tensor raw = expand_mask(percentile_mask(cam, cfg.feature_drop), z.shape());
  const Tensor logits = head_logits(head, z);
  Tensor masked_logits = logits;
  if (cfg.score == BatchScore::change) masked_logits = head_logits(head, masked(z, raw));
  const auto scores = select_batch_scores(cfg.score, logits, masked_logits, onehot, rng);
  const double b = cfg.schedule ? linear_schedule(step, total, cfg.batch_drop) : cfg.batch_drop;
  if (cfg.per_domain) {
    out.mask = revert_mask_grouped(raw, scores, b, domains);
  } else {
    out.mask = revert_mask(raw, scores, b);
  }
  out.kept = kept_rows(out.mask, raw);
  out.zero_count = zeros_in(out.mask);
  return out;
}

Var apply_mask(const Var& z, const Tensor& mask) { return mul(z, Var::constant(mask)); }

}  // namespace xdg
