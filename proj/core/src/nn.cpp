#include "xdg/nn.hpp"

#include <cmath>

#include "xdg/ops.hpp"

namespace xdg {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = sd * rng.normal();
  return t;
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }

std::vector<Var> Conv2d::parameters() const {
  std::vector<Var> out{weight};
  if (bias.defined()) out.push_back(bias);
  return out;
}

Var Linear::operator()(const Var& x) const { return linear(x, weight, bias); }

std::vector<Var> Linear::parameters() const {
  std::vector<Var> out{weight};
  if (bias.defined()) out.push_back(bias);
  return out;
}

Conv2d make_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad, Rng& rng,
                 const std::string& name, bool bias) {
  Conv2d c;
  c.weight = Var::parameter(he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng), name + ".weight");
  if (bias) c.bias = Var::parameter(Tensor({out}, 0.0), name + ".bias");
  c.pad = pad;
  return c;
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, const std::string& name, bool bias) {
  Linear l;
  l.weight = Var::parameter(he_normal({out, in}, in, rng), name + ".weight");
  if (bias) l.bias = Var::parameter(Tensor({out}, 0.0), name + ".bias");
  return l;
}

Featurizer::Featurizer(const FeaturizerConfig& cfg, Rng& rng, const std::string& prefix) : cfg_(cfg) {
  if (cfg.blocks == 0 || cfg.width == 0 || cfg.in_channels == 0) {
    throw ValueError("featurizer needs at least one block, one channel and one input channel");
  }
  std::size_t in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    convs_.push_back(make_conv(in, cfg.width, 3, 1, rng, prefix + ".conv" + std::to_string(i)));
    in = cfg.width;
  }
}

Var Featurizer::block(std::size_t i, const Var& x) const { return maxpool2(relu(convs_.at(i)(x))); }

std::vector<Var> Featurizer::forward_blocks(const Var& x) const {
  std::vector<Var> outs;
  Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = block(i, h);
    outs.push_back(h);
  }
  return outs;
}

Var Featurizer::operator()(const Var& x) const { return forward_blocks(x).back(); }

std::size_t Featurizer::output_side(std::size_t side) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) side /= 2;
  return side;
}

std::vector<Var> Featurizer::parameters() const {
  std::vector<Var> out;
  for (const auto& c : convs_) {
    for (auto& p : c.parameters()) out.push_back(p);
  }
  return out;
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout rate must lie in [0,1)");
  Tensor m(shape, 1.0);
  if (rate == 0.0) return m;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : m.data()) v = rng.bernoulli(rate) ? 0.0 : keep;
  return m;
}

std::vector<Var> join(std::initializer_list<std::vector<Var>> lists) {
  std::vector<Var> out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace xdg
