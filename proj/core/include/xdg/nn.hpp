#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "xdg/autodiff.hpp"
#include "xdg/random.hpp"

namespace xdg {

/// Normal init with std sqrt(2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);

struct Conv2d {
  Var weight;  // [K, C, kh, kw]
  Var bias;    // [K], may be undefined
  std::size_t stride = 1;
  std::size_t pad = 0;

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;
};

struct Linear {
  Var weight;  // [out, in]
  Var bias;    // [out], may be undefined

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;
  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }
};

Conv2d make_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad, Rng& rng,
                 const std::string& name, bool bias = true);
Linear make_linear(std::size_t in, std::size_t out, Rng& rng, const std::string& name, bool bias = true);

struct FeaturizerConfig {
  std::size_t in_channels = 1;
  std::size_t width = 64;
  std::size_t blocks = 3;
};

/// Stack of (conv3x3 -> relu -> maxpool2) blocks producing z.
class Featurizer {
 public:
  Featurizer() = default;
  Featurizer(const FeaturizerConfig& cfg, Rng& rng, const std::string& prefix = "featurizer");

  Var operator()(const Var& x) const;
  /// Output after every block; the last entry is z.
  std::vector<Var> forward_blocks(const Var& x) const;
  Var block(std::size_t i, const Var& x) const;

  std::size_t blocks() const { return convs_.size(); }
  std::size_t out_channels() const { return cfg_.width; }
  /// Spatial size of z for an input of side `side`.
  std::size_t output_side(std::size_t side) const;
  std::vector<Var> parameters() const;

 private:
  FeaturizerConfig cfg_;
  std::vector<Conv2d> convs_;
};

/// Inverted dropout mask: entries are 0 or 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);

/// Concatenation of parameter lists.
std::vector<Var> join(std::initializer_list<std::vector<Var>> lists);

}  // namespace xdg
