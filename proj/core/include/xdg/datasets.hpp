#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xdg/checkpoint.hpp"
#include "xdg/tensor.hpp"

namespace xdg {

struct Environment {
  int domain_id = 0;
  std::string name;
  Tensor images;            // [n, C, H, W]
  std::vector<int> labels;  // [n]

  std::size_t size() const { return labels.size(); }
};

struct MultiDomainDataset {
  std::vector<Environment> envs;
  int classes = 0;

  /// Throws ValueError when labels, domain ids or image shapes are inconsistent.
  void validate() const;
  /// [C, H, W] shared by every environment.
  Shape image_shape() const;
};

/// Grayscale digit images with their digit class (0..9).
struct DigitSource {
  Tensor images;  // [n, 1, H, W]
  std::vector<int> digits;

  std::size_t size() const { return digits.size(); }
};

/// Reads train-images-idx3-ubyte / train-labels-idx1-ubyte from `dir`.
DigitSource load_mnist(const std::filesystem::path& dir);
bool mnist_available(const std::filesystem::path& dir);
/// Procedurally drawn stroke digits with random affine jitter and stroke width.
DigitSource render_digits(std::size_t n, std::uint64_t seed, std::size_t side = 28);

/// Colored MNIST. Environment i takes source samples i, i+E, i+2E, ... where E is the
/// number of environments, so environments never share a digit image.
MultiDomainDataset gen_colored_mnist(const DigitSource& source, std::span<const double> domain_probs,
                                     double label_noise, std::uint64_t seed);

/// Rotated MNIST with the same interleaved partition as gen_colored_mnist.
MultiDomainDataset gen_rotated_mnist(const DigitSource& source, std::span<const double> angles_deg);

/// Rotates every channel of a [C,H,W] image about its center. Positive angles turn the
/// picture counterclockwise as displayed. Bilinear sampling, zero outside the source.
Tensor rotate_image(const Tensor& image, double angle_deg);

struct GlyphSpec {
  int classes = 4;
  std::size_t per_class = 50;  // per class and domain
  int domains = 3;
  std::size_t channels = 1;
  std::size_t side = 32;
};

/// Procedural multi-domain shapes: class geometry is shared by all domains, while stroke
/// width, background level and (for two channels) channel balance vary per domain.
MultiDomainDataset gen_synth_glyphs(const GlyphSpec& spec, std::uint64_t seed);

struct SplitSpec {
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Per-environment train/validation indices, each list sorted ascending.
struct SplitIndices {
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> val;
};

SplitIndices split_indices(const MultiDomainDataset& ds, const SplitSpec& spec);
MultiDomainDataset subset(const MultiDomainDataset& ds, const std::vector<std::vector<std::size_t>>& rows);
std::pair<MultiDomainDataset, MultiDomainDataset> split_domains(const MultiDomainDataset& ds, const SplitSpec& spec);

NamedArrays encode_dataset(const MultiDomainDataset& ds);
MultiDomainDataset decode_dataset(const NamedArrays& arrays);

/// Per-environment, per-class sample counts ([env][class]).
std::vector<std::vector<std::size_t>> class_counts(const MultiDomainDataset& ds);

}  // namespace xdg
