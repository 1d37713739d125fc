#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xdg/autodiff.hpp"
#include "xdg/nn.hpp"

namespace xdg {

/// Maps features z[B,K,H,W] to logits[B,C]. Must treat samples independently.
using HeadFn = std::function<Var(const Var& z)>;

/// Gradient of sum_b logits[b, classes[b]] with respect to z. Only the head is
/// differentiated, on a detached copy of z, so no stored gradient is touched.
Tensor logit_gradient(const Tensor& z, const HeadFn& head, std::span<const int> classes);

/// sum_k z[b,k] * fc_weights[c,k], unrectified. Returns [B,H,W].
Tensor classic_cam(const Tensor& z, const Tensor& fc_weights, int c);

/// Spatial mean of the logit gradient per channel: [B,K].
Tensor grad_cam_importance(const Tensor& z, const HeadFn& head, std::span<const int> classes);
/// relu(sum_k importance[b,k] * z[b,k]) for the given class of every sample. [B,H,W].
Tensor grad_cam(const Tensor& z, const HeadFn& head, std::span<const int> classes);
/// Same class for every sample, starting from images.
Tensor grad_cam(const Featurizer& featurizer, const HeadFn& head, const Tensor& x, int c);

/// Corner-aligned bilinear resize of maps [B,h,w] to [B,H,W].
Tensor upsample_bilinear(const Tensor& maps, std::size_t H, std::size_t W);

/// Heat ramp blue -> cyan -> green -> yellow -> red over t in [0,1].
std::array<double, 3> heat_ramp(double t);

/// Binary P6 image: every pixel is 0.5 * gray(base) + 0.5 * ramp(map / max(map)).
/// Nonpositive map values sit at the ramp origin. `map` and `base` are [H,W] in the
/// same spatial size; base values are clamped to [0,1].
std::string heatmap_ppm(const Tensor& map, const Tensor& base);
/// Binary P5 image of `values` [H,W] rescaled linearly from [min,max] to [0,255].
std::string grayscale_pgm(const Tensor& values);

void write_bytes(const std::filesystem::path& path, const std::string& bytes);
void export_heatmap(const Tensor& map, const Tensor& base, const std::filesystem::path& path);

}  // namespace xdg
