#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cbct/volume.hpp"

namespace cbct {

// U-Net layout. Level l has c_l = base_channels * 2^l channels.
//   encoder l = 0..depth-1 : [conv k x k, ReLU] x 2, then 2x2 max-pool
//   bottleneck            : [conv k x k, ReLU] x 2 at level depth
//   decoder l = depth-1..0: 2x nearest upsample, conv k x k + ReLU to c_l,
//                           concat with the encoder output of level l,
//                           [conv k x k, ReLU] x 2
//   output                : 1 x 1 conv to one channel, no activation
// All k x k convolutions are cross-correlations with zero "same" padding.
struct UNetArch {
  std::size_t depth = 2;
  std::size_t base_channels = 16;
  std::size_t kernel = 3;

  std::size_t channels(std::size_t level) const { return base_channels << level; }
  bool operator==(const UNetArch&) const = default;
};

struct ConvShape {
  std::size_t in = 0, out = 0, kernel = 0;
  std::size_t weight_offset = 0;  // weights laid out [out][in][ky][kx]
  std::size_t bias_offset = 0;
  std::size_t weight_count() const { return out * in * kernel * kernel; }
  bool operator==(const ConvShape&) const = default;
};

// Conv layers in declaration order (encoder, bottleneck, decoder, output).
std::vector<ConvShape> unet_layers(const UNetArch& arch);
std::string unet_layer_name(const UNetArch& arch, std::size_t layer);

// Weights theta of one stage denoiser: every tensor packed into one flat
// vector in declaration order (weight then bias per layer), plus the input
// scale the denoiser was trained with.
struct DenoiserParams {
  UNetArch arch;
  std::vector<ConvShape> layers;
  std::vector<double> values;
  double norm_scale = 1.0;

  DenoiserParams() = default;
  explicit DenoiserParams(const UNetArch& arch);  // all zeros

  std::span<double> weights(std::size_t layer) {
    return std::span(values).subspan(layers[layer].weight_offset, layers[layer].weight_count());
  }
  std::span<double> bias(std::size_t layer) {
    return std::span(values).subspan(layers[layer].bias_offset, layers[layer].out);
  }
  bool operator==(const DenoiserParams&) const = default;
};

// He-normal kernels (std sqrt(2 / fan_in)), zero biases.
DenoiserParams init_denoiser(const UNetArch& arch, std::uint64_t seed);

// Rounds every parameter to float32, matching what the file format stores.
void round_to_float32(DenoiserParams& params);

// Runs the network on one height x width patch (row-major). Both sides
// must be divisible by 2^depth.
std::vector<double> unet_forward(const DenoiserParams& params, std::span<const double> patch,
                                 std::size_t height, std::size_t width);

// Gradient of <upstream_grad, unet_forward(patch)> with respect to every
// parameter, laid out like DenoiserParams::values.
std::vector<double> unet_backward(const DenoiserParams& params, std::span<const double> patch,
                                  std::size_t height, std::size_t width,
                                  std::span<const double> upstream_grad);

// Returns mse_loss(unet_forward(input), target) and stores
// weight * d(loss)/d(params) in `grads`, sharing one forward pass.
double unet_mse_gradient(const DenoiserParams& params, std::span<const double> input,
                         std::span<const double> target, std::size_t height, std::size_t width,
                         double weight, std::vector<double>& grads);

// Sum of per-sample gradients over `count` patches stored back to back.
// Samples run in parallel; the reduction is in sample order.
std::vector<double> unet_backward_batch(const DenoiserParams& params,
                                        std::span<const double> patches,
                                        std::span<const double> upstream_grads, std::size_t count,
                                        std::size_t height, std::size_t width);

// Mean over all elements of the squared difference.
double mse_loss(std::span<const double> pred, std::span<const double> target);

// Applies the denoiser slice by slice (axial, fixed z): divides by
// params.norm_scale, zero-pads each slice up to a multiple of 2^depth, runs
// the network, crops, and multiplies back.
Volume3D apply_denoiser_volume(const DenoiserParams& params, const Volume3D& vol);

// Header line (UTF-8 JSON descriptor with version, architecture,
// normalization scale and tensor shapes) followed by the float32
// little-endian payload in declaration order.
inline constexpr int kDenoiserFormatVersion = 1;
void write_denoiser(const std::string& path, const DenoiserParams& params);
DenoiserParams read_denoiser(const std::string& path);

} // namespace cbct
