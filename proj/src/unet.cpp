#include "cbct/unet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "cbct/error.hpp"
#include "cbct/parallel.hpp"

namespace cbct {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Feature map of c channels, each h x w, channel-major.
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  std::size_t plane() const { return h * w; }
};

// Layer indices inside unet_layers().
struct LayerIndex {
  std::size_t depth;
  std::size_t enc(std::size_t level, std::size_t i) const { return 2 * level + i; }
  std::size_t bottom(std::size_t i) const { return 2 * depth + i; }
  // i: 0 upsample conv, 1 conv over the concatenation, 2 second conv
  std::size_t dec(std::size_t level, std::size_t i) const {
    return 2 * depth + 2 + 3 * (depth - 1 - level) + i;
  }
  std::size_t out() const { return 5 * depth + 2; }
};

void im2col(const Tensor& in, std::size_t k, RowMat& cols) {
  const std::size_t pad = k / 2;
  const std::size_t hw = in.plane();
  cols.resize(Eigen::Index(in.c * k * k), Eigen::Index(hw));
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    const double* src = in.v.data() + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((ci * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < in.h; ++y) {
          const long sy = long(y) + long(ky) - long(pad);
          double* dst = row + y * in.w;
          if (sy < 0 || sy >= long(in.h)) {
            std::fill(dst, dst + in.w, 0.0);
            continue;
          }
          const double* line = src + std::size_t(sy) * in.w;
          for (std::size_t x = 0; x < in.w; ++x) {
            const long sx = long(x) + long(kx) - long(pad);
            dst[x] = (sx < 0 || sx >= long(in.w)) ? 0.0 : line[sx];
          }
        }
      }
  }
}

void col2im_add(const RowMat& cols, std::size_t k, Tensor& grad_in) {
  const std::size_t pad = k / 2;
  const std::size_t hw = grad_in.plane();
  for (std::size_t ci = 0; ci < grad_in.c; ++ci) {
    double* dst = grad_in.v.data() + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((ci * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < grad_in.h; ++y) {
          const long sy = long(y) + long(ky) - long(pad);
          if (sy < 0 || sy >= long(grad_in.h))
            continue;
          double* line = dst + std::size_t(sy) * grad_in.w;
          const double* src = row + y * grad_in.w;
          for (std::size_t x = 0; x < grad_in.w; ++x) {
            const long sx = long(x) + long(kx) - long(pad);
            if (sx >= 0 && sx < long(grad_in.w))
              line[sx] += src[x];
          }
        }
      }
  }
}

Tensor conv(const DenoiserParams& p, std::size_t layer, const Tensor& in, bool relu) {
  const ConvShape& s = p.layers[layer];
  Tensor out(s.out, in.h, in.w);
  const Eigen::Index hw = Eigen::Index(in.plane());
  CMapMat weight(p.values.data() + s.weight_offset, Eigen::Index(s.out),
                 Eigen::Index(s.in * s.kernel * s.kernel));
  MapMat result(out.v.data(), Eigen::Index(s.out), hw);
  if (s.kernel == 1) {
    result.noalias() = weight * CMapMat(in.v.data(), Eigen::Index(in.c), hw);
  } else {
    RowMat cols;
    im2col(in, s.kernel, cols);
    result.noalias() = weight * cols;
  }
  for (std::size_t o = 0; o < s.out; ++o) {
    const double b = p.values[s.bias_offset + o];
    double* row = out.v.data() + o * in.plane();
    for (Eigen::Index i = 0; i < hw; ++i) {
      const double v = row[i] + b;
      row[i] = relu ? std::max(v, 0.0) : v;
    }
  }
  return out;
}

// `grad_out` is the gradient at the layer output (after the activation).
// Accumulates parameter gradients and returns the gradient at the input.
Tensor conv_backward(const DenoiserParams& p, std::size_t layer, const Tensor& in,
                     const Tensor& out, Tensor grad_out, bool relu, std::vector<double>& grads) {
  const ConvShape& s = p.layers[layer];
  const Eigen::Index hw = Eigen::Index(in.plane());
  if (relu)
    for (std::size_t i = 0; i < grad_out.v.size(); ++i)
      if (out.v[i] <= 0.0)
        grad_out.v[i] = 0.0;
  CMapMat g(grad_out.v.data(), Eigen::Index(s.out), hw);
  const Eigen::Index fan = Eigen::Index(s.in * s.kernel * s.kernel);
  CMapMat weight(p.values.data() + s.weight_offset, Eigen::Index(s.out), fan);
  MapMat dweight(grads.data() + s.weight_offset, Eigen::Index(s.out), fan);
  // Plain loop: Eigen's vectorized sum order depends on buffer alignment.
  for (std::size_t o = 0; o < s.out; ++o) {
    const double* row = grad_out.v.data() + o * std::size_t(hw);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < hw; ++i)
      acc += row[i];
    grads[s.bias_offset + o] += acc;
  }

  Tensor grad_in(in.c, in.h, in.w);
  if (s.kernel == 1) {
    CMapMat x(in.v.data(), Eigen::Index(in.c), hw);
    dweight.noalias() += g * x.transpose();
    MapMat(grad_in.v.data(), Eigen::Index(in.c), hw).noalias() = weight.transpose() * g;
  } else {
    RowMat cols;
    im2col(in, s.kernel, cols);
    dweight.noalias() += g * cols.transpose();
    RowMat dcols = weight.transpose() * g;
    col2im_add(dcols, s.kernel, grad_in);
  }
  return grad_in;
}

Tensor max_pool(const Tensor& in, std::vector<std::uint32_t>* argmax) {
  Tensor out(in.c, in.h / 2, in.w / 2);
  if (argmax)
    argmax->assign(out.v.size(), 0);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) {
        std::size_t best = c * in.plane() + 2 * y * in.w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = c * in.plane() + (2 * y + dy) * in.w + 2 * x + dx;
            if (in.v[idx] > in.v[best])
              best = idx;
          }
        const std::size_t o = c * out.plane() + y * out.w + x;
        out.v[o] = in.v[best];
        if (argmax)
          (*argmax)[o] = std::uint32_t(best);
      }
  return out;
}

Tensor upsample(const Tensor& in) {
  Tensor out(in.c, in.h * 2, in.w * 2);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x)
        out.v[c * out.plane() + y * out.w + x] = in.v[c * in.plane() + (y / 2) * in.w + x / 2];
  return out;
}

Tensor upsample_backward(const Tensor& grad) {
  Tensor out(grad.c, grad.h / 2, grad.w / 2);
  for (std::size_t c = 0; c < grad.c; ++c)
    for (std::size_t y = 0; y < grad.h; ++y)
      for (std::size_t x = 0; x < grad.w; ++x)
        out.v[c * out.plane() + (y / 2) * out.w + x / 2] += grad.v[c * grad.plane() + y * grad.w + x];
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + std::ptrdiff_t(a.v.size()));
  return out;
}

// Intermediate values kept for the backward pass.
struct Tape {
  std::vector<Tensor> conv_in, conv_out;  // per layer
  std::vector<std::vector<std::uint32_t>> pool_argmax;
};

void check_patch(const UNetArch& arch, std::size_t size, std::size_t h, std::size_t w) {
  if (size != h * w)
    throw DimensionMismatch("patch length does not match height*width");
  const std::size_t m = std::size_t{1} << arch.depth;
  if (h == 0 || w == 0 || h % m != 0 || w % m != 0)
    throw DimensionMismatch("patch sides must be divisible by 2^depth = " + std::to_string(m));
}

Tensor run_forward(const DenoiserParams& p, std::span<const double> patch, std::size_t h,
                   std::size_t w, Tape* tape) {
  check_patch(p.arch, patch.size(), h, w);
  const LayerIndex li{p.arch.depth};
  const std::size_t d = p.arch.depth;
  if (tape) {
    tape->conv_in.assign(p.layers.size(), {});
    tape->conv_out.assign(p.layers.size(), {});
    tape->pool_argmax.assign(d, {});
  }
  auto layer = [&](std::size_t idx, const Tensor& in, bool relu) {
    Tensor out = conv(p, idx, in, relu);
    if (tape) {
      tape->conv_in[idx] = in;
      tape->conv_out[idx] = out;
    }
    return out;
  };

  Tensor x(1, h, w);
  std::copy(patch.begin(), patch.end(), x.v.begin());
  std::vector<Tensor> skips(d);
  for (std::size_t l = 0; l < d; ++l) {
    Tensor a = layer(li.enc(l, 0), x, true);
    skips[l] = layer(li.enc(l, 1), a, true);
    x = max_pool(skips[l], tape ? &tape->pool_argmax[l] : nullptr);
  }
  x = layer(li.bottom(1), layer(li.bottom(0), x, true), true);
  for (std::size_t l = d; l-- > 0;) {
    Tensor up = layer(li.dec(l, 0), upsample(x), true);
    Tensor merged = layer(li.dec(l, 1), concat(up, skips[l]), true);
    x = layer(li.dec(l, 2), merged, true);
  }
  return layer(li.out(), x, false);
}

} // namespace

std::vector<ConvShape> unet_layers(const UNetArch& arch) {
  if (arch.base_channels == 0 || arch.kernel == 0 || arch.kernel % 2 == 0)
    throw InvalidSpec("U-Net needs positive channels and an odd kernel size");
  std::vector<ConvShape> layers;
  std::size_t offset = 0;
  auto add = [&](std::size_t in, std::size_t out, std::size_t k) {
    ConvShape s{in, out, k, offset, 0};
    s.bias_offset = offset + s.weight_count();
    offset = s.bias_offset + out;
    layers.push_back(s);
  };
  const std::size_t d = arch.depth, k = arch.kernel;
  for (std::size_t l = 0; l < d; ++l) {
    add(l == 0 ? 1 : arch.channels(l - 1), arch.channels(l), k);
    add(arch.channels(l), arch.channels(l), k);
  }
  add(d == 0 ? 1 : arch.channels(d - 1), arch.channels(d), k);
  add(arch.channels(d), arch.channels(d), k);
  for (std::size_t l = d; l-- > 0;) {
    add(arch.channels(l + 1), arch.channels(l), k);
    add(2 * arch.channels(l), arch.channels(l), k);
    add(arch.channels(l), arch.channels(l), k);
  }
  add(arch.channels(0), 1, 1);
  return layers;
}

std::string unet_layer_name(const UNetArch& arch, std::size_t layer) {
  const std::size_t d = arch.depth;
  if (layer < 2 * d)
    return "enc" + std::to_string(layer / 2) + ".conv" + std::to_string(layer % 2 + 1);
  if (layer < 2 * d + 2)
    return "bottleneck.conv" + std::to_string(layer - 2 * d + 1);
  if (layer < 5 * d + 2) {
    const std::size_t r = layer - 2 * d - 2;
    static const char* names[] = {"up", "conv1", "conv2"};
    return "dec" + std::to_string(d - 1 - r / 3) + "." + names[r % 3];
  }
  return "out.conv";
}

DenoiserParams::DenoiserParams(const UNetArch& a) : arch(a), layers(unet_layers(a)) {
  const ConvShape& last = layers.back();
  values.assign(last.bias_offset + last.out, 0.0);
}

DenoiserParams init_denoiser(const UNetArch& arch, std::uint64_t seed) {
  DenoiserParams p(arch);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const ConvShape& s = p.layers[l];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(s.in * s.kernel * s.kernel)));
    for (double& w : p.weights(l))
      w = normal(rng);
  }
  return p;
}

void round_to_float32(DenoiserParams& params) {
  for (double& v : params.values)
    v = double(float(v));
  params.norm_scale = double(float(params.norm_scale));
}

std::vector<double> unet_forward(const DenoiserParams& params, std::span<const double> patch,
                                 std::size_t height, std::size_t width) {
  return run_forward(params, patch, height, width, nullptr).v;
}

namespace {

std::vector<double> backprop(const DenoiserParams& p, const Tape& tape, std::size_t height,
                             std::size_t width, std::span<const double> upstream_grad) {
  std::vector<double> grads(p.values.size(), 0.0);
  const LayerIndex li{p.arch.depth};
  const std::size_t d = p.arch.depth;

  auto back = [&](std::size_t idx, Tensor g, bool relu) {
    return conv_backward(p, idx, tape.conv_in[idx], tape.conv_out[idx], std::move(g), relu, grads);
  };

  Tensor g(1, height, width);
  std::copy(upstream_grad.begin(), upstream_grad.end(), g.v.begin());
  g = back(li.out(), std::move(g), false);
  std::vector<Tensor> skip_grads(d);
  for (std::size_t l = 0; l < d; ++l) {
    g = back(li.dec(l, 2), std::move(g), true);
    Tensor gcat = back(li.dec(l, 1), std::move(g), true);
    const std::size_t c = p.arch.channels(l);
    Tensor gup(c, gcat.h, gcat.w), gskip(c, gcat.h, gcat.w);
    std::copy(gcat.v.begin(), gcat.v.begin() + std::ptrdiff_t(gup.v.size()), gup.v.begin());
    std::copy(gcat.v.begin() + std::ptrdiff_t(gup.v.size()), gcat.v.end(), gskip.v.begin());
    skip_grads[l] = std::move(gskip);
    g = upsample_backward(back(li.dec(l, 0), std::move(gup), true));
  }
  g = back(li.bottom(1), std::move(g), true);
  g = back(li.bottom(0), std::move(g), true);
  for (std::size_t l = d; l-- > 0;) {
    Tensor gb = std::move(skip_grads[l]);
    const auto& arg = tape.pool_argmax[l];
    for (std::size_t i = 0; i < arg.size(); ++i)
      gb.v[arg[i]] += g.v[i];
    g = back(li.enc(l, 1), std::move(gb), true);
    g = back(li.enc(l, 0), std::move(g), true);
  }
  return grads;
}

} // namespace

std::vector<double> unet_backward(const DenoiserParams& p, std::span<const double> patch,
                                  std::size_t height, std::size_t width,
                                  std::span<const double> upstream_grad) {
  if (upstream_grad.size() != height * width)
    throw DimensionMismatch("upstream gradient does not match the patch shape");
  Tape tape;
  run_forward(p, patch, height, width, &tape);
  return backprop(p, tape, height, width, upstream_grad);
}

double unet_mse_gradient(const DenoiserParams& p, std::span<const double> input,
                         std::span<const double> target, std::size_t height, std::size_t width,
                         double weight, std::vector<double>& grads) {
  if (target.size() != height * width)
    throw DimensionMismatch("target does not match the patch shape");
  Tape tape;
  const Tensor pred = run_forward(p, input, height, width, &tape);
  const double loss = mse_loss(pred.v, target);
  std::vector<double> upstream(pred.v.size());
  const double c = 2.0 * weight / double(pred.v.size());
  for (std::size_t i = 0; i < upstream.size(); ++i)
    upstream[i] = c * (pred.v[i] - target[i]);
  grads = backprop(p, tape, height, width, upstream);
  return loss;
}

std::vector<double> unet_backward_batch(const DenoiserParams& params,
                                        std::span<const double> patches,
                                        std::span<const double> upstream_grads, std::size_t count,
                                        std::size_t height, std::size_t width) {
  const std::size_t n = height * width;
  if (patches.size() != count * n || upstream_grads.size() != count * n)
    throw DimensionMismatch("batch buffers do not match count*height*width");
  std::vector<std::vector<double>> per_sample(count);
  parallel_tasks(count, [&](std::size_t i) {
    per_sample[i] = unet_backward(params, patches.subspan(i * n, n), height, width,
                                  upstream_grads.subspan(i * n, n));
  });
  std::vector<double> total(params.values.size(), 0.0);
  for (const auto& g : per_sample)
    for (std::size_t j = 0; j < total.size(); ++j)
      total[j] += g[j];
  return total;
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size())
    throw DimensionMismatch("mse_loss: prediction and target differ in size");
  if (pred.empty())
    throw DimensionMismatch("mse_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / double(pred.size());
}

Volume3D apply_denoiser_volume(const DenoiserParams& params, const Volume3D& vol) {
  const Dims3 dims = vol.dims();
  const std::size_t m = std::size_t{1} << params.arch.depth;
  const std::size_t ph = (dims.ny + m - 1) / m * m, pw = (dims.nx + m - 1) / m * m;
  const double scale = params.norm_scale;
  if (!(scale > 0.0))
    throw InvalidSpec("denoiser normalization scale must be positive");
  Volume3D out(dims, vol.voxel_size());
  const std::size_t slice = dims.nx * dims.ny;
  parallel_for(dims.nz, [&](std::size_t k0, std::size_t k1) {
    std::vector<double> padded(ph * pw);
    for (std::size_t k = k0; k < k1; ++k) {
      std::fill(padded.begin(), padded.end(), 0.0);
      const double* src = vol.data().data() + k * slice;
      for (std::size_t y = 0; y < dims.ny; ++y)
        for (std::size_t x = 0; x < dims.nx; ++x)
          padded[y * pw + x] = src[y * dims.nx + x] / scale;
      const auto res = unet_forward(params, padded, ph, pw);
      double* dst = out.data().data() + k * slice;
      for (std::size_t y = 0; y < dims.ny; ++y)
        for (std::size_t x = 0; x < dims.nx; ++x)
          dst[y * dims.nx + x] = res[y * pw + x] * scale;
    }
  });
  return out;
}

void write_denoiser(const std::string& path, const DenoiserParams& params) {
  nlohmann::json header;
  header["format"] = "cbct-denoiser";
  header["version"] = kDenoiserFormatVersion;
  header["depth"] = params.arch.depth;
  header["base_channels"] = params.arch.base_channels;
  header["kernel"] = params.arch.kernel;
  header["norm_scale"] = params.norm_scale;
  header["dtype"] = "float32-le";
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const ConvShape& s = params.layers[l];
    const std::string name = unet_layer_name(params.arch, l);
    tensors.push_back({{"name", name + ".weight"}, {"shape", {s.out, s.in, s.kernel, s.kernel}}});
    tensors.push_back({{"name", name + ".bias"}, {"shape", {s.out}}});
  }
  header["tensors"] = tensors;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path);
  out << header.dump() << '\n';
  for (double v : params.values) {
    float f = float(v);
    unsigned char b[4];
    std::memcpy(b, &f, 4);
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(b, b + 4);
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out)
    throw IoError("write failed for " + path);
}

DenoiserParams read_denoiser(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(path + ": missing denoiser header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad denoiser header: " + e.what());
  }
  if (header.value("format", std::string()) != "cbct-denoiser")
    throw FormatError(path + ": not a denoiser file");
  if (header.value("version", -1) != kDenoiserFormatVersion)
    throw FormatError(path + ": unsupported denoiser version");
  UNetArch arch;
  try {
    arch.depth = header.at("depth").get<std::size_t>();
    arch.base_channels = header.at("base_channels").get<std::size_t>();
    arch.kernel = header.at("kernel").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  DenoiserParams p(arch);
  p.norm_scale = header.value("norm_scale", 1.0);
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t need = p.values.size() * 4;
  if (payload.size() < need)
    throw TruncationError(need, payload.size());
  if (payload.size() > need)
    throw FormatError(path + ": trailing bytes after denoiser payload");
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    unsigned char b[4];
    std::memcpy(b, payload.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(b, b + 4);
    float f;
    std::memcpy(&f, b, 4);
    p.values[i] = double(f);
  }
  return p;
}

} // namespace cbct
