#include "mrai/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "mrai/rng.hpp"

namespace mrai::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string shape_string(const Shape3& s) {
  std::ostringstream os;
  os << s.channels << "x" << s.height << "x" << s.width;
  return os.str();
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  const std::size_t expected = std::accumulate(
      shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (expected != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape product " +
                     std::to_string(expected));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) {
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(),
                                        std::size_t{1}, std::multiplies<>());
  return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string layer_name(const LayerSpec& layer) {
  return std::visit(
      overloaded{
          [](const Conv2D& c) {
            return "Conv2D(" + std::to_string(c.out_channels) + ", " +
                   std::to_string(c.kernel) + "x" + std::to_string(c.kernel) +
                   ")";
          },
          [](const Relu&) { return std::string("ReLU"); },
          [](const Dropout& d) {
            std::ostringstream os;
            os << "Dropout(" << d.rate << ")";
            return os.str();
          },
          [](const Flatten&) { return std::string("Flatten"); },
          [](const Dense& d) {
            return "Dense(" + std::to_string(d.in) + "->" +
                   std::to_string(d.out) + ")";
          },
      },
      layer);
}

Architecture::Architecture(Shape3 input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input_.size() == 0) throw ShapeError("empty network input shape");
  if (layers_.empty()) throw ShapeError("network has no layers");
  Shape3 cur = input_;
  for (const auto& layer : layers_) {
    std::visit(
        overloaded{
            [&](const Conv2D& c) {
              if (c.in_channels != cur.channels || c.kernel == 0 ||
                  c.kernel > cur.height || c.kernel > cur.width ||
                  c.out_channels == 0) {
                throw ShapeError("Conv2D does not fit input " +
                                 shape_string(cur));
              }
              parameter_count_ += c.out_channels * c.in_channels * c.kernel *
                                      c.kernel +
                                  c.out_channels;
              cur = {c.out_channels, cur.height - c.kernel + 1,
                     cur.width - c.kernel + 1};
            },
            [&](const Relu&) {},
            [&](const Dropout& d) {
              if (!(d.rate >= 0.0 && d.rate < 1.0)) {
                throw ShapeError("dropout rate must lie in [0, 1)");
              }
            },
            [&](const Flatten&) { cur = {1, 1, cur.size()}; },
            [&](const Dense& d) {
              if (cur.channels != 1 || cur.height != 1 || d.in != cur.width ||
                  d.out == 0) {
                throw ShapeError("Dense(" + std::to_string(d.in) +
                                 ") expects a flat input, got " +
                                 shape_string(cur));
              }
              parameter_count_ += d.in * d.out + d.out;
              cur = {1, 1, d.out};
            },
        },
        layer);
    shapes_.push_back(cur);
  }
}

Architecture Architecture::patch_trunk(std::size_t out_dim, double dropout,
                                       std::size_t patch_size) {
  if (patch_size < 3) throw ShapeError("patch too small for a 3x3 kernel");
  const std::size_t conv_side = patch_size - 2;
  const std::size_t flat = 8 * conv_side * conv_side;
  return Architecture({1, patch_size, patch_size},
                      {Conv2D{1, 8, 3}, Relu{}, Dropout{dropout}, Flatten{},
                       Dense{flat, 16}, Relu{}, Dropout{dropout},
                       Dense{16, 8}, Relu{}, Dense{8, out_dim}});
}

NetworkParams::NetworkParams(Architecture arch) : arch_(std::move(arch)) {
  std::size_t offset = 0;
  for (const auto& layer : arch_.layers()) {
    ParamSlice s;
    std::visit(overloaded{
                   [&](const Conv2D& c) {
                     s.weight_count =
                         c.out_channels * c.in_channels * c.kernel * c.kernel;
                     s.bias_count = c.out_channels;
                   },
                   [&](const Dense& d) {
                     s.weight_count = d.in * d.out;
                     s.bias_count = d.out;
                   },
                   [](const auto&) {},
               },
               layer);
    s.weight_offset = offset;
    s.bias_offset = offset + s.weight_count;
    offset += s.weight_count + s.bias_count;
    slices_.push_back(s);
  }
  values_.assign(offset, 0.0);
}

NetworkParams NetworkParams::zeros(const Architecture& arch) {
  return NetworkParams(arch);
}

NetworkParams NetworkParams::glorot_uniform(const Architecture& arch,
                                            std::uint64_t seed) {
  NetworkParams p(arch);
  Rng rng(seed);
  for (std::size_t i = 0; i < arch.layers().size(); ++i) {
    double fan_in = 0.0;
    double fan_out = 0.0;
    std::visit(overloaded{
                   [&](const Conv2D& c) {
                     fan_in = double(c.in_channels * c.kernel * c.kernel);
                     fan_out = double(c.out_channels * c.kernel * c.kernel);
                   },
                   [&](const Dense& d) {
                     fan_in = double(d.in);
                     fan_out = double(d.out);
                   },
                   [](const auto&) {},
               },
               arch.layers()[i]);
    const ParamSlice& s = p.slices_[i];
    if (s.weight_count == 0) continue;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < s.weight_count; ++k) {
      p.values_[s.weight_offset + k] = dist(rng);
    }
  }
  return p;
}

namespace {

void conv_forward(const Conv2D& c, const Shape3& in_shape,
                  std::span<const double> w, std::span<const double> b,
                  std::span<const double> in, std::span<double> out) {
  const std::size_t k = c.kernel;
  const std::size_t oh = in_shape.height - k + 1;
  const std::size_t ow = in_shape.width - k + 1;
  const std::size_t ih = in_shape.height;
  const std::size_t iw = in_shape.width;
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    double* dst = out.data() + o * oh * ow;
    std::fill(dst, dst + oh * ow, b[o]);
    for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
      const double* src = in.data() + ch * ih * iw;
      const double* wk = w.data() + (o * c.in_channels + ch) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          for (std::size_t y = 0; y < oh; ++y) {
            const double* row = src + (y + ky) * iw + kx;
            double* drow = dst + y * ow;
            for (std::size_t x = 0; x < ow; ++x) drow[x] += wv * row[x];
          }
        }
      }
    }
  }
}

void conv_backward(const Conv2D& c, const Shape3& in_shape,
                   std::span<const double> w, std::span<const double> in,
                   std::span<const double> grad_out, std::span<double> grad_w,
                   std::span<double> grad_b, std::span<double> grad_in) {
  const std::size_t k = c.kernel;
  const std::size_t oh = in_shape.height - k + 1;
  const std::size_t ow = in_shape.width - k + 1;
  const std::size_t ih = in_shape.height;
  const std::size_t iw = in_shape.width;
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    const double* g = grad_out.data() + o * oh * ow;
    double bsum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += g[i];
    grad_b[o] += bsum;
    for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
      const double* src = in.data() + ch * ih * iw;
      const std::size_t wbase = (o * c.in_channels + ch) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const double* row = src + (y + ky) * iw + kx;
            const double* grow = g + y * ow;
            for (std::size_t x = 0; x < ow; ++x) acc += grow[x] * row[x];
          }
          grad_w[wbase + ky * k + kx] += acc;
          if (!grad_in.empty()) {
            const double wv = w[wbase + ky * k + kx];
            double* dst = grad_in.data() + ch * ih * iw;
            for (std::size_t y = 0; y < oh; ++y) {
              double* drow = dst + (y + ky) * iw + kx;
              const double* grow = g + y * ow;
              for (std::size_t x = 0; x < ow; ++x) drow[x] += wv * grow[x];
            }
          }
        }
      }
    }
  }
}

void dense_forward(const Dense& d, std::span<const double> w,
                   std::span<const double> b, std::span<const double> in,
                   std::span<double> out) {
  for (std::size_t j = 0; j < d.out; ++j) {
    const double* row = w.data() + j * d.in;
    double acc = b[j];
    for (std::size_t i = 0; i < d.in; ++i) acc += row[i] * in[i];
    out[j] = acc;
  }
}

void dense_backward(const Dense& d, std::span<const double> w,
                    std::span<const double> in, std::span<const double> g,
                    std::span<double> grad_w, std::span<double> grad_b,
                    std::span<double> grad_in) {
  for (std::size_t j = 0; j < d.out; ++j) {
    const double gj = g[j];
    grad_b[j] += gj;
    if (gj == 0.0) continue;
    double* gw = grad_w.data() + j * d.in;
    for (std::size_t i = 0; i < d.in; ++i) gw[i] += gj * in[i];
    if (!grad_in.empty()) {
      const double* row = w.data() + j * d.in;
      for (std::size_t i = 0; i < d.in; ++i) grad_in[i] += gj * row[i];
    }
  }
}

void check_cache(const NetworkParams& params, const ForwardCache& cache) {
  if (cache.owner != &params || cache.generation != params.generation()) {
    throw std::logic_error(
        "forward cache is stale or belongs to a different parameter set");
  }
  if (cache.activations.size() != params.architecture().layers().size() + 1) {
    throw std::logic_error("forward cache has the wrong number of layers");
  }
}

// Shared reverse pass. When grad_input is empty, the gradient with respect to
// the network input is not produced.
void reverse_pass(const NetworkParams& params, const ForwardCache& cache,
                  std::span<const double> output_gradient,
                  std::span<double> param_grad, std::vector<double>* grad_input) {
  check_cache(params, cache);
  const Architecture& arch = params.architecture();
  if (output_gradient.size() != arch.output_size()) {
    throw ShapeError("output gradient has length " +
                     std::to_string(output_gradient.size()) + ", expected " +
                     std::to_string(arch.output_size()));
  }
  if (param_grad.size() != params.size()) {
    throw ShapeError("parameter gradient buffer has the wrong length");
  }
  const auto values = params.values();
  std::vector<double> grad(output_gradient.begin(), output_gradient.end());
  std::vector<double> next;
  const auto& layers = arch.layers();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& in = cache.activations[li];
    const auto& out = cache.activations[li + 1];
    const Shape3 in_shape = li == 0 ? arch.input() : arch.shapes()[li - 1];
    const ParamSlice& s = params.slices()[li];
    const bool want_input = li > 0 || grad_input != nullptr;
    std::visit(
        overloaded{
            [&](const Conv2D& c) {
              next.assign(want_input ? in.size() : 0, 0.0);
              conv_backward(c, in_shape, values.subspan(s.weight_offset, s.weight_count),
                            in, grad,
                            param_grad.subspan(s.weight_offset, s.weight_count),
                            param_grad.subspan(s.bias_offset, s.bias_count),
                            next);
              grad.swap(next);
            },
            [&](const Dense& d) {
              next.assign(want_input ? in.size() : 0, 0.0);
              dense_backward(d, values.subspan(s.weight_offset, s.weight_count),
                             in, grad,
                             param_grad.subspan(s.weight_offset, s.weight_count),
                             param_grad.subspan(s.bias_offset, s.bias_count),
                             next);
              grad.swap(next);
            },
            [&](const Relu&) {
              // Subgradient at exactly zero is taken as 0.
              for (std::size_t i = 0; i < grad.size(); ++i) {
                if (!(in[i] > 0.0)) grad[i] = 0.0;
              }
              (void)out;
            },
            [&](const Dropout&) {
              const auto& mask = cache.dropout_masks[li];
              if (!mask.empty()) {
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
              }
            },
            [](const Flatten&) {},
        },
        layers[li]);
  }
  if (grad_input != nullptr) *grad_input = std::move(grad);
}

}  // namespace

std::span<const double> forward_into(const NetworkParams& params,
                                     std::span<const double> input, Mode mode,
                                     std::uint64_t dropout_seed,
                                     ForwardCache& cache) {
  const Architecture& arch = params.architecture();
  if (input.size() != arch.input().size()) {
    throw ShapeError("network input has " + std::to_string(input.size()) +
                     " values, expected " +
                     std::to_string(arch.input().size()) + " (" +
                     shape_string(arch.input()) + ")");
  }
  const auto& layers = arch.layers();
  cache.owner = &params;
  cache.generation = params.generation();
  cache.mode = mode;
  cache.activations.resize(layers.size() + 1);
  cache.dropout_masks.resize(layers.size());
  cache.activations[0].assign(input.begin(), input.end());

  const auto values = params.values();
  bool rng_ready = false;
  Rng rng;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& in = cache.activations[li];
    auto& out = cache.activations[li + 1];
    const Shape3 in_shape = li == 0 ? arch.input() : arch.shapes()[li - 1];
    out.resize(arch.shapes()[li].size());
    const ParamSlice& s = params.slices()[li];
    std::visit(
        overloaded{
            [&](const Conv2D& c) {
              conv_forward(c, in_shape,
                           values.subspan(s.weight_offset, s.weight_count),
                           values.subspan(s.bias_offset, s.bias_count), in, out);
            },
            [&](const Dense& d) {
              dense_forward(d, values.subspan(s.weight_offset, s.weight_count),
                            values.subspan(s.bias_offset, s.bias_count), in,
                            out);
            },
            [&](const Relu&) {
              for (std::size_t i = 0; i < in.size(); ++i) {
                out[i] = in[i] > 0.0 ? in[i] : 0.0;
              }
            },
            [&](const Dropout& d) {
              auto& mask = cache.dropout_masks[li];
              if (mode == Mode::eval || d.rate == 0.0) {
                mask.clear();
                std::copy(in.begin(), in.end(), out.begin());
                return;
              }
              if (!rng_ready) {
                rng.seed(dropout_seed);
                rng_ready = true;
              }
              const double keep_scale = 1.0 / (1.0 - d.rate);
              std::bernoulli_distribution keep(1.0 - d.rate);
              mask.resize(in.size());
              for (std::size_t i = 0; i < in.size(); ++i) {
                mask[i] = keep(rng) ? keep_scale : 0.0;
                out[i] = in[i] * mask[i];
              }
            },
            [&](const Flatten&) { std::copy(in.begin(), in.end(), out.begin()); },
        },
        layers[li]);
  }
  return cache.activations.back();
}

ForwardResult forward(const NetworkParams& params, const Tensor& input,
                      Mode mode, std::uint64_t dropout_seed) {
  const Shape3& expect = params.architecture().input();
  const bool shape_ok =
      (input.shape == std::vector<std::size_t>{expect.height, expect.width,
                                               expect.channels}) ||
      (input.shape == std::vector<std::size_t>{expect.channels, expect.height,
                                               expect.width}) ||
      (expect.channels == 1 &&
       input.shape == std::vector<std::size_t>{expect.height, expect.width});
  if (!shape_ok) {
    std::ostringstream os;
    os << "input tensor shape [";
    for (std::size_t i = 0; i < input.shape.size(); ++i) {
      os << (i ? "," : "") << input.shape[i];
    }
    os << "] does not match network input " << shape_string(expect);
    throw ShapeError(os.str());
  }
  ForwardResult r;
  auto out = forward_into(params, input.data, mode, dropout_seed, r.cache);
  r.output = Tensor({out.size()}, std::vector<double>(out.begin(), out.end()));
  return r;
}

Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                   std::span<const double> output_gradient) {
  Gradients g;
  g.params.assign(params.size(), 0.0);
  reverse_pass(params, cache, output_gradient, g.params, &g.input);
  return g;
}

void backward_accumulate(const NetworkParams& params, const ForwardCache& cache,
                         std::span<const double> output_gradient,
                         std::span<double> param_grad) {
  reverse_pass(params, cache, output_gradient, param_grad, nullptr);
}

void rmsprop_step(NetworkParams& params, std::span<const double> grads,
                  RmsState& state) {
  if (grads.size() != params.size()) {
    throw ShapeError("gradient length " + std::to_string(grads.size()) +
                     " does not match parameter count " +
                     std::to_string(params.size()));
  }
  if (state.mean_square.size() != params.size()) {
    throw ShapeError("RMSprop state does not match parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("non-finite gradient at parameter " +
                         std::to_string(i));
    }
  }
  const RmsHyper& h = state.hyper;
  auto theta = params.mutable_values();
  auto& v = state.mean_square;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    v[i] = h.rho * v[i] + (1.0 - h.rho) * grads[i] * grads[i];
    theta[i] -= h.learning_rate * grads[i] / (std::sqrt(v[i]) + h.epsilon);
  }
}

}  // namespace mrai::nn
