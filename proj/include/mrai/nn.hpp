#pragma once

// Small convolutional network engine: the fixed layer vocabulary needed by the
// patch networks (Conv2D, ReLU, Dropout, Flatten, Dense), exact reverse-mode
// gradients and an RMSprop optimizer. Everything runs in double precision.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mrai::nn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor. Data length always equals the product of the shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor zeros(std::vector<std::size_t> shape_);

  std::size_t size() const noexcept { return data.size(); }
  bool all_finite() const noexcept;
};

struct Shape3 {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return channels * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Layer vocabulary. Conv2D is stride 1 with valid padding.
struct Conv2D {
  std::size_t in_channels = 1;
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  friend bool operator==(const Conv2D&, const Conv2D&) = default;
};
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const Dense&, const Dense&) = default;
};
struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};
struct Dropout {
  double rate = 0.2;
  friend bool operator==(const Dropout&, const Dropout&) = default;
};
struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using LayerSpec = std::variant<Conv2D, Relu, Dropout, Flatten, Dense>;

std::string layer_name(const LayerSpec& layer);

class Architecture {
 public:
  Architecture(Shape3 input, std::vector<LayerSpec> layers);

  /// Patch trunk: Conv(8, 3x3) > ReLU > Dropout > Flatten > Dense(16) > ReLU >
  /// Dropout > Dense(8) > ReLU > Dense(out_dim), on a 15x15x1 input.
  static Architecture patch_trunk(std::size_t out_dim, double dropout = 0.2,
                                  std::size_t patch_size = 15);

  const Shape3& input() const noexcept { return input_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  /// Activation shape after each layer; shapes()[i] is the output of layer i.
  const std::vector<Shape3>& shapes() const noexcept { return shapes_; }
  std::size_t output_size() const noexcept { return shapes_.back().size(); }
  std::size_t parameter_count() const noexcept { return parameter_count_; }

  friend bool operator==(const Architecture& a, const Architecture& b) {
    return a.input_ == b.input_ && a.layers_ == b.layers_;
  }

 private:
  Shape3 input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape3> shapes_;
  std::size_t parameter_count_ = 0;
};

/// Offsets of one layer's weights and biases inside the flat parameter vector.
struct ParamSlice {
  std::size_t weight_offset = 0;
  std::size_t weight_count = 0;
  std::size_t bias_offset = 0;
  std::size_t bias_count = 0;
};

/// All weights and biases of a network, stored in one contiguous vector.
/// The generation counter changes on every mutation through mutable_values()
/// so forward caches can detect that they are stale.
class NetworkParams {
 public:
  explicit NetworkParams(Architecture arch);

  static NetworkParams zeros(const Architecture& arch);
  /// Uniform fan-in/fan-out scaled init (limit sqrt(6/(fan_in+fan_out))),
  /// zero biases.
  static NetworkParams glorot_uniform(const Architecture& arch,
                                      std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept {
    ++generation_;
    return values_;
  }
  const std::vector<ParamSlice>& slices() const noexcept { return slices_; }
  std::uint64_t generation() const noexcept { return generation_; }
  std::size_t size() const noexcept { return values_.size(); }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    return a.arch_ == b.arch_ && a.values_ == b.values_;
  }

 private:
  Architecture arch_;
  std::vector<double> values_;
  std::vector<ParamSlice> slices_;
  std::uint64_t generation_ = 0;
};

enum class Mode { train, eval };

/// Everything backward() needs from a forward pass.
struct ForwardCache {
  const NetworkParams* owner = nullptr;
  std::uint64_t generation = 0;
  // activations[0] is the input; activations[i + 1] is the output of layer i.
  std::vector<std::vector<double>> activations;
  // Scaled keep-masks for dropout layers (empty for other layers or eval mode).
  std::vector<std::vector<double>> dropout_masks;
  Mode mode = Mode::eval;
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

/// Runs the network on one input. Dropout uses inverted scaling and is active
/// only in train mode, drawing its masks from `dropout_seed`.
ForwardResult forward(const NetworkParams& params, const Tensor& input,
                      Mode mode, std::uint64_t dropout_seed = 0);

/// Same as forward() but reuses the cache buffers; returns the output span
/// (which aliases cache.activations.back()).
std::span<const double> forward_into(const NetworkParams& params,
                                     std::span<const double> input, Mode mode,
                                     std::uint64_t dropout_seed,
                                     ForwardCache& cache);

struct Gradients {
  std::vector<double> params;  // same layout as NetworkParams::values()
  std::vector<double> input;
};

Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                   std::span<const double> output_gradient);

/// Adds d(output . output_gradient)/d(params) into `param_grad`. The input
/// gradient is skipped, which saves the first layer's transposed pass.
void backward_accumulate(const NetworkParams& params, const ForwardCache& cache,
                         std::span<const double> output_gradient,
                         std::span<double> param_grad);

struct RmsHyper {
  double learning_rate = 1e-3;
  double rho = 0.9;
  double epsilon = 1e-8;
};

struct RmsState {
  RmsHyper hyper;
  std::vector<double> mean_square;

  RmsState() = default;
  RmsState(std::size_t n, RmsHyper h) : hyper(h), mean_square(n, 0.0) {}
};

/// v <- rho v + (1 - rho) g^2 ; theta <- theta - lr g / (sqrt(v) + eps).
/// Throws NumericError on a non-finite gradient (parameters left untouched).
void rmsprop_step(NetworkParams& params, std::span<const double> grads,
                  RmsState& state);

}  // namespace mrai::nn
