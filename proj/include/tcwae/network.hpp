#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "tcwae/rng.hpp"
#include "tcwae/tensor.hpp"

namespace tcwae {

enum class Activation { none, relu };
enum class NetworkKind { encoder, decoder, discriminator };

/// Spatial shape of an activation in HWC layout.
struct ImageShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct LayerSpec {
  enum class Kind { conv, deconv, dense };
  Kind kind = Kind::dense;
  /// Output channels (conv/deconv) or output width (dense).
  std::size_t units = 0;
  Activation activation = Activation::relu;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  /// Dense layers feeding a deconv reshape their output to this grid.
  std::size_t out_height = 1;
  std::size_t out_width = 1;

  static LayerSpec conv(std::size_t channels, Activation act = Activation::relu);
  static LayerSpec deconv(std::size_t channels, Activation act = Activation::relu);
  static LayerSpec dense(std::size_t width, Activation act = Activation::relu);
  /// Dense layer producing an h x w x c activation.
  static LayerSpec dense_grid(std::size_t h, std::size_t w, std::size_t c,
                              Activation act = Activation::relu);
};

struct NetworkSpec {
  NetworkKind kind = NetworkKind::encoder;
  ImageShape input;
  std::size_t latent_dim = 0;
  std::vector<LayerSpec> layers;

  /// Shape produced by each layer, validated against the kind's invariants.
  std::vector<ImageShape> layer_shapes() const;
  ImageShape output_shape() const;
  void validate() const;
};

/// Encoder / decoder / discriminator triple sharing one latent size.
struct Architecture {
  NetworkSpec encoder;
  NetworkSpec decoder;
  NetworkSpec discriminator;

  std::string name;
  ImageShape image() const { return encoder.input; }
  std::size_t latent_dim() const { return encoder.latent_dim; }

  /// Four stride-2 convolutions to 4x4, FC 256, FC 2*d; mirrored decoder;
  /// six FC-1000 discriminator layers. Requires a 64x64 input.
  static Architecture desk(std::size_t resolution, std::size_t channels,
                           std::size_t latent_dim);
  /// Same layout with few channels and 2x2 bottleneck, for gradient checks
  /// (resolution 8 or 16).
  static Architecture reduced(std::size_t resolution, std::size_t channels,
                              std::size_t latent_dim);
  static Architecture by_name(const std::string& name, std::size_t resolution,
                              std::size_t channels, std::size_t latent_dim);

  void validate() const;
};

template <typename T>
using ParamMap = std::map<std::string, Mat<T>>;

/// Parameters of all three networks.
template <typename T>
struct ModelParams {
  ParamMap<T> encoder;
  ParamMap<T> decoder;
  ParamMap<T> discriminator;
};

/// Names and shapes of every parameter tensor of a network.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> parameter_layout(
    const NetworkSpec& spec);

std::size_t parameter_count(const NetworkSpec& spec);

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
template <typename T>
ParamMap<T> init_params(const NetworkSpec& spec, Rng& rng);

template <typename T>
ModelParams<T> init_model(const Architecture& arch, Rng& rng);

template <typename T>
ParamMap<T> zeros_like(const ParamMap<T>& params);

template <typename To, typename From>
ParamMap<To> cast_params(const ParamMap<From>& params);

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& params) {
  return {cast_params<To>(params.encoder), cast_params<To>(params.decoder),
          cast_params<To>(params.discriminator)};
}

/// Activations kept by forward() for backward().
template <typename T>
struct Tape {
  Mat<T> input;
  std::vector<Mat<T>> cols;     ///< im2col buffers of conv layers
  std::vector<Mat<T>> outputs;  ///< post-activation output of each layer
};

/// Runs the network on a batch [B, input.size()]. The last layer is linear
/// in all built-in specs; its raw output is returned.
template <typename T>
Mat<T> forward(const NetworkSpec& spec, const ParamMap<T>& params, const Mat<T>& x,
               Tape<T>* tape = nullptr);

/// Backpropagates d_out through a recorded forward pass, accumulating into
/// grads (which must have the parameter keys). Returns d_input.
template <typename T>
Mat<T> backward(const NetworkSpec& spec, const ParamMap<T>& params, const Tape<T>& tape,
                const Mat<T>& d_out, ParamMap<T>& grads, bool input_grad = true);

namespace detail {

struct ConvGeometry {
  std::size_t in_h, in_w, channels, out_h, out_w, kernel, stride, padding;
  std::size_t patch() const { return kernel * kernel * channels; }
};

/// Unfolds each image of a batch [B, in_h*in_w*C] into [B*out_h*out_w, k*k*C].
template <typename T>
void im2col(const T* images, std::size_t batch, const ConvGeometry& g, T* cols);

/// Adjoint of im2col: scatters-and-adds cols into images (which is not cleared).
template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* images);

}  // namespace detail

}  // namespace tcwae
