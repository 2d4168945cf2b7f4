#include "tcwae/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tcwae {

LayerSpec LayerSpec::conv(std::size_t channels, Activation act) {
  return {Kind::conv, channels, act};
}

LayerSpec LayerSpec::deconv(std::size_t channels, Activation act) {
  return {Kind::deconv, channels, act};
}

LayerSpec LayerSpec::dense(std::size_t width, Activation act) {
  return {Kind::dense, width, act};
}

LayerSpec LayerSpec::dense_grid(std::size_t h, std::size_t w, std::size_t c, Activation act) {
  LayerSpec l{Kind::dense, h * w * c, act};
  l.out_height = h;
  l.out_width = w;
  return l;
}

namespace {

std::string layer_prefix(const LayerSpec& l, std::size_t index) {
  switch (l.kind) {
    case LayerSpec::Kind::conv: return "conv" + std::to_string(index);
    case LayerSpec::Kind::deconv: return "deconv" + std::to_string(index);
    case LayerSpec::Kind::dense: return "dense" + std::to_string(index);
  }
  return {};
}

detail::ConvGeometry conv_geometry(const ImageShape& in, const LayerSpec& l,
                                   const ImageShape& out) {
  return {in.height, in.width, in.channels, out.height, out.width, l.kernel, l.stride, l.padding};
}

// A deconv is the adjoint of a conv whose input is the deconv's output.
detail::ConvGeometry deconv_geometry(const ImageShape& in, const LayerSpec& l,
                                     const ImageShape& out) {
  return {out.height, out.width, out.channels, in.height, in.width, l.kernel, l.stride, l.padding};
}

std::size_t fan_in(const LayerSpec& l, const ImageShape& in) {
  switch (l.kind) {
    case LayerSpec::Kind::conv: return l.kernel * l.kernel * in.channels;
    case LayerSpec::Kind::deconv:
      return std::max<std::size_t>(1, l.kernel * l.kernel * in.channels / (l.stride * l.stride));
    case LayerSpec::Kind::dense: return in.size();
  }
  return 1;
}

template <typename T>
const Mat<T>& param(const ParamMap<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
Mat<T>& grad_slot(ParamMap<T>& grads, const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) throw std::invalid_argument("missing gradient slot '" + name + "'");
  return it->second;
}

template <typename T>
using RowMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const Mat<T>>;

}  // namespace

std::vector<ImageShape> NetworkSpec::layer_shapes() const {
  std::vector<ImageShape> shapes;
  ImageShape cur = input;
  for (const auto& l : layers) {
    if (l.units == 0) throw std::invalid_argument("network spec: layer with zero units");
    ImageShape next;
    switch (l.kind) {
      case LayerSpec::Kind::conv: {
        const std::size_t num_h = cur.height + 2 * l.padding;
        const std::size_t num_w = cur.width + 2 * l.padding;
        if (num_h < l.kernel || num_w < l.kernel) {
          throw std::invalid_argument("network spec: conv kernel larger than input");
        }
        next = {(num_h - l.kernel) / l.stride + 1, (num_w - l.kernel) / l.stride + 1, l.units};
        break;
      }
      case LayerSpec::Kind::deconv:
        next = {(cur.height - 1) * l.stride + l.kernel - 2 * l.padding,
                (cur.width - 1) * l.stride + l.kernel - 2 * l.padding, l.units};
        break;
      case LayerSpec::Kind::dense: {
        const std::size_t cells = l.out_height * l.out_width;
        if (l.units % cells != 0) throw std::invalid_argument("network spec: bad dense grid");
        next = {l.out_height, l.out_width, l.units / cells};
        break;
      }
    }
    shapes.push_back(next);
    cur = next;
  }
  return shapes;
}

ImageShape NetworkSpec::output_shape() const {
  const auto shapes = layer_shapes();
  return shapes.empty() ? input : shapes.back();
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("network spec: no layers");
  if (latent_dim == 0) throw std::invalid_argument("network spec: latent_dim must be positive");
  const ImageShape out = output_shape();
  switch (kind) {
    case NetworkKind::encoder:
      if (layers.back().kind != LayerSpec::Kind::dense || out.size() != 2 * latent_dim) {
        throw std::invalid_argument("encoder spec: final layer must be FC 2*d_Z");
      }
      break;
    case NetworkKind::discriminator:
      if (input.size() != latent_dim) throw std::invalid_argument("discriminator spec: input must be d_Z");
      if (layers.back().kind != LayerSpec::Kind::dense || out.size() != 2) {
        throw std::invalid_argument("discriminator spec: final layer must be FC 2");
      }
      break;
    case NetworkKind::decoder:
      if (input.size() != latent_dim) throw std::invalid_argument("decoder spec: input must be d_Z");
      break;
  }
}

Architecture Architecture::desk(std::size_t resolution, std::size_t channels,
                                std::size_t latent_dim) {
  if (resolution != 64) throw std::invalid_argument("desk architecture requires 64x64 inputs");
  Architecture a;
  a.name = "desk";
  a.encoder = {NetworkKind::encoder, {64, 64, channels}, latent_dim,
               {LayerSpec::conv(32), LayerSpec::conv(32), LayerSpec::conv(64), LayerSpec::conv(64),
                LayerSpec::dense(256), LayerSpec::dense(2 * latent_dim, Activation::none)}};
  a.decoder = {NetworkKind::decoder, {1, 1, latent_dim}, latent_dim,
               {LayerSpec::dense(256), LayerSpec::dense_grid(4, 4, 64), LayerSpec::deconv(64),
                LayerSpec::deconv(32), LayerSpec::deconv(32),
                LayerSpec::deconv(channels, Activation::none)}};
  std::vector<LayerSpec> disc(6, LayerSpec::dense(1000));
  disc.push_back(LayerSpec::dense(2, Activation::none));
  a.discriminator = {NetworkKind::discriminator, {1, 1, latent_dim}, latent_dim, disc};
  a.validate();
  return a;
}

Architecture Architecture::reduced(std::size_t resolution, std::size_t channels,
                                   std::size_t latent_dim) {
  std::vector<std::size_t> conv_channels;
  if (resolution == 8) {
    conv_channels = {4, 8};
  } else if (resolution == 16) {
    conv_channels = {4, 4, 8};
  } else {
    throw std::invalid_argument("reduced architecture supports 8x8 and 16x16 inputs");
  }
  Architecture a;
  a.name = "reduced";
  std::vector<LayerSpec> enc;
  for (auto c : conv_channels) enc.push_back(LayerSpec::conv(c));
  enc.push_back(LayerSpec::dense(16));
  enc.push_back(LayerSpec::dense(2 * latent_dim, Activation::none));
  a.encoder = {NetworkKind::encoder, {resolution, resolution, channels}, latent_dim, enc};

  std::vector<LayerSpec> dec{LayerSpec::dense(16), LayerSpec::dense_grid(2, 2, conv_channels.back())};
  for (auto it = conv_channels.rbegin() + 1; it != conv_channels.rend(); ++it) {
    dec.push_back(LayerSpec::deconv(*it));
  }
  dec.push_back(LayerSpec::deconv(channels, Activation::none));
  a.decoder = {NetworkKind::decoder, {1, 1, latent_dim}, latent_dim, dec};
  a.discriminator = {NetworkKind::discriminator, {1, 1, latent_dim}, latent_dim,
                     {LayerSpec::dense(16), LayerSpec::dense(16),
                      LayerSpec::dense(2, Activation::none)}};
  a.validate();
  return a;
}

Architecture Architecture::by_name(const std::string& name, std::size_t resolution,
                                   std::size_t channels, std::size_t latent_dim) {
  if (name == "desk") return desk(resolution, channels, latent_dim);
  if (name == "reduced") return reduced(resolution, channels, latent_dim);
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

void Architecture::validate() const {
  encoder.validate();
  decoder.validate();
  discriminator.validate();
  if (decoder.latent_dim != encoder.latent_dim || discriminator.latent_dim != encoder.latent_dim) {
    throw std::invalid_argument("architecture: latent sizes differ");
  }
  if (!(decoder.output_shape() == encoder.input)) {
    throw std::invalid_argument("architecture: decoder output shape differs from encoder input");
  }
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> parameter_layout(
    const NetworkSpec& spec) {
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
  const auto shapes = spec.layer_shapes();
  ImageShape in = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string p = layer_prefix(l, i);
    switch (l.kind) {
      case LayerSpec::Kind::conv:
        out.push_back({p + ".weight", {l.kernel * l.kernel * in.channels, l.units}});
        out.push_back({p + ".bias", {1, l.units}});
        break;
      case LayerSpec::Kind::deconv:
        out.push_back({p + ".weight", {in.channels, l.kernel * l.kernel * l.units}});
        out.push_back({p + ".bias", {1, l.units}});
        break;
      case LayerSpec::Kind::dense:
        out.push_back({p + ".weight", {in.size(), l.units}});
        out.push_back({p + ".bias", {1, l.units}});
        break;
    }
    in = shapes[i];
  }
  return out;
}

std::size_t parameter_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_layout(spec)) n += shape.first * shape.second;
  return n;
}

template <typename T>
ParamMap<T> init_params(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  ParamMap<T> params;
  const auto shapes = spec.layer_shapes();
  const auto layout = parameter_layout(spec);
  ImageShape in = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& [wname, wshape] = layout[2 * i];
    const auto& [bname, bshape] = layout[2 * i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(spec.layers[i], in)));
    Mat<T> w(wshape.first, wshape.second);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      w.data()[k] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
    params.emplace(wname, std::move(w));
    params.emplace(bname, Mat<T>::Zero(bshape.first, bshape.second));
    in = shapes[i];
  }
  return params;
}

template <typename T>
ModelParams<T> init_model(const Architecture& arch, Rng& rng) {
  Rng enc = rng.split(1), dec = rng.split(2), disc = rng.split(3);
  return {init_params<T>(arch.encoder, enc), init_params<T>(arch.decoder, dec),
          init_params<T>(arch.discriminator, disc)};
}

template <typename T>
ParamMap<T> zeros_like(const ParamMap<T>& params) {
  ParamMap<T> out;
  for (const auto& [name, p] : params) out.emplace(name, Mat<T>::Zero(p.rows(), p.cols()));
  return out;
}

template <typename To, typename From>
ParamMap<To> cast_params(const ParamMap<From>& params) {
  ParamMap<To> out;
  for (const auto& [name, p] : params) out.emplace(name, p.template cast<To>());
  return out;
}

namespace detail {

// Clipped range [lo, hi) of kernel taps that land inside an axis of length n.
struct TapRange {
  std::size_t lo, hi;
  std::ptrdiff_t origin;
};

TapRange taps(std::size_t out_pos, const ConvGeometry& g, std::size_t n) {
  const auto origin = static_cast<std::ptrdiff_t>(out_pos * g.stride) -
                      static_cast<std::ptrdiff_t>(g.padding);
  const auto k = static_cast<std::ptrdiff_t>(g.kernel);
  const auto lo = std::clamp<std::ptrdiff_t>(-origin, 0, k);
  const auto hi = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - origin, lo, k);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi), origin};
}

template <typename T>
void im2col(const T* images, std::size_t batch, const ConvGeometry& g, T* cols) {
  const std::size_t c = g.channels;
  const std::size_t image_size = g.in_h * g.in_w * c;
  const std::size_t patch = g.patch();
  const std::size_t run = g.kernel * c;
  T* row = cols;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* img = images + b * image_size;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const TapRange ty = taps(oy, g, g.in_h);
      for (std::size_t ox = 0; ox < g.out_w; ++ox, row += patch) {
        const TapRange tx = taps(ox, g, g.in_w);
        std::fill(row, row + ty.lo * run, T(0));
        for (std::size_t ky = ty.lo; ky < ty.hi; ++ky) {
          T* dst = row + ky * run;
          const T* src = img + ((static_cast<std::size_t>(ty.origin + static_cast<std::ptrdiff_t>(ky)) * g.in_w) +
                                static_cast<std::size_t>(tx.origin + static_cast<std::ptrdiff_t>(tx.lo))) * c;
          std::fill(dst, dst + tx.lo * c, T(0));
          std::copy(src, src + (tx.hi - tx.lo) * c, dst + tx.lo * c);
          std::fill(dst + tx.hi * c, dst + run, T(0));
        }
        std::fill(row + ty.hi * run, row + patch, T(0));
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* images) {
  const std::size_t c = g.channels;
  const std::size_t image_size = g.in_h * g.in_w * c;
  const std::size_t patch = g.patch();
  const std::size_t run = g.kernel * c;
  const T* row = cols;
  for (std::size_t b = 0; b < batch; ++b) {
    T* img = images + b * image_size;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const TapRange ty = taps(oy, g, g.in_h);
      for (std::size_t ox = 0; ox < g.out_w; ++ox, row += patch) {
        const TapRange tx = taps(ox, g, g.in_w);
        const std::size_t len = (tx.hi - tx.lo) * c;
        for (std::size_t ky = ty.lo; ky < ty.hi; ++ky) {
          const T* src = row + ky * run + tx.lo * c;
          T* dst = img + ((static_cast<std::size_t>(ty.origin + static_cast<std::ptrdiff_t>(ky)) * g.in_w) +
                          static_cast<std::size_t>(tx.origin + static_cast<std::ptrdiff_t>(tx.lo))) * c;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Mat<T> forward(const NetworkSpec& spec, const ParamMap<T>& params, const Mat<T>& x, Tape<T>* tape) {
  if (static_cast<std::size_t>(x.cols()) != spec.input.size()) {
    throw std::invalid_argument("forward: input width " + std::to_string(x.cols()) +
                                " does not match network input " +
                                std::to_string(spec.input.size()));
  }
  const auto shapes = spec.layer_shapes();
  const auto batch = static_cast<std::size_t>(x.rows());
  if (tape != nullptr) {
    tape->input = x;
    tape->cols.assign(spec.layers.size(), Mat<T>());
    tape->outputs.assign(spec.layers.size(), Mat<T>());
  }
  Mat<T> cur = x;
  ImageShape in = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const ImageShape& out_shape = shapes[i];
    const std::string p = layer_prefix(l, i);
    const Mat<T>& w = param(params, p + ".weight");
    const Mat<T>& bias = param(params, p + ".bias");
    Mat<T> out(x.rows(), static_cast<Eigen::Index>(out_shape.size()));
    const auto spatial_out = static_cast<Eigen::Index>(batch * out_shape.height * out_shape.width);
    switch (l.kind) {
      case LayerSpec::Kind::conv: {
        const auto g = conv_geometry(in, l, out_shape);
        Mat<T> cols(spatial_out, static_cast<Eigen::Index>(g.patch()));
        detail::im2col(cur.data(), batch, g, cols.data());
        RowMap<T> ov(out.data(), spatial_out, static_cast<Eigen::Index>(l.units));
        ov.noalias() = cols * w;
        ov.rowwise() += bias.row(0);
        if (tape != nullptr) tape->cols[i] = std::move(cols);
        break;
      }
      case LayerSpec::Kind::deconv: {
        const auto g = deconv_geometry(in, l, out_shape);
        const auto spatial_in = static_cast<Eigen::Index>(batch * in.height * in.width);
        ConstRowMap<T> xv(cur.data(), spatial_in, static_cast<Eigen::Index>(in.channels));
        Mat<T> cols(spatial_in, static_cast<Eigen::Index>(g.patch()));
        cols.noalias() = xv * w;
        out.setZero();
        detail::col2im(cols.data(), batch, g, out.data());
        RowMap<T> ov(out.data(), spatial_out, static_cast<Eigen::Index>(l.units));
        ov.rowwise() += bias.row(0);
        break;
      }
      case LayerSpec::Kind::dense:
        out.noalias() = cur * w;
        out.rowwise() += bias.row(0);
        break;
    }
    if (l.activation == Activation::relu) out = out.cwiseMax(T(0));
    if (tape != nullptr) tape->outputs[i] = out;
    cur = std::move(out);
    in = out_shape;
  }
  return cur;
}

template <typename T>
Mat<T> backward(const NetworkSpec& spec, const ParamMap<T>& params, const Tape<T>& tape,
                const Mat<T>& d_out, ParamMap<T>& grads, bool input_grad) {
  const auto shapes = spec.layer_shapes();
  if (tape.outputs.size() != spec.layers.size()) {
    throw std::invalid_argument("backward: tape does not match network");
  }
  const auto batch = static_cast<std::size_t>(tape.input.rows());
  Mat<T> d = d_out;
  for (std::size_t idx = spec.layers.size(); idx-- > 0;) {
    const auto& l = spec.layers[idx];
    const ImageShape in = idx == 0 ? spec.input : shapes[idx - 1];
    const ImageShape& out_shape = shapes[idx];
    const Mat<T>& layer_in = idx == 0 ? tape.input : tape.outputs[idx - 1];
    const std::string p = layer_prefix(l, idx);
    const Mat<T>& w = param(params, p + ".weight");
    Mat<T>& gw = grad_slot(grads, p + ".weight");
    Mat<T>& gb = grad_slot(grads, p + ".bias");
    if (d.rows() != tape.outputs[idx].rows() || d.cols() != tape.outputs[idx].cols()) {
      throw std::invalid_argument("backward: gradient shape mismatch");
    }
    if (l.activation == Activation::relu) {
      d = (tape.outputs[idx].array() > T(0)).select(d, T(0));
    }
    const bool need_dx = idx > 0 || input_grad;
    const auto spatial_out = static_cast<Eigen::Index>(batch * out_shape.height * out_shape.width);
    Mat<T> dx;
    switch (l.kind) {
      case LayerSpec::Kind::conv: {
        const auto g = conv_geometry(in, l, out_shape);
        ConstRowMap<T> dv(d.data(), spatial_out, static_cast<Eigen::Index>(l.units));
        const Mat<T>& cols = tape.cols[idx];
        gw.noalias() += cols.transpose() * dv;
        gb += dv.colwise().sum();
        if (need_dx) {
          Mat<T> dcols(spatial_out, static_cast<Eigen::Index>(g.patch()));
          dcols.noalias() = dv * w.transpose();
          dx = Mat<T>::Zero(layer_in.rows(), layer_in.cols());
          detail::col2im(dcols.data(), batch, g, dx.data());
        }
        break;
      }
      case LayerSpec::Kind::deconv: {
        const auto g = deconv_geometry(in, l, out_shape);
        const auto spatial_in = static_cast<Eigen::Index>(batch * in.height * in.width);
        Mat<T> dcols(spatial_in, static_cast<Eigen::Index>(g.patch()));
        detail::im2col(d.data(), batch, g, dcols.data());
        ConstRowMap<T> xv(layer_in.data(), spatial_in, static_cast<Eigen::Index>(in.channels));
        gw.noalias() += xv.transpose() * dcols;
        ConstRowMap<T> dv(d.data(), spatial_out, static_cast<Eigen::Index>(l.units));
        gb += dv.colwise().sum();
        if (need_dx) {
          dx.resize(layer_in.rows(), layer_in.cols());
          RowMap<T> dxv(dx.data(), spatial_in, static_cast<Eigen::Index>(in.channels));
          dxv.noalias() = dcols * w.transpose();
        }
        break;
      }
      case LayerSpec::Kind::dense:
        gw.noalias() += layer_in.transpose() * d;
        gb += d.colwise().sum();
        if (need_dx) dx.noalias() = d * w.transpose();
        break;
    }
    if (!need_dx) return {};
    d = std::move(dx);
  }
  return d;
}

#define TCWAE_INSTANTIATE_NETWORK(T)                                                        \
  template ParamMap<T> init_params<T>(const NetworkSpec&, Rng&);                            \
  template ModelParams<T> init_model<T>(const Architecture&, Rng&);                         \
  template ParamMap<T> zeros_like<T>(const ParamMap<T>&);                                   \
  template Mat<T> forward<T>(const NetworkSpec&, const ParamMap<T>&, const Mat<T>&,         \
                             Tape<T>*);                                                     \
  template Mat<T> backward<T>(const NetworkSpec&, const ParamMap<T>&, const Tape<T>&,       \
                              const Mat<T>&, ParamMap<T>&, bool);                           \
  template void detail::im2col<T>(const T*, std::size_t, const detail::ConvGeometry&, T*);  \
  template void detail::col2im<T>(const T*, std::size_t, const detail::ConvGeometry&, T*);

TCWAE_INSTANTIATE_NETWORK(float)
TCWAE_INSTANTIATE_NETWORK(double)
#undef TCWAE_INSTANTIATE_NETWORK

template ParamMap<float> cast_params<float, double>(const ParamMap<double>&);
template ParamMap<double> cast_params<double, float>(const ParamMap<float>&);
template ParamMap<float> cast_params<float, float>(const ParamMap<float>&);
template ParamMap<double> cast_params<double, double>(const ParamMap<double>&);

}  // namespace tcwae
