#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <set>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace tscn {

// ---------------------------------------------------------------------------
// Layer specifications
// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 1, zero padding 1.
struct Conv3x3 {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  friend bool operator==(const Conv3x3&, const Conv3x3&) = default;
};
struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};
/// 2x2 max pooling, stride 2 (odd trailing rows/columns are dropped).
struct MaxPool2 {
  friend bool operator==(const MaxPool2&, const MaxPool2&) = default;
};
struct GlobalAvgPool {
  friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};
/// Fully connected layer on the flattened input.
struct Dense {
  std::size_t in_units = 0;
  std::size_t out_units = 0;
  friend bool operator==(const Dense&, const Dense&) = default;
};

using LayerSpec = std::variant<Conv3x3, ReLU, MaxPool2, GlobalAvgPool, Dense>;

struct TensorShape {
  std::size_t channels = 0;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

inline std::string layer_name(const LayerSpec& l) {
  struct Visitor {
    std::string operator()(const Conv3x3& c) const {
      return "Conv3x3(" + std::to_string(c.in_channels) + "->" + std::to_string(c.out_channels) + ")";
    }
    std::string operator()(const ReLU&) const { return "ReLU"; }
    std::string operator()(const MaxPool2&) const { return "MaxPool2"; }
    std::string operator()(const GlobalAvgPool&) const { return "GlobalAvgPool"; }
    std::string operator()(const Dense& d) const {
      return "Dense(" + std::to_string(d.in_units) + "->" + std::to_string(d.out_units) + ")";
    }
  };
  return std::visit(Visitor{}, l);
}

/// Output shape of layer `index`; throws ShapeError naming the layer when
/// `in` does not fit.
inline TensorShape layer_output_shape(const LayerSpec& l, const TensorShape& in, std::size_t index) {
  auto fail = [&](const std::string& why) -> TensorShape {
    throw ShapeError("layer " + std::to_string(index) + " " + layer_name(l) + ": input " + in.str() +
                     " " + why);
  };
  if (auto* c = std::get_if<Conv3x3>(&l)) {
    if (c->in_channels != in.channels) return fail("has wrong channel count");
    if (c->out_channels == 0) return fail("has zero output channels");
    return {c->out_channels, in.height, in.width};
  }
  if (std::holds_alternative<ReLU>(l)) return in;
  if (std::holds_alternative<MaxPool2>(l)) {
    if (in.height < 2 || in.width < 2) return fail("is too small to pool");
    return {in.channels, in.height / 2, in.width / 2};
  }
  if (std::holds_alternative<GlobalAvgPool>(l)) return {in.channels, 1, 1};
  const auto& d = std::get<Dense>(l);
  if (d.in_units != in.size()) return fail("does not have " + std::to_string(d.in_units) + " units");
  if (d.out_units == 0) return fail("has zero output units");
  return {d.out_units, 1, 1};
}

inline std::size_t weight_count(const LayerSpec& l) {
  if (auto* c = std::get_if<Conv3x3>(&l)) return c->out_channels * c->in_channels * 9;
  if (auto* d = std::get_if<Dense>(&l)) return d->out_units * d->in_units;
  return 0;
}

inline std::size_t bias_count(const LayerSpec& l) {
  if (auto* c = std::get_if<Conv3x3>(&l)) return c->out_channels;
  if (auto* d = std::get_if<Dense>(&l)) return d->out_units;
  return 0;
}

inline bool has_params(const LayerSpec& l) { return weight_count(l) > 0; }

/// Layer list with the index where the projection head begins.
struct Architecture {
  TensorShape input;
  std::vector<LayerSpec> layers;
  std::size_t head_start = 0;  // layers [0, head_start) form the backbone, output = H
};

/// Desk-scale network: a small conv backbone (h = 64) and a
/// Dense-ReLU-Dense projection head ending in a readout of width `readout_dim`.
inline Architecture desk_architecture(TensorShape input, std::size_t readout_dim) {
  const std::size_t c = input.channels;
  return {input,
          {Conv3x3{c, 16}, ReLU{}, MaxPool2{}, Conv3x3{16, 32}, ReLU{}, MaxPool2{}, GlobalAvgPool{},
           Dense{32, 64}, Dense{64, 128}, ReLU{}, Dense{128, readout_dim}},
          8};
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct LayerParams {
  std::vector<T> weight;  // Conv: [out][in][3][3], Dense: [out][in]
  std::vector<T> bias;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Per-layer gradient tensors, same shapes as EncoderParams::params.
template <typename T>
using Gradients = std::vector<LayerParams<T>>;

template <typename T>
struct EncoderParams {
  TensorShape input;
  std::vector<LayerSpec> layers;
  std::size_t head_start = 0;
  std::vector<LayerParams<T>> params;
  std::vector<bool> frozen;

  std::size_t readout_index() const { return layers.size() - 1; }
  std::size_t readout_dim() const { return std::get<Dense>(layers.back()).out_units; }

  std::vector<TensorShape> shapes() const {
    std::vector<TensorShape> s{input};
    for (std::size_t i = 0; i < layers.size(); ++i) s.push_back(layer_output_shape(layers[i], s.back(), i));
    return s;
  }
  std::size_t h_dim() const { return shapes()[head_start].size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.weight.size() + p.bias.size();
    return n;
  }

  /// Throws ShapeError / ValidationError if any structural invariant fails.
  void validate() const {
    if (layers.empty()) throw ShapeError("encoder has no layers");
    if (!std::holds_alternative<Dense>(layers.back()))
      throw ShapeError("encoder: last layer must be the Dense readout, got " + layer_name(layers.back()));
    if (head_start >= layers.size())
      throw ShapeError("encoder: head start " + std::to_string(head_start) + " out of range");
    (void)shapes();
    if (params.size() != layers.size() || frozen.size() != layers.size())
      throw ValidationError("encoder: parameter / freeze-mask count does not match layer count");
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (params[i].weight.size() != weight_count(layers[i]) || params[i].bias.size() != bias_count(layers[i]))
        throw ShapeError("encoder: parameter shape mismatch at layer " + std::to_string(i) + " " +
                         layer_name(layers[i]));
  }

  Gradients<T> zero_like() const {
    Gradients<T> g(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      g[i].weight.assign(params[i].weight.size(), T{0});
      g[i].bias.assign(params[i].bias.size(), T{0});
    }
    return g;
  }

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out{input, layers, head_start, {}, frozen};
    for (const auto& p : params)
      out.params.push_back({std::vector<U>(p.weight.begin(), p.weight.end()),
                            std::vector<U>(p.bias.begin(), p.bias.end())});
    return out;
  }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

namespace detail {

template <typename T>
void glorot_uniform(std::vector<T>& w, std::size_t fan_in, std::size_t fan_out, RandomStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
void init_layer(const LayerSpec& l, LayerParams<T>& p, RandomStream& rng) {
  p.weight.assign(weight_count(l), T{0});
  p.bias.assign(bias_count(l), T{0});
  if (auto* c = std::get_if<Conv3x3>(&l)) glorot_uniform(p.weight, c->in_channels * 9, c->out_channels * 9, rng);
  if (auto* d = std::get_if<Dense>(&l)) glorot_uniform(p.weight, d->in_units, d->out_units, rng);
}

/// FNV-style digest of all parameter bit patterns; detects stale caches.
template <typename T>
std::uint64_t param_digest(const EncoderParams<T>& p) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&](const std::vector<T>& v) {
    for (T x : v) h = (h ^ static_cast<std::uint64_t>(std::bit_cast<Bits>(x))) * 0x100000001b3ULL;
    h = (h ^ v.size()) * 0x100000001b3ULL;
  };
  for (const auto& lp : p.params) {
    eat(lp.weight);
    eat(lp.bias);
  }
  return h;
}

} // namespace detail

/// Fresh network: weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases,
/// nothing frozen. Draw order is layer by layer in storage order.
template <typename T>
EncoderParams<T> make_encoder(const Architecture& arch, RandomStream& rng) {
  EncoderParams<T> p{arch.input, arch.layers, arch.head_start, {}, std::vector<bool>(arch.layers.size(), false)};
  p.params.resize(arch.layers.size());
  for (std::size_t i = 0; i < arch.layers.size(); ++i) detail::init_layer(arch.layers[i], p.params[i], rng);
  p.validate();
  return p;
}

/// Replaces the readout Dense layer by a freshly initialized one of width
/// `new_dim`. Every other parameter is left bit-identical. Re-initialization
/// is unconditional, even when the width does not change.
template <typename T>
EncoderParams<T> reinit_readout(EncoderParams<T> p, std::size_t new_dim, RandomStream& rng) {
  if (new_dim < 1) throw ValidationError("reinit_readout: new readout dimension must be >= 1");
  auto& d = std::get<Dense>(p.layers.back());
  d.out_units = new_dim;
  detail::init_layer(p.layers.back(), p.params.back(), rng);
  return p;
}

/// Sets the freeze mask: layers listed in `frozen_layers` are frozen, all
/// others trainable.
template <typename T>
EncoderParams<T> set_freeze(EncoderParams<T> p, const std::set<std::size_t>& frozen_layers) {
  for (std::size_t i : frozen_layers)
    if (i >= p.layers.size())
      throw ValidationError("set_freeze: layer index " + std::to_string(i) + " out of range (network has " +
                            std::to_string(p.layers.size()) + " layers)");
  for (std::size_t i = 0; i < p.layers.size(); ++i) p.frozen[i] = frozen_layers.count(i) > 0;
  return p;
}

/// Indices of all layers except the readout.
inline std::set<std::size_t> all_but_readout(std::size_t layer_count) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i + 1 < layer_count; ++i) s.insert(i);
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ExecOptions {
  unsigned threads = 1;
  std::size_t chunk_size = 16;  // samples per work item; fixes the reduction order
};

template <typename T>
struct ChunkCache {
  std::size_t begin = 0;
  std::size_t count = 0;
  std::vector<Matrix<T>> acts;                      // acts[l] = input of layer l, acts.back() = Z
  std::vector<std::vector<std::uint32_t>> argmax;   // per MaxPool2 layer (others empty)
};

template <typename T>
struct ForwardCache {
  std::size_t samples = 0;
  std::uint64_t digest = 0;
  std::vector<LayerSpec> layers;
  TensorShape input;
  std::vector<ChunkCache<T>> chunks;
};

template <typename T>
struct ForwardResult {
  Matrix<T> h;  // n x h_dim (backbone output)
  Matrix<T> z;  // n x readout_dim (head output)
  ForwardCache<T> cache;
};

namespace detail {

template <typename T>
void im2col3x3(const T* in, std::size_t channels, std::size_t height, std::size_t width, T* col) {
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col + ((c * 3 + ky) * 3 + kx) * hw;
        const T* plane = in + c * hw;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          T* drow = dst + y * width;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(drow, drow + width, T{0});
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(sy) * width;
          if (kx == 0) {
            drow[0] = T{0};
            std::copy(srow, srow + width - 1, drow + 1);
          } else if (kx == 1) {
            std::copy(srow, srow + width, drow);
          } else {
            std::copy(srow + 1, srow + width, drow);
            drow[width - 1] = T{0};
          }
        }
      }
}

/// Transposed im2col: row p (pixel) holds the 9 * channels receptive field.
template <typename T>
void im2col3x3_t(const T* in, std::size_t channels, std::size_t height, std::size_t width, T* colt) {
  const std::size_t k = channels * 9;
  const std::size_t hw = height * width;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      T* dst = colt + (y * width + x) * k;
      for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = in + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          const bool row_ok = sy >= 0 && sy < static_cast<std::ptrdiff_t>(height);
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            const bool ok = row_ok && sx >= 0 && sx < static_cast<std::ptrdiff_t>(width);
            dst[(c * 3 + ky) * 3 + kx] = ok ? plane[static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)] : T{0};
          }
        }
      }
    }
}

template <typename T>
void col2im3x3_add(const T* col, std::size_t channels, std::size_t height, std::size_t width, T* out) {
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* src = col + ((c * 3 + ky) * 3 + kx) * hw;
        T* plane = out + c * hw;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* drow = plane + static_cast<std::size_t>(sy) * width;
          const T* srow = src + y * width;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? width - 1 : width;
          for (std::size_t x = x0; x < x1; ++x) drow[x + kx - 1] += srow[x];
        }
      }
}

template <typename T>
Matrix<T> layer_forward(const LayerSpec& l, const LayerParams<T>& p, const TensorShape& in_shape,
                        const TensorShape& out_shape, const Matrix<T>& x, std::vector<std::uint32_t>& argmax) {
  const std::size_t n = x.rows();
  Matrix<T> y(n, out_shape.size());

  if (auto* c = std::get_if<Conv3x3>(&l)) {
    const std::size_t hw = in_shape.height * in_shape.width;
    const std::size_t k = c->in_channels * 9;
    std::vector<T> col(k * hw);
    for (std::size_t s = 0; s < n; ++s) {
      im2col3x3(x.row(s).data(), in_shape.channels, in_shape.height, in_shape.width, col.data());
      T* ys = y.row(s).data();
      for (std::size_t o = 0; o < c->out_channels; ++o) std::fill(ys + o * hw, ys + (o + 1) * hw, p.bias[o]);
      kernels::gemm_nn(p.weight.data(), col.data(), ys, c->out_channels, k, hw);
    }
  } else if (std::holds_alternative<ReLU>(l)) {
    const auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > T{0} ? xs[i] : T{0};
  } else if (std::holds_alternative<MaxPool2>(l)) {
    const std::size_t H = in_shape.height, W = in_shape.width;
    const std::size_t oh = out_shape.height, ow = out_shape.width;
    argmax.assign(n * out_shape.size(), 0);
    for (std::size_t s = 0; s < n; ++s) {
      const T* xs = x.row(s).data();
      T* ys = y.row(s).data();
      std::uint32_t* am = argmax.data() + s * out_shape.size();
      for (std::size_t ch = 0; ch < in_shape.channels; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            std::size_t best = ch * H * W + (2 * oy) * W + 2 * ox;
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = ch * H * W + (2 * oy + dy) * W + 2 * ox + dx;
                if (xs[idx] > xs[best]) best = idx;
              }
            const std::size_t o = (ch * oh + oy) * ow + ox;
            ys[o] = xs[best];
            am[o] = static_cast<std::uint32_t>(best);
          }
    }
  } else if (std::holds_alternative<GlobalAvgPool>(l)) {
    const std::size_t hw = in_shape.height * in_shape.width;
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < in_shape.channels; ++ch) {
        const T* plane = x.row(s).data() + ch * hw;
        T sum{0};
        for (std::size_t i = 0; i < hw; ++i) sum += plane[i];
        y(s, ch) = sum * inv;
      }
  } else {
    const auto& d = std::get<Dense>(l);
    for (std::size_t s = 0; s < n; ++s) std::copy(p.bias.begin(), p.bias.end(), y.row(s).begin());
    kernels::gemm_nt(x.data().data(), p.weight.data(), y.data().data(), n, d.in_units, d.out_units);
  }
  return y;
}

/// Accumulates parameter gradients into `g` (when non-null) and returns dX
/// (when `need_dx`).
template <typename T>
Matrix<T> layer_backward(const LayerSpec& l, const LayerParams<T>& p, const TensorShape& in_shape,
                         const TensorShape& out_shape, const Matrix<T>& x, const Matrix<T>& dy,
                         const std::vector<std::uint32_t>& argmax, LayerParams<T>* g, bool need_dx) {
  const std::size_t n = x.rows();
  Matrix<T> dx = need_dx ? Matrix<T>(n, in_shape.size()) : Matrix<T>();

  if (auto* c = std::get_if<Conv3x3>(&l)) {
    const std::size_t hw = in_shape.height * in_shape.width;
    const std::size_t k = c->in_channels * 9;
    std::vector<T> colt(g ? k * hw : 0), dcol(need_dx ? k * hw : 0);
    for (std::size_t s = 0; s < n; ++s) {
      const T* dys = dy.row(s).data();
      if (g) {
        im2col3x3_t(x.row(s).data(), in_shape.channels, in_shape.height, in_shape.width, colt.data());
        kernels::gemm_nn(dys, colt.data(), g->weight.data(), c->out_channels, hw, k);
        for (std::size_t o = 0; o < c->out_channels; ++o) {
          T sum{0};
          for (std::size_t i = 0; i < hw; ++i) sum += dys[o * hw + i];
          g->bias[o] += sum;
        }
      }
      if (need_dx) {
        std::fill(dcol.begin(), dcol.end(), T{0});
        kernels::gemm_tn(p.weight.data(), dys, dcol.data(), k, c->out_channels, hw);
        col2im3x3_add(dcol.data(), in_shape.channels, in_shape.height, in_shape.width, dx.row(s).data());
      }
    }
  } else if (std::holds_alternative<ReLU>(l)) {
    if (need_dx) {
      const auto xs = x.data();
      const auto dys = dy.data();
      auto dxs = dx.data();
      for (std::size_t i = 0; i < xs.size(); ++i) dxs[i] = xs[i] > T{0} ? dys[i] : T{0};
    }
  } else if (std::holds_alternative<MaxPool2>(l)) {
    if (need_dx)
      for (std::size_t s = 0; s < n; ++s) {
        const std::uint32_t* am = argmax.data() + s * out_shape.size();
        const T* dys = dy.row(s).data();
        T* dxs = dx.row(s).data();
        for (std::size_t o = 0; o < out_shape.size(); ++o) dxs[am[o]] += dys[o];
      }
  } else if (std::holds_alternative<GlobalAvgPool>(l)) {
    if (need_dx) {
      const std::size_t hw = in_shape.height * in_shape.width;
      const T inv = T{1} / static_cast<T>(hw);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < in_shape.channels; ++ch) {
          const T v = dy(s, ch) * inv;
          T* plane = dx.row(s).data() + ch * hw;
          std::fill(plane, plane + hw, v);
        }
    }
  } else {
    const auto& d = std::get<Dense>(l);
    if (g) {
      kernels::gemm_tn(dy.data().data(), x.data().data(), g->weight.data(), d.out_units, n, d.in_units);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < d.out_units; ++o) g->bias[o] += dy(s, o);
    }
    if (need_dx) kernels::gemm_nn(dy.data().data(), p.weight.data(), dx.data().data(), n, d.out_units, d.in_units);
  }
  return dx;
}

template <typename T>
Matrix<T> slice_rows(const Matrix<T>& m, std::size_t begin, std::size_t count) {
  Matrix<T> out(count, m.cols());
  std::copy(m.data().begin() + begin * m.cols(), m.data().begin() + (begin + count) * m.cols(),
            out.data().begin());
  return out;
}

} // namespace detail

/// Runs the network on `images` (n x C*H*W, channel-planar rows).
///
/// The batch is split into fixed-size chunks that may run on several threads;
/// each chunk keeps its own activations for `backward`.
template <typename T>
ForwardResult<T> forward(const Matrix<T>& images, const EncoderParams<T>& p, const ExecOptions& exec = {}) {
  if (images.cols() != p.input.size())
    throw ShapeError("forward: layer 0 " + layer_name(p.layers.front()) + " expects input " + p.input.str() +
                     " (" + std::to_string(p.input.size()) + " values), got rows of " +
                     std::to_string(images.cols()));
  const auto shapes = p.shapes();
  const std::size_t n = images.rows();
  const std::size_t chunk = std::max<std::size_t>(1, exec.chunk_size);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;

  ForwardCache<T> cache{n, detail::param_digest(p), p.layers, p.input, std::vector<ChunkCache<T>>(n_chunks)};
  parallel_for(n_chunks, exec.threads, [&](std::size_t ci) {
    auto& cc = cache.chunks[ci];
    cc.begin = ci * chunk;
    cc.count = std::min(chunk, n - cc.begin);
    cc.acts.reserve(p.layers.size() + 1);
    cc.acts.push_back(detail::slice_rows(images, cc.begin, cc.count));
    cc.argmax.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l)
      cc.acts.push_back(
          detail::layer_forward(p.layers[l], p.params[l], shapes[l], shapes[l + 1], cc.acts[l], cc.argmax[l]));
  });

  ForwardResult<T> r{Matrix<T>(n, shapes[p.head_start].size()), Matrix<T>(n, shapes.back().size()), {}};
  for (const auto& cc : cache.chunks) {
    const auto& h = cc.acts[p.head_start];
    const auto& z = cc.acts.back();
    std::copy(h.data().begin(), h.data().end(), r.h.data().begin() + cc.begin * r.h.cols());
    std::copy(z.data().begin(), z.data().end(), r.z.data().begin() + cc.begin * r.z.cols());
  }
  r.cache = std::move(cache);
  return r;
}

/// Gradients of sum(dz .* Z) with respect to every trainable parameter.
/// Frozen layers get zero gradients; propagation stops below the lowest
/// trainable layer.
template <typename T>
Gradients<T> backward(const ForwardCache<T>& cache, const Matrix<T>& dz, const EncoderParams<T>& p,
                      const ExecOptions& exec = {}) {
  if (cache.layers != p.layers || cache.input != p.input || cache.digest != detail::param_digest(p))
    throw ValidationError("backward: cache was produced for different parameters (stale cache)");
  if (dz.rows() != cache.samples || dz.cols() != p.readout_dim())
    throw ShapeError("backward: dZ is " + dz.shape_str() + ", expected " + std::to_string(cache.samples) + "x" +
                     std::to_string(p.readout_dim()));

  const auto shapes = p.shapes();
  const std::size_t L = p.layers.size();
  std::size_t lowest = L;
  for (std::size_t l = 0; l < L; ++l)
    if (has_params(p.layers[l]) && !p.frozen[l]) {
      lowest = l;
      break;
    }

  Gradients<T> total = p.zero_like();
  if (lowest == L) return total;

  std::vector<Gradients<T>> partial(cache.chunks.size());
  parallel_for(cache.chunks.size(), exec.threads, [&](std::size_t ci) {
    const auto& cc = cache.chunks[ci];
    auto& g = partial[ci];
    g = p.zero_like();
    Matrix<T> grad = detail::slice_rows(dz, cc.begin, cc.count);
    for (std::size_t l = L; l-- > lowest;) {
      const bool trainable = has_params(p.layers[l]) && !p.frozen[l];
      grad = detail::layer_backward(p.layers[l], p.params[l], shapes[l], shapes[l + 1], cc.acts[l], grad,
                                    cc.argmax[l], trainable ? &g[l] : nullptr, l > lowest);
    }
  });

  for (const auto& g : partial)
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t i = 0; i < g[l].weight.size(); ++i) total[l].weight[i] += g[l].weight[i];
      for (std::size_t i = 0; i < g[l].bias.size(); ++i) total[l].bias[i] += g[l].bias[i];
    }
  return total;
}

} // namespace tscn
