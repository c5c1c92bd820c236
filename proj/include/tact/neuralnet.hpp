#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <istream>
#include <ostream>
#include <string>
#include <limits>
#include <variant>
#include <vector>

#include "tact/errors.hpp"
#include "tact/rng.hpp"

namespace tact {

// Batched NCHW tensor. Dense layers treat c*h*w as a flat feature axis.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  void resize(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.resize(static_cast<std::size_t>(n) * c * h * w);
  }
  std::size_t size() const { return data.size(); }
  int features() const { return c * h * w; }
  T* sample(int b) { return data.data() + static_cast<std::size_t>(b) * features(); }
  const T* sample(int b) const {
    return data.data() + static_cast<std::size_t>(b) * features();
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape3&) const = default;
  int features() const { return c * h * w; }
};

// Declarative layer description; `dense.in == 0` means "infer from the
// incoming shape" when the network is assembled.
struct LayerSpec {
  enum class Kind : std::uint8_t { Conv2D = 0, ReLU = 1, MaxPool = 2, Dropout = 3, Flatten = 4, Dense = 5 };
  Kind kind = Kind::ReLU;
  int filters = 0;  // conv2d
  int kernel = 0;   // conv2d
  int stride = 0;   // conv2d, maxpool
  double p = 0.0;   // dropout
  int in = 0;       // dense (0 = infer)
  int out = 0;      // dense

  static LayerSpec conv2d(int filters, int kernel, int stride) {
    LayerSpec s;
    s.kind = Kind::Conv2D;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(int stride) {
    LayerSpec s;
    s.kind = Kind::MaxPool;
    s.stride = stride;
    return s;
  }
  static LayerSpec dropout(double p) {
    LayerSpec s;
    s.kind = Kind::Dropout;
    s.p = p;
    return s;
  }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = Kind::Flatten;
    return s;
  }
  static LayerSpec dense(int in, int out) {
    LayerSpec s;
    s.kind = Kind::Dense;
    s.in = in;
    s.out = out;
    return s;
  }

  void validate() const {
    switch (kind) {
      case Kind::Conv2D:
        if (filters < 1 || kernel < 1 || stride < 1) {
          throw ConfigError("conv2d: filters, kernel, stride must be >= 1");
        }
        break;
      case Kind::MaxPool:
        if (stride < 1) throw ConfigError("maxpool: stride must be >= 1");
        break;
      case Kind::Dropout:
        if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
        break;
      case Kind::Dense:
        if (in < 0 || out < 1) throw ConfigError("dense: bad width");
        break;
      default:
        break;
    }
  }

  bool operator==(const LayerSpec&) const = default;
};

// Per-layer scratch kept outside the network so that inference with frozen
// parameters can run from many threads, each with its own state.
template <typename T>
struct LayerState {
  Shape3 in_shape;
  int batch = 0;
  Tensor<T> col;                  // conv2d: im2col patches, (n, K, J)
  std::vector<std::uint8_t> relu_mask;
  std::vector<T> dropout_mask;
  std::vector<int> argmax;        // maxpool: winning flat index per output
  Tensor<T> input;                // dense: cached input
};

template <typename T>
struct NetState {
  std::vector<LayerState<T>> layers;
  Tensor<T> ping, pong;     // forward buffers
  Tensor<T> dping, dpong;   // backward buffers
  bool train_fresh = false; // set by a train-mode forward, required by backward
};

template <typename T>
struct ParamRef {
  std::vector<T>* value = nullptr;
  std::vector<T>* grad = nullptr;
};

namespace nn {

template <typename T>
struct Conv2D {
  int filters = 0, kernel = 0, stride = 0;
  Shape3 in_shape, out_shape;
  std::vector<T> w, b, gw, gb;  // w: (filters, in_c*k*k)

  void init(Shape3 in, Rng& rng) {
    in_shape = in;
    const int oh = (in.h - kernel) / stride + 1;
    const int ow = (in.w - kernel) / stride + 1;
    if (in.h < kernel || in.w < kernel) throw ConfigError("conv2d: kernel larger than input");
    out_shape = {filters, oh, ow};
    const int fan_in = in.c * kernel * kernel;
    w.resize(static_cast<std::size_t>(filters) * fan_in);
    b.assign(filters, T(0));
    gw.assign(w.size(), T(0));
    gb.assign(b.size(), T(0));
    const double limit = std::sqrt(6.0 / fan_in);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, LayerState<T>& st) const {
    const int K = in_shape.c * kernel * kernel;
    const int oh = out_shape.h, ow = out_shape.w, J = oh * ow;
    out.resize(in.n, filters, oh, ow);
    st.col.resize(in.n, 1, K, J);
    for (int bi = 0; bi < in.n; ++bi) {
      const T* x = in.sample(bi);
      T* col = st.col.sample(bi);
      // im2col: row k = (ic, ky, kx), column j = (oy, ox)
      int k = 0;
      for (int ic = 0; ic < in_shape.c; ++ic) {
        const T* plane = x + static_cast<std::size_t>(ic) * in_shape.h * in_shape.w;
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx, ++k) {
            T* row = col + static_cast<std::size_t>(k) * J;
            for (int oy = 0; oy < oh; ++oy) {
              const T* src = plane + static_cast<std::size_t>(oy * stride + ky) * in_shape.w + kx;
              T* dst = row + static_cast<std::size_t>(oy) * ow;
              for (int ox = 0; ox < ow; ++ox) dst[ox] = src[ox * stride];
            }
          }
        }
      }
      T* y = out.sample(bi);
      for (int oc = 0; oc < filters; ++oc) {
        T* row = y + static_cast<std::size_t>(oc) * J;
        std::fill(row, row + J, b[oc]);
        const T* wrow = w.data() + static_cast<std::size_t>(oc) * K;
        for (int kk = 0; kk < K; ++kk) {
          const T wv = wrow[kk];
          const T* crow = col + static_cast<std::size_t>(kk) * J;
          for (int j = 0; j < J; ++j) row[j] += wv * crow[j];
        }
      }
    }
  }

  void backward(const LayerState<T>& st, const Tensor<T>& dout, Tensor<T>& din) {
    const int K = in_shape.c * kernel * kernel;
    const int oh = out_shape.h, ow = out_shape.w, J = oh * ow;
    din.resize(dout.n, in_shape.c, in_shape.h, in_shape.w);
    din.zero();
    std::vector<T> dcol(static_cast<std::size_t>(K) * J);
    for (int bi = 0; bi < dout.n; ++bi) {
      const T* dy = dout.sample(bi);
      const T* col = st.col.sample(bi);
      for (int oc = 0; oc < filters; ++oc) {
        const T* drow = dy + static_cast<std::size_t>(oc) * J;
        T acc = T(0);
        for (int j = 0; j < J; ++j) acc += drow[j];
        gb[oc] += acc;
        T* gwrow = gw.data() + static_cast<std::size_t>(oc) * K;
        for (int kk = 0; kk < K; ++kk) {
          const T* crow = col + static_cast<std::size_t>(kk) * J;
          T s = T(0);
          for (int j = 0; j < J; ++j) s += drow[j] * crow[j];
          gwrow[kk] += s;
        }
      }
      std::fill(dcol.begin(), dcol.end(), T(0));
      for (int kk = 0; kk < K; ++kk) {
        T* dcrow = dcol.data() + static_cast<std::size_t>(kk) * J;
        for (int oc = 0; oc < filters; ++oc) {
          const T wv = w[static_cast<std::size_t>(oc) * K + kk];
          const T* drow = dy + static_cast<std::size_t>(oc) * J;
          for (int j = 0; j < J; ++j) dcrow[j] += wv * drow[j];
        }
      }
      // col2im scatter-add
      T* dx = din.sample(bi);
      int k = 0;
      for (int ic = 0; ic < in_shape.c; ++ic) {
        T* plane = dx + static_cast<std::size_t>(ic) * in_shape.h * in_shape.w;
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx, ++k) {
            const T* row = dcol.data() + static_cast<std::size_t>(k) * J;
            for (int oy = 0; oy < oh; ++oy) {
              T* dst = plane + static_cast<std::size_t>(oy * stride + ky) * in_shape.w + kx;
              const T* src = row + static_cast<std::size_t>(oy) * ow;
              for (int ox = 0; ox < ow; ++ox) dst[ox * stride] += src[ox];
            }
          }
        }
      }
    }
  }
};

template <typename T>
struct ReLU {
  Shape3 in_shape, out_shape;

  void init(Shape3 in, Rng&) { in_shape = out_shape = in; }

  void forward(const Tensor<T>& in, Tensor<T>& out, LayerState<T>& st) const {
    out.resize(in.n, in.c, in.h, in.w);
    st.relu_mask.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const bool pos = in.data[i] > T(0);
      st.relu_mask[i] = pos;
      out.data[i] = pos ? in.data[i] : T(0);
    }
  }

  void backward(const LayerState<T>& st, const Tensor<T>& dout, Tensor<T>& din) {
    din.resize(dout.n, in_shape.c, in_shape.h, in_shape.w);
    for (std::size_t i = 0; i < dout.size(); ++i) {
      din.data[i] = st.relu_mask[i] ? dout.data[i] : T(0);
    }
  }
};

// Window and stride are both `stride`; a partial window at the bottom/right
// edge still produces an output (ceil semantics), so small inputs survive.
template <typename T>
struct MaxPool {
  int stride = 0;
  Shape3 in_shape, out_shape;

  void init(Shape3 in, Rng&) {
    in_shape = in;
    out_shape = {in.c, (in.h + stride - 1) / stride, (in.w + stride - 1) / stride};
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, LayerState<T>& st) const {
    const int oh = out_shape.h, ow = out_shape.w;
    out.resize(in.n, in.c, oh, ow);
    st.argmax.resize(out.size());
    std::size_t oi = 0;
    for (int bi = 0; bi < in.n; ++bi) {
      for (int c = 0; c < in.c; ++c) {
        const T* plane = in.sample(bi) + static_cast<std::size_t>(c) * in_shape.h * in_shape.w;
        for (int oy = 0; oy < oh; ++oy) {
          const int y1 = std::min(oy * stride + stride, in_shape.h);
          for (int ox = 0; ox < ow; ++ox, ++oi) {
            const int x1 = std::min(ox * stride + stride, in_shape.w);
            T best = plane[static_cast<std::size_t>(oy * stride) * in_shape.w + ox * stride];
            int best_idx = oy * stride * in_shape.w + ox * stride;
            for (int y = oy * stride; y < y1; ++y) {
              for (int x = ox * stride; x < x1; ++x) {
                const T v = plane[static_cast<std::size_t>(y) * in_shape.w + x];
                if (v > best) {
                  best = v;
                  best_idx = y * in_shape.w + x;
                }
              }
            }
            out.data[oi] = best;
            st.argmax[oi] = best_idx;
          }
        }
      }
    }
  }

  void backward(const LayerState<T>& st, const Tensor<T>& dout, Tensor<T>& din) {
    din.resize(dout.n, in_shape.c, in_shape.h, in_shape.w);
    din.zero();
    const int plane_in = in_shape.h * in_shape.w;
    std::size_t oi = 0;
    for (int bi = 0; bi < dout.n; ++bi) {
      for (int c = 0; c < in_shape.c; ++c) {
        T* dplane = din.sample(bi) + static_cast<std::size_t>(c) * plane_in;
        const std::size_t n_out = static_cast<std::size_t>(out_shape.h) * out_shape.w;
        for (std::size_t j = 0; j < n_out; ++j, ++oi) {
          dplane[st.argmax[oi]] += dout.data[oi];
        }
      }
    }
  }
};

// Inverted dropout: kept activations are scaled by 1/(1-p) at train time so
// eval mode is the identity.
template <typename T>
struct Dropout {
  double p = 0.0;
  Shape3 in_shape, out_shape;

  void init(Shape3 in, Rng&) { in_shape = out_shape = in; }

  void forward(const Tensor<T>& in, Tensor<T>& out, LayerState<T>& st, bool train,
               Rng& rng) const {
    out.resize(in.n, in.c, in.h, in.w);
    if (!train || p == 0.0) {
      out.data = in.data;
      st.dropout_mask.assign(in.size(), T(1));
      return;
    }
    st.dropout_mask.resize(in.size());
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < in.size(); ++i) {
      const T m = rng.bernoulli(p) ? T(0) : scale;
      st.dropout_mask[i] = m;
      out.data[i] = in.data[i] * m;
    }
  }

  void backward(const LayerState<T>& st, const Tensor<T>& dout, Tensor<T>& din) {
    din.resize(dout.n, in_shape.c, in_shape.h, in_shape.w);
    for (std::size_t i = 0; i < dout.size(); ++i) {
      din.data[i] = dout.data[i] * st.dropout_mask[i];
    }
  }
};

template <typename T>
struct Flatten {
  Shape3 in_shape, out_shape;

  void init(Shape3 in, Rng&) {
    in_shape = in;
    out_shape = {in.features(), 1, 1};
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, LayerState<T>&) const {
    out.resize(in.n, out_shape.c, 1, 1);
    out.data = in.data;  // same memory layout, new shape
  }

  void backward(const LayerState<T>&, const Tensor<T>& dout, Tensor<T>& din) {
    din.resize(dout.n, in_shape.c, in_shape.h, in_shape.w);
    din.data = dout.data;
  }
};

template <typename T>
struct Dense {
  int in_f = 0, out_f = 0;
  Shape3 in_shape, out_shape;
  std::vector<T> w, b, gw, gb;  // w: (out_f, in_f)

  void init(Shape3 in, Rng& rng) {
    in_shape = in;
    if (in.features() != in_f) throw ConfigError("dense: input width mismatch");
    out_shape = {out_f, 1, 1};
    w.resize(static_cast<std::size_t>(out_f) * in_f);
    b.assign(out_f, T(0));
    gw.assign(w.size(), T(0));
    gb.assign(b.size(), T(0));
    const double limit = std::sqrt(6.0 / in_f);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, LayerState<T>& st) const {
    out.resize(in.n, out_f, 1, 1);
    st.input = in;
    for (int bi = 0; bi < in.n; ++bi) {
      const T* x = in.sample(bi);
      T* y = out.sample(bi);
      for (int o = 0; o < out_f; ++o) {
        const T* wrow = w.data() + static_cast<std::size_t>(o) * in_f;
        T acc = b[o];
        for (int i = 0; i < in_f; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
      }
    }
  }

  void backward(const LayerState<T>& st, const Tensor<T>& dout, Tensor<T>& din) {
    din.resize(dout.n, in_shape.c, in_shape.h, in_shape.w);
    din.zero();
    for (int bi = 0; bi < dout.n; ++bi) {
      const T* dy = dout.sample(bi);
      const T* x = st.input.sample(bi);
      T* dx = din.sample(bi);
      for (int o = 0; o < out_f; ++o) {
        const T d = dy[o];
        gb[o] += d;
        T* gwrow = gw.data() + static_cast<std::size_t>(o) * in_f;
        const T* wrow = w.data() + static_cast<std::size_t>(o) * in_f;
        for (int i = 0; i < in_f; ++i) {
          gwrow[i] += d * x[i];
          dx[i] += d * wrow[i];
        }
      }
    }
  }
};

}  // namespace nn

// Sequential network. Parameters (and the dropout RNG) live here; activations
// live in a caller-owned NetState, so inference with frozen parameters is
// safe from many threads at once while training needs exclusive access.
template <typename T>
class Net {
 public:
  using Layer = std::variant<nn::Conv2D<T>, nn::ReLU<T>, nn::MaxPool<T>, nn::Dropout<T>,
                             nn::Flatten<T>, nn::Dense<T>>;

  Net() = default;

  Net(std::vector<LayerSpec> specs, Shape3 input, std::uint64_t init_seed)
      : specs_(std::move(specs)), input_shape_(input), dropout_rng_(derive_seed(init_seed, 0x6d61736bULL)) {
    Rng init_rng(derive_seed(init_seed, 0x696e6974ULL));
    Shape3 shape = input;
    for (auto& spec : specs_) {
      spec.validate();
      switch (spec.kind) {
        case LayerSpec::Kind::Conv2D: {
          nn::Conv2D<T> l;
          l.filters = spec.filters;
          l.kernel = spec.kernel;
          l.stride = spec.stride;
          l.init(shape, init_rng);
          shape = l.out_shape;
          layers_.push_back(std::move(l));
          break;
        }
        case LayerSpec::Kind::ReLU: {
          nn::ReLU<T> l;
          l.init(shape, init_rng);
          layers_.push_back(std::move(l));
          break;
        }
        case LayerSpec::Kind::MaxPool: {
          nn::MaxPool<T> l;
          l.stride = spec.stride;
          l.init(shape, init_rng);
          shape = l.out_shape;
          layers_.push_back(std::move(l));
          break;
        }
        case LayerSpec::Kind::Dropout: {
          nn::Dropout<T> l;
          l.p = spec.p;
          l.init(shape, init_rng);
          layers_.push_back(std::move(l));
          break;
        }
        case LayerSpec::Kind::Flatten: {
          nn::Flatten<T> l;
          l.init(shape, init_rng);
          shape = l.out_shape;
          layers_.push_back(std::move(l));
          break;
        }
        case LayerSpec::Kind::Dense: {
          nn::Dense<T> l;
          l.in_f = spec.in == 0 ? shape.features() : spec.in;
          l.out_f = spec.out;
          spec.in = l.in_f;  // record the resolved width
          l.init(shape, init_rng);
          shape = l.out_shape;
          layers_.push_back(std::move(l));
          break;
        }
      }
    }
    output_shape_ = shape;
  }

  const Shape3& input_shape() const { return input_shape_; }
  const Shape3& output_shape() const { return output_shape_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  Rng& dropout_rng() { return dropout_rng_; }

  // Runs the batch through every layer; the returned reference points into
  // `state` and stays valid until the next forward with that state.
  const Tensor<T>& forward(const Tensor<T>& in, NetState<T>& state, bool train) const {
    if (Shape3{in.c, in.h, in.w} != input_shape_) {
      throw ShapeError("Net::forward: input shape mismatch");
    }
    state.layers.resize(layers_.size());
    const Tensor<T>* cur = &in;
    Tensor<T>* bufs[2] = {&state.ping, &state.pong};
    int which = 0;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      Tensor<T>& out = *bufs[which];
      LayerState<T>& st = state.layers[li];
      st.in_shape = {cur->c, cur->h, cur->w};
      st.batch = cur->n;
      std::visit(
          [&](auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, nn::Dropout<T>>) {
              layer.forward(*cur, out, st, train, const_cast<Net*>(this)->dropout_rng_);
            } else {
              layer.forward(*cur, out, st);
            }
          },
          layers_[li]);
      cur = &out;
      which ^= 1;
    }
    state.train_fresh = train;
    return *cur;
  }

  // Accumulates parameter gradients from a loss gradient at the output.
  // Requires the state of a train-mode forward (the dropout masks must be the
  // ones the loss saw).
  void backward(NetState<T>& state, const Tensor<T>& dout, Tensor<T>* din_out = nullptr) {
    if (!state.train_fresh) {
      throw StateError("Net::backward: state is not from a train-mode forward");
    }
    if (state.layers.size() != layers_.size()) {
      throw StateError("Net::backward: state/layer count mismatch");
    }
    const Tensor<T>* cur = &dout;
    Tensor<T>* bufs[2] = {&state.dping, &state.dpong};
    int which = 0;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      Tensor<T>& din = *bufs[which];
      std::visit([&](auto& layer) { layer.backward(state.layers[li], *cur, din); },
                 layers_[li]);
      cur = &din;
      which ^= 1;
    }
    if (din_out) *din_out = *cur;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (auto& layer : layers_) {
      std::visit(
          [&](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, nn::Conv2D<T>> || std::is_same_v<L, nn::Dense<T>>) {
              out.push_back({&l.w, &l.gw});
              out.push_back({&l.b, &l.gb});
            }
          },
          layer);
    }
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (const auto& ref : params()) n += ref.value->size();
    return n;
  }

  void zero_grads() {
    for (auto& ref : params()) std::fill(ref.grad->begin(), ref.grad->end(), T(0));
  }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<Layer> layers_;
  Shape3 input_shape_, output_shape_;
  Rng dropout_rng_{0};
};

template <typename T>
bool bitwise_equal(Net<T>& a, Net<T>& b) {
  auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value->size() != pb[i].value->size()) return false;
    if (std::memcmp(pa[i].value->data(), pb[i].value->data(),
                    pa[i].value->size() * sizeof(T)) != 0) {
      return false;
    }
  }
  return true;
}

// Row-wise stable softmax. Throws on non-finite logits.
template <typename T>
void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs) {
  probs.resize(logits.n, logits.c, 1, 1);
  const int k = logits.features();
  for (int bi = 0; bi < logits.n; ++bi) {
    const T* z = logits.sample(bi);
    T* p = probs.sample(bi);
    T zmax = z[0];
    for (int i = 0; i < k; ++i) {
      if (!std::isfinite(static_cast<double>(z[i]))) {
        throw NumericError("softmax: non-finite logit");
      }
      zmax = std::max(zmax, z[i]);
    }
    T sum = T(0);
    for (int i = 0; i < k; ++i) {
      p[i] = std::exp(z[i] - zmax);
      sum += p[i];
    }
    for (int i = 0; i < k; ++i) p[i] /= sum;
  }
}

// Mean cross-entropy over the batch. dlogits = (softmax - one_hot) / n.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tensor<std::type_identity_t<T>>* probs_out = nullptr,
                        Tensor<std::type_identity_t<T>>* dlogits_out = nullptr) {
  if (static_cast<int>(labels.size()) != logits.n) {
    throw ShapeError("softmax_cross_entropy: batch/label count mismatch");
  }
  const int k = logits.features();
  Tensor<T> local;
  Tensor<T>& probs = probs_out ? *probs_out : local;
  softmax_rows(logits, probs);
  T loss = T(0);
  for (int bi = 0; bi < logits.n; ++bi) {
    const int label = labels[static_cast<std::size_t>(bi)];
    if (label < 0 || label >= k) throw ConfigError("softmax_cross_entropy: label out of range");
    const T p = probs.sample(bi)[label];
    loss -= std::log(std::max(p, std::numeric_limits<T>::min()));
  }
  loss /= static_cast<T>(logits.n);
  if (dlogits_out) {
    dlogits_out->resize(logits.n, logits.c, 1, 1);
    const T inv_n = T(1) / static_cast<T>(logits.n);
    for (int bi = 0; bi < logits.n; ++bi) {
      const T* p = probs.sample(bi);
      T* d = dlogits_out->sample(bi);
      const int label = labels[static_cast<std::size_t>(bi)];
      for (int i = 0; i < k; ++i) d[i] = (p[i] - (i == label ? T(1) : T(0))) * inv_n;
    }
  }
  return loss;
}

// Adaptive-moment optimizer over a fixed set of parameter arrays. step()
// applies the update and zeroes the gradients.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ParamRef<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].value->size(), 0.0);
      v_[i].assign(params_[i].value->size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = *params_[i].value;
      auto& grad = *params_[i].grad;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
      std::fill(grad.begin(), grad.end(), T(0));
    }
  }

  long long t() const { return t_; }
  double learning_rate() const { return lr_; }

  // Point the optimizer at a different (but identically shaped) parameter set,
  // e.g. after the owning network was copied.
  void rebind(std::vector<ParamRef<T>> params) {
    if (params.size() != params_.size()) throw DataError("Adam::rebind: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].value->size() != m_[i].size()) {
        throw DataError("Adam::rebind: parameter size mismatch");
      }
    }
    params_ = std::move(params);
  }

  void save(std::ostream& os) const {
    const std::uint64_t tt = static_cast<std::uint64_t>(t_);
    os.write(reinterpret_cast<const char*>(&tt), sizeof tt);
    auto dump = [&os](const std::vector<double>& a) {
      const std::uint64_t n = a.size();
      os.write(reinterpret_cast<const char*>(&n), sizeof n);
      os.write(reinterpret_cast<const char*>(a.data()),
               static_cast<std::streamsize>(a.size() * sizeof(double)));
    };
    for (const auto& a : m_) dump(a);
    for (const auto& a : v_) dump(a);
  }

  void load(std::istream& is) {
    std::uint64_t tt = 0;
    is.read(reinterpret_cast<char*>(&tt), sizeof tt);
    t_ = static_cast<long long>(tt);
    auto slurp = [&is](std::vector<double>& a) {
      std::uint64_t n = 0;
      is.read(reinterpret_cast<char*>(&n), sizeof n);
      if (n != a.size()) throw DataError("Adam::load: moment size mismatch");
      is.read(reinterpret_cast<char*>(a.data()),
              static_cast<std::streamsize>(a.size() * sizeof(double)));
    };
    for (auto& a : m_) slurp(a);
    for (auto& a : v_) slurp(a);
    if (!is) throw DataError("Adam::load: truncated stream");
  }

 private:
  std::vector<ParamRef<T>> params_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

// ---- checkpoint serialization ----------------------------------------------
// Layout: magic, version, input shape, layer specs, dropout RNG state,
// parameter arrays as IEEE double bits in layer order. Double bits make the
// file independent of the in-memory scalar type (float widens exactly).

namespace detail {
inline constexpr std::uint32_t kNetMagic = 0x7441634eu;  // "NcAt"
inline constexpr std::uint32_t kNetVersion = 1;

template <typename V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("checkpoint: truncated stream");
  return v;
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  if (n > (1u << 20)) throw DataError("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint: truncated stream");
  return s;
}
}  // namespace detail

template <typename T>
void save_net(Net<T>& net, std::ostream& os) {
  using namespace detail;
  write_pod(os, kNetMagic);
  write_pod(os, kNetVersion);
  write_pod<std::int32_t>(os, net.input_shape().c);
  write_pod<std::int32_t>(os, net.input_shape().h);
  write_pod<std::int32_t>(os, net.input_shape().w);
  write_pod<std::uint64_t>(os, net.specs().size());
  for (const LayerSpec& s : net.specs()) {
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
    write_pod<std::int32_t>(os, s.filters);
    write_pod<std::int32_t>(os, s.kernel);
    write_pod<std::int32_t>(os, s.stride);
    write_pod<double>(os, s.p);
    write_pod<std::int32_t>(os, s.in);
    write_pod<std::int32_t>(os, s.out);
  }
  write_string(os, net.dropout_rng().serialize());
  for (const auto& ref : net.params()) {
    write_pod<std::uint64_t>(os, ref.value->size());
    for (const T v : *ref.value) {
      const double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      write_pod(os, bits);
    }
  }
}

template <typename T>
Net<T> load_net(std::istream& is) {
  using namespace detail;
  if (read_pod<std::uint32_t>(is) != kNetMagic) throw DataError("checkpoint: bad magic");
  if (read_pod<std::uint32_t>(is) != kNetVersion) throw DataError("checkpoint: unknown version");
  Shape3 input;
  input.c = read_pod<std::int32_t>(is);
  input.h = read_pod<std::int32_t>(is);
  input.w = read_pod<std::int32_t>(is);
  const auto n_specs = read_pod<std::uint64_t>(is);
  if (n_specs > 1024) throw DataError("checkpoint: implausible layer count");
  std::vector<LayerSpec> specs(n_specs);
  for (auto& s : specs) {
    s.kind = static_cast<LayerSpec::Kind>(read_pod<std::uint8_t>(is));
    s.filters = read_pod<std::int32_t>(is);
    s.kernel = read_pod<std::int32_t>(is);
    s.stride = read_pod<std::int32_t>(is);
    s.p = read_pod<double>(is);
    s.in = read_pod<std::int32_t>(is);
    s.out = read_pod<std::int32_t>(is);
  }
  const std::string rng_state = read_string(is);
  Net<T> net(std::move(specs), input, 0);
  net.dropout_rng().deserialize(rng_state);
  for (const auto& ref : net.params()) {
    const auto n = read_pod<std::uint64_t>(is);
    if (n != ref.value->size()) throw DataError("checkpoint: parameter size mismatch");
    for (auto& v : *ref.value) {
      const auto bits = read_pod<std::uint64_t>(is);
      double d;
      std::memcpy(&d, &bits, sizeof d);
      v = static_cast<T>(d);
    }
  }
  return net;
}

}  // namespace tact
