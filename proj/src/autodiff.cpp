// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace geopatch {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace geopatch

namespace geopatch::ad {

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  // Independent partial sums so the compiler can vectorize without
  // reassociating; the summation order is fixed, hence deterministic.
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_string(a) + " vs " + shape_string(b));
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_string(s));
  }
}

template <typename T, typename Fn, typename Grad>
Var<T> unary_elementwise(Var<T> x, Fn&& forward, Grad local_grad) {
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  const auto xid = x.id();
  return x.tape().record(std::move(out), {xid}, [xid, local_grad](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    const auto& in = tape.value(xid);
    const auto& out = tape.value(self);
    auto& gx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * local_grad(in[i], out[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- Tape

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw std::logic_error("tape: input node recorded on another tape");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
std::vector<T>& Tape<T>::grad_buffer(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.size(), T{0});
  return node.grad;
}

template <typename T>
const std::vector<T>& Tape<T>::grad(std::size_t id) {
  return grad_buffer(id);
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw std::logic_error("backward: loss belongs to a different tape");
  if (backward_done_) throw std::logic_error("backward: tape already consumed; reset() before reuse");
  auto& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(root.value.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_buffer(loss.id())[0] = T{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------- conv

namespace {

struct ConvGeometry {
  std::size_t out_h, out_w;
  long pad_top, pad_left;
};

ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
                           Padding padding) {
  ConvGeometry g{};
  if (padding == Padding::valid) {
    if (kh > h || kw > w) {
      throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " exceeds input " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
    g.out_h = (h - kh) / stride + 1;
    g.out_w = (w - kw) / stride + 1;
    g.pad_top = g.pad_left = 0;
  } else {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const long pad_h = std::max<long>(static_cast<long>((g.out_h - 1) * stride + kh) - static_cast<long>(h), 0);
    const long pad_w = std::max<long>(static_cast<long>((g.out_w - 1) * stride + kw) - static_cast<long>(w), 0);
    if (static_cast<long>(kh) > static_cast<long>(h) + pad_h || static_cast<long>(kw) > static_cast<long>(w) + pad_w) {
      throw ShapeError("conv2d: kernel exceeds padded input");
    }
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, int stride, Padding padding) {
  const auto& in = input.value();
  const auto& k = kernel.value();
  require_rank(in.shape(), 3, "conv2d", "input");
  require_rank(k.shape(), 4, "conv2d", "kernel");
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  const std::size_t h = in.dim(0), w = in.dim(1), ci = in.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  if (k.dim(2) != ci) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.dim(2)) + " input channels, input has " +
                     std::to_string(ci));
  }
  const auto s = static_cast<std::size_t>(stride);
  const auto geo = conv_geometry(h, w, kh, kw, s, padding);

  Tensor<T> out({geo.out_h, geo.out_w, co});
  const T* ip = in.data().data();
  const T* kp = k.data().data();
  T* op = out.data().data();
  for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
    for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
      T* o = op + (oy * geo.out_w + ox) * co;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * s + ky) - geo.pad_top;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * s + kx) - geo.pad_left;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const T* px = ip + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * ci;
          const T* kk = kp + (ky * kw + kx) * ci * co;
          for (std::size_t c = 0; c < ci; ++c) axpy(px[c], kk + c * co, o, co);
        }
      }
    }
  }

  const auto iid = input.id(), kid = kernel.id();
  return input.tape().record(std::move(out), {iid, kid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    const T* ip = tape.value(iid).data().data();
    const T* kp = tape.value(kid).data().data();
    T* gi = tape.requires_grad(iid) ? tape.grad_buffer(iid).data() : nullptr;
    T* gk = tape.requires_grad(kid) ? tape.grad_buffer(kid).data() : nullptr;
    // [kh, kw, Cout, Cin] copy so the input gradient is an axpy over Cin.
    std::vector<T> kt;
    if (gi && ci >= co) {
      kt.resize(kh * kw * ci * co);
      for (std::size_t t = 0; t < kh * kw; ++t)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t o = 0; o < co; ++o) kt[(t * co + o) * ci + c] = kp[(t * ci + c) * co + o];
    }
    for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
        const T* go = g.data() + (oy * geo.out_w + ox) * co;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * s + ky) - geo.pad_top;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * s + kx) - geo.pad_left;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t pix = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * ci;
            const std::size_t kof = (ky * kw + kx) * ci * co;
            if (gi) {
              if (ci >= co) {
                const T* ktp = kt.data() + kof;
                for (std::size_t o = 0; o < co; ++o) axpy(go[o], ktp + o * ci, gi + pix, ci);
              } else {
                for (std::size_t c = 0; c < ci; ++c) gi[pix + c] += dot(go, kp + kof + c * co, co);
              }
            }
            if (gk) {
              for (std::size_t c = 0; c < ci; ++c) axpy(ip[pix + c], go, gk + kof + c * co, co);
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> add_channel_bias(Var<T> input, Var<T> bias) {
  const auto& in = input.value();
  const auto& b = bias.value();
  const std::size_t c = in.shape().back();
  if (b.size() != c || b.rank() != 1) {
    throw ShapeError("add_channel_bias: bias " + shape_string(b.shape()) + " does not match channels of " +
                     shape_string(in.shape()));
  }
  Tensor<T> out = in;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  const auto iid = input.id(), bid = bias.id();
  return input.tape().record(std::move(out), {iid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    if (tape.requires_grad(iid)) {
      auto& gi = tape.grad_buffer(iid);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (tape.requires_grad(bid)) {
      auto& gb = tape.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    }
  });
}

template <typename T>
Var<T> maxpool2(Var<T> input) {
  const auto& in = input.value();
  require_rank(in.shape(), 3, "maxpool2", "input");
  const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents must be even, got " + shape_string(in.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({oh, ow, c});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * y) * w + 2 * x) * c + ch;
        const std::size_t candidates[3] = {((2 * y) * w + 2 * x + 1) * c + ch, ((2 * y + 1) * w + 2 * x) * c + ch,
                                           ((2 * y + 1) * w + 2 * x + 1) * c + ch};
        for (auto idx : candidates) {
          if (in[idx] > in[best]) best = idx;
        }
        const std::size_t o = (y * ow + x) * c + ch;
        out[o] = in[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const auto iid = input.id();
  return input.tape().record(std::move(out), {iid}, [iid, argmax](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    auto& gi = tape.grad_buffer(iid);
    for (std::size_t i = 0; i < g.size(); ++i) gi[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias) {
  const auto& x = input.value();
  const auto& wt = weights.value();
  const auto& b = bias.value();
  require_rank(x.shape(), 1, "dense", "input");
  require_rank(wt.shape(), 2, "dense", "weights");
  require_rank(b.shape(), 1, "dense", "bias");
  const std::size_t n = x.dim(0), m = wt.dim(1);
  if (wt.dim(0) != n || b.dim(0) != m) {
    throw ShapeError("dense: input " + shape_string(x.shape()) + ", weights " + shape_string(wt.shape()) +
                     ", bias " + shape_string(b.shape()) + " are inconsistent");
  }
  Tensor<T> out = b;
  for (std::size_t i = 0; i < n; ++i) axpy(x[i], wt.data().data() + i * m, out.data().data(), m);
  const auto xid = input.id(), wid = weights.id(), bid = bias.id();
  return input.tape().record(std::move(out), {xid, wid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    const T* wp = tape.value(wid).data().data();
    const T* xp = tape.value(xid).data().data();
    if (tape.requires_grad(xid)) {
      auto& gx = tape.grad_buffer(xid);
      for (std::size_t i = 0; i < n; ++i) gx[i] += dot(g.data(), wp + i * m, m);
    }
    if (tape.requires_grad(wid)) {
      T* gw = tape.grad_buffer(wid).data();
      for (std::size_t i = 0; i < n; ++i) axpy(xp[i], g.data(), gw + i * m, m);
    }
    if (tape.requires_grad(bid)) {
      auto& gb = tape.grad_buffer(bid);
      for (std::size_t j = 0; j < m; ++j) gb[j] += g[j];
    }
  });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> relu(Var<T> x) {
  return unary_elementwise<T>(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T in, T) { return in > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> clamp01(Var<T> x) {
  return unary_elementwise<T>(
      x, [](T v) { return std::clamp(v, T{0}, T{1}); },
      [](T in, T) { return (in > T{0} && in < T{1}) ? T{1} : T{0}; });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary_elementwise<T>(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {aid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    for (auto id : {aid, bid}) {
      if (!tape.requires_grad(id)) continue;
      auto& gx = tape.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {aid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    if (tape.requires_grad(aid)) {
      auto& ga = tape.grad_buffer(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tape.requires_grad(bid)) {
      auto& gb = tape.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {aid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    const auto& av = tape.value(aid);
    const auto& bv = tape.value(bid);
    // a * a records the same id twice; both contributions accumulate.
    if (tape.requires_grad(aid)) {
      auto& ga = tape.grad_buffer(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(bid)) {
      auto& gb = tape.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const auto& v = x.value();
  T total{0};
  for (std::size_t i = 0; i < v.size(); ++i) total += v[i];
  const auto xid = x.id();
  return x.tape().record(Tensor<T>({1}, std::vector<T>{total}), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    const T g = tape.incoming(self)[0];
    auto& gx = tape.grad_buffer(xid);
    for (auto& e : gx) e += g;
  });
}

template <typename T>
Var<T> weighted_sum(Var<T> x, std::vector<T> weights) {
  const auto& v = x.value();
  if (weights.size() != v.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " + std::to_string(v.size()) +
                     " elements");
  }
  T total{0};
  for (std::size_t i = 0; i < v.size(); ++i) total += v[i] * weights[i];
  const auto xid = x.id();
  auto w = std::make_shared<const std::vector<T>>(std::move(weights));
  return x.tape().record(Tensor<T>({1}, std::vector<T>{total}), {xid}, [xid, w](Tape<T>& tape, std::size_t self) {
    const T g = tape.incoming(self)[0];
    auto& gx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*w)[i];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor<T> out(std::move(shape), x.value().storage());
  const auto xid = x.id();
  return x.tape().record(std::move(out), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    auto& gx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> gather(Var<T> src, std::shared_ptr<const std::vector<std::uint32_t>> index, Shape out_shape) {
  const auto& v = src.value();
  if (shape_size(out_shape) != index->size()) throw ShapeError("gather: index length does not match output shape");
  Tensor<T> out(std::move(out_shape));
  for (std::size_t i = 0; i < index->size(); ++i) {
    const auto j = (*index)[i];
    if (j >= v.size()) throw ShapeError("gather: index out of range");
    out[i] = v[j];
  }
  const auto sid = src.id();
  return src.tape().record(std::move(out), {sid}, [sid, index](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    auto& gs = tape.grad_buffer(sid);
    for (std::size_t i = 0; i < g.size(); ++i) gs[(*index)[i]] += g[i];
  });
}

template <typename T>
Var<T> paste(Var<T> base, Var<T> patch, int top, int left) {
  const auto& bv = base.value();
  const auto& pv = patch.value();
  require_rank(bv.shape(), 3, "paste", "base");
  require_rank(pv.shape(), 3, "paste", "patch");
  if (bv.dim(2) != pv.dim(2)) throw ShapeError("paste: channel counts differ");
  const long h = static_cast<long>(bv.dim(0)), w = static_cast<long>(bv.dim(1));
  const long ph = static_cast<long>(pv.dim(0)), pw = static_cast<long>(pv.dim(1));
  const std::size_t c = bv.dim(2);
  const long y0 = std::max<long>(top, 0), y1 = std::min<long>(top + ph, h);
  const long x0 = std::max<long>(left, 0), x1 = std::min<long>(left + pw, w);
  Tensor<T> out = bv;
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        out.at(y, x, ch) = pv.at(y - top, x - left, ch);
      }
    }
  }
  const auto bid = base.id(), pid = patch.id();
  return base.tape().record(std::move(out), {bid, pid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.incoming(self);
    const auto inside = [&](long y, long x) { return y >= y0 && y < y1 && x >= x0 && x < x1; };
    if (tape.requires_grad(bid)) {
      auto& gb = tape.grad_buffer(bid);
      for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
          if (inside(y, x)) continue;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const auto i = (static_cast<std::size_t>(y) * w + x) * c + ch;
            gb[i] += g[i];
          }
        }
      }
    }
    if (tape.requires_grad(pid)) {
      auto& gp = tape.grad_buffer(pid);
      for (long y = y0; y < y1; ++y) {
        for (long x = x0; x < x1; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            gp[(static_cast<std::size_t>(y - top) * pw + (x - left)) * c + ch] +=
                g[(static_cast<std::size_t>(y) * w + x) * c + ch];
          }
        }
      }
    }
  });
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const T mx = *std::max_element(p.begin(), p.end());
  T total{0};
  for (auto& v : p) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, int label) {
  const auto& z = logits.value();
  require_rank(z.shape(), 1, "softmax_cross_entropy", "logits");
  if (label < 0 || static_cast<std::size_t>(label) >= z.size()) {
    throw UsageError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(z.size()) + ")");
  }
  for (auto v : z.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax_cross_entropy: non-finite logit");
  }
  const T mx = *std::max_element(z.data().begin(), z.data().end());
  T total{0};
  for (auto v : z.data()) total += std::exp(v - mx);
  const T loss = std::log(total) - (z[static_cast<std::size_t>(label)] - mx);
  const auto zid = logits.id();
  return logits.tape().record(Tensor<T>({1}, std::vector<T>{loss}), {zid},
                              [zid, label](Tape<T>& tape, std::size_t self) {
                                const T g = tape.incoming(self)[0];
                                auto p = softmax<T>(tape.value(zid).data());
                                p[static_cast<std::size_t>(label)] -= T{1};
                                auto& gz = tape.grad_buffer(zid);
                                for (std::size_t i = 0; i < p.size(); ++i) gz[i] += g * p[i];
                              });
}

// ---------------------------------------------------------------- checks

FiniteDiffReport finite_diff_check(const std::function<Var<double>(Tape<double>&, Var<double>)>& f,
                                   const Tensor<double>& at, double step, double floor) {
  std::vector<double> analytic;
  {
    Tape<double> tape;
    auto x = tape.leaf(at, true);
    auto y = f(tape, x);
    tape.backward(y);
    analytic = x.grad();
  }
  const auto eval = [&](const Tensor<double>& point) {
    Tape<double> tape;
    auto x = tape.leaf(point, false);
    return f(tape, x).value()[0];
  };
  FiniteDiffReport report;
  report.coordinates = at.size();
  Tensor<double> probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + step;
    const double up = eval(probe);
    probe[i] = at[i] - step;
    const double down = eval(probe);
    probe[i] = at[i];
    const double numeric = (up - down) / (2.0 * step);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double rel_err = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error || i == 0) {
      report.max_rel_error = std::max(report.max_rel_error, rel_err);
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

#define GEOPATCH_INSTANTIATE(T)                                                                    \
  template class Tape<T>;                                                                          \
  template Var<T> conv2d<T>(Var<T>, Var<T>, int, Padding);                                         \
  template Var<T> add_channel_bias<T>(Var<T>, Var<T>);                                             \
  template Var<T> maxpool2<T>(Var<T>);                                                             \
  template Var<T> dense<T>(Var<T>, Var<T>, Var<T>);                                                \
  template Var<T> relu<T>(Var<T>);                                                                 \
  template Var<T> clamp01<T>(Var<T>);                                                              \
  template Var<T> add<T>(Var<T>, Var<T>);                                                          \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                          \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                          \
  template Var<T> scale<T>(Var<T>, T);                                                             \
  template Var<T> sum<T>(Var<T>);                                                                  \
  template Var<T> weighted_sum<T>(Var<T>, std::vector<T>);                                         \
  template Var<T> reshape<T>(Var<T>, Shape);                                                       \
  template Var<T> gather<T>(Var<T>, std::shared_ptr<const std::vector<std::uint32_t>>, Shape);     \
  template Var<T> paste<T>(Var<T>, Var<T>, int, int);                                              \
  template Var<T> softmax_cross_entropy<T>(Var<T>, int);                                           \
  template std::vector<T> softmax<T>(std::span<const T>);

GEOPATCH_INSTANTIATE(float)
GEOPATCH_INSTANTIATE(double)

#undef GEOPATCH_INSTANTIATE

}  // namespace geopatch::ad
