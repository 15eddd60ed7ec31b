#include "uraft/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "uraft/error.hpp"
#include "uraft/kernels.hpp"

namespace uraft::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Var<T>* v : inputs) {
    if (*v && (*v)->requires_grad) return true;
  }
  return false;
}

template <typename T>
Var<T> make_node(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

// Attaches inputs and a backward closure when any input needs a gradient.
template <typename T, typename Fn>
Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Fn&& fn) {
  auto node = make_node(std::move(value));
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.assign(inputs.begin(), inputs.end());
    node->backward_fn = std::forward<Fn>(fn);
  }
  return node;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(op) + ": shape (" + std::to_string(a.c) + "," +
                            std::to_string(a.h) + "," + std::to_string(a.w) + ") vs (" +
                            std::to_string(b.c) + "," + std::to_string(b.h) + "," +
                            std::to_string(b.w) + ")");
  }
}

template <typename T>
bool wants(const Var<T>& v) {
  return v && v->requires_grad;
}

// Bilinear sample of a single plane with border clamping; optionally returns
// the partial derivatives with respect to the sample position.
template <typename T>
struct Tap {
  int x0, y0, dx, dy;
  T ax, ay;
  bool inside_x, inside_y;
};

template <typename T>
Tap<T> make_tap(T px, T py, int width, int height) {
  Tap<T> t;
  const T xmax = T(width - 1);
  const T ymax = T(height - 1);
  t.inside_x = px >= T(0) && px <= xmax;
  t.inside_y = py >= T(0) && py <= ymax;
  const T sx = std::clamp(px, T(0), xmax);
  const T sy = std::clamp(py, T(0), ymax);
  t.x0 = std::min(static_cast<int>(sx), std::max(width - 2, 0));
  t.y0 = std::min(static_cast<int>(sy), std::max(height - 2, 0));
  t.ax = sx - T(t.x0);
  t.ay = sy - T(t.y0);
  t.dx = width > 1 ? 1 : 0;
  t.dy = height > 1 ? width : 0;
  return t;
}

template <typename T>
T sample(const T* plane, int width, const Tap<T>& t) {
  const T* p = plane + static_cast<std::ptrdiff_t>(t.y0) * width + t.x0;
  const T top = (T(1) - t.ax) * p[0] + t.ax * p[t.dx];
  const T bot = (T(1) - t.ax) * p[t.dy] + t.ax * p[t.dy + t.dx];
  return (T(1) - t.ay) * top + t.ay * bot;
}

template <typename T>
void scatter(T* plane, int width, const Tap<T>& t, T g) {
  T* p = plane + static_cast<std::ptrdiff_t>(t.y0) * width + t.x0;
  p[0] += (T(1) - t.ax) * (T(1) - t.ay) * g;
  p[t.dx] += t.ax * (T(1) - t.ay) * g;
  p[t.dy] += (T(1) - t.ax) * t.ay * g;
  p[t.dy + t.dx] += t.ax * t.ay * g;
}

// d sample / d (px, py); zero along an axis whose coordinate was clamped.
template <typename T>
void sample_grad(const T* plane, int width, const Tap<T>& t, T& gx, T& gy) {
  const T* p = plane + static_cast<std::ptrdiff_t>(t.y0) * width + t.x0;
  const T v00 = p[0], v01 = p[t.dx], v10 = p[t.dy], v11 = p[t.dy + t.dx];
  gx = t.inside_x && t.dx ? (T(1) - t.ay) * (v01 - v00) + t.ay * (v11 - v10) : T(0);
  gy = t.inside_y && t.dy ? (T(1) - t.ax) * (v10 - v00) + t.ax * (v11 - v01) : T(0);
}

// Valid correlation transpose: din (h+n-1 wide) += full convolution of dout.
template <typename T>
void filter_rows_transpose(const T* dout, int height, int out_width, std::span<const T> taps,
                           T* din) {
  const int n = static_cast<int>(taps.size());
  const int in_width = out_width + n - 1;
  const int padded = out_width + 2 * (n - 1);
  std::vector<T> pad(static_cast<std::size_t>(height) * padded, T(0));
  for (int y = 0; y < height; ++y) {
    std::copy(dout + static_cast<std::ptrdiff_t>(y) * out_width,
              dout + static_cast<std::ptrdiff_t>(y + 1) * out_width,
              pad.data() + static_cast<std::ptrdiff_t>(y) * padded + (n - 1));
  }
  std::vector<T> flipped(taps.rbegin(), taps.rend());
  std::vector<T> tmp(static_cast<std::size_t>(height) * in_width);
  kernels::filter_rows<T>(pad.data(), height, padded, flipped.data(), n, tmp.data());
  for (std::size_t i = 0; i < tmp.size(); ++i) din[i] += tmp[i];
}

template <typename T>
void filter_cols_transpose(const T* dout, int out_height, int width, std::span<const T> taps,
                           T* din) {
  const int n = static_cast<int>(taps.size());
  const int in_height = out_height + n - 1;
  const int padded = out_height + 2 * (n - 1);
  std::vector<T> pad(static_cast<std::size_t>(padded) * width, T(0));
  std::copy(dout, dout + static_cast<std::ptrdiff_t>(out_height) * width,
            pad.data() + static_cast<std::ptrdiff_t>(n - 1) * width);
  std::vector<T> flipped(taps.rbegin(), taps.rend());
  std::vector<T> tmp(static_cast<std::size_t>(in_height) * width);
  kernels::filter_cols<T>(pad.data(), padded, width, flipped.data(), n, tmp.data());
  for (std::size_t i = 0; i < tmp.size(); ++i) din[i] += tmp[i];
}

template <typename T>
void im2col(const Tensor<T>& x, int kernel, int stride, int pad, int out_h, int out_w,
            std::vector<T>& col) {
  const int kk = kernel * kernel;
  col.assign(static_cast<std::size_t>(x.c) * kk * out_h * out_w, T(0));
  for (int ci = 0; ci < x.c; ++ci) {
    const T* src = x.plane(ci);
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* dst = col.data() + (static_cast<std::size_t>(ci) * kk + ky * kernel + kx) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          const T* srow = src + static_cast<std::ptrdiff_t>(iy) * x.w;
          T* drow = dst + static_cast<std::ptrdiff_t>(oy) * out_w;
          if (stride == 1) {
            const int lo = std::max(0, pad - kx);
            const int hi = std::min(out_w, x.w + pad - kx);
            for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox - pad + kx];
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < x.w) drow[ox] = srow[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, int kernel, int stride, int pad, int out_h, int out_w,
                Tensor<T>& dx) {
  const int kk = kernel * kernel;
  for (int ci = 0; ci < dx.c; ++ci) {
    T* dst = dx.plane(ci);
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* src =
            col.data() + (static_cast<std::size_t>(ci) * kk + ky * kernel + kx) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= dx.h) continue;
          T* drow = dst + static_cast<std::ptrdiff_t>(iy) * dx.w;
          const T* srow = src + static_cast<std::ptrdiff_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < dx.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Var<T> constant(Tensor<T> value) {
  return make_node(std::move(value));
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto node = make_node(std::move(value));
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return make_node(x->value);
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  auto node = make_node(std::move(value));
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) throw ArgumentError("backward() needs a scalar root");
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && child->backward_fn && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer().data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!wants(in)) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b->value.data[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] -= self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b->value.data[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * bv.data[i];
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * av.data[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "div");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= b->value.data[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& bv = self.inputs[1]->value;
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] / bv.data[i];
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g.data[i] -= self.grad.data[i] * self.value.data[i] / bv.data[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v *= s;
  return record<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += s * self.grad.data[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v += s;
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
  });
}

template <typename T>
Var<T> one_minus(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = T(1) - v;
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] -= self.grad.data[i];
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v *= v;
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += T(2) * av.data[i] * self.grad.data[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av.data[i] > T(0)) g.data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.value.data[i];
      g.data[i] += self.grad.data[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = std::tanh(v);
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T t = self.value.data[i];
      g.data[i] += self.grad.data[i] * (T(1) - t * t);
    }
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = std::abs(v);
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = av.data[i];
      g.data[i] += x > T(0) ? self.grad.data[i] : (x < T(0) ? -self.grad.data[i] : T(0));
    }
  });
}

template <typename T>
Var<T> pow_relu(const Var<T>& a, T p) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = v > T(0) ? std::pow(v, p) : T(0);
  return record<T>(std::move(out), {a}, [p](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = av.data[i];
      if (x > T(0)) g.data[i] += self.grad.data[i] * p * std::pow(x, p - T(1));
    }
  });
}

// ----------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a->value.data) acc += v;
  return record<T>(Tensor<T>(1, 1, 1, acc), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const T s = self.grad.data[0];
    for (auto& v : g.data) v += s;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  T acc = 0;
  for (T v : a->value.data) acc += v;
  const T n = T(a->value.size());
  return record<T>(Tensor<T>(1, 1, 1, acc / n), {a}, [n](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const T s = self.grad.data[0] / n;
    for (auto& v : g.data) v += s;
  });
}

// ------------------------------------------------------------------- channels

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ArgumentError("concat of nothing");
  const int h = parts[0]->value.h;
  const int w = parts[0]->value.w;
  int channels = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p->value.h != h || p->value.w != w) throw DimensionMismatch("concat: spatial mismatch");
    channels += p->value.c;
    needs = needs || p->requires_grad;
  }
  Tensor<T> out(channels, h, w);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + offset);
    offset += p->value.size();
  }
  auto node = make_node(std::move(out));
  if (needs && g_grad_enabled) {
    node->requires_grad = true;
    node->inputs.assign(parts.begin(), parts.end());
    node->backward_fn = [](Node<T>& self) {
      std::size_t off = 0;
      for (auto& in : self.inputs) {
        const std::size_t n = in->value.size();
        if (in->requires_grad) {
          auto& g = in->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) g.data[i] += self.grad.data[off + i];
        }
        off += n;
      }
    };
  }
  return node;
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int begin, int end) {
  const auto& v = a->value;
  if (begin < 0 || end > v.c || begin >= end) throw ArgumentError("slice_channels: bad range");
  Tensor<T> out(end - begin, v.h, v.w);
  std::copy(v.data.begin() + begin * v.plane_size(), v.data.begin() + end * v.plane_size(),
            out.data.begin());
  return record<T>(std::move(out), {a}, [begin](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const std::size_t off = begin * g.plane_size();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g.data[off + i] += self.grad.data[i];
  });
}

// ---------------------------------------------------------------- convolution

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel, int stride,
              int pad) {
  const auto& xv = x->value;
  const auto& wv = weight->value;
  const int cout = wv.c;
  const int kdim = xv.c * kernel * kernel;
  if (wv.w != kdim || wv.h != 1) {
    throw DimensionMismatch("conv2d: weight expects " + std::to_string(wv.w / (kernel * kernel)) +
                            " input channels, got " + std::to_string(xv.c));
  }
  const int out_h = (xv.h + 2 * pad - kernel) / stride + 1;
  const int out_w = (xv.w + 2 * pad - kernel) / stride + 1;
  const int n = out_h * out_w;
  const bool direct = kernel == 1 && stride == 1 && pad == 0;

  auto col = std::make_shared<std::vector<T>>();
  if (!direct) im2col(xv, kernel, stride, pad, out_h, out_w, *col);
  const T* colp = direct ? xv.data.data() : col->data();

  Tensor<T> out(cout, out_h, out_w);
  kernels::gemm<T>(false, false, cout, n, kdim, T(1), wv.data.data(), kdim, colp, n, T(0),
                   out.data.data(), n);
  if (bias) {
    for (int co = 0; co < cout; ++co) {
      const T b = bias->value.data[co];
      T* p = out.plane(co);
      for (int i = 0; i < n; ++i) p[i] += b;
    }
  }
  if (!any_requires_grad<T>({&x, &weight, &bias})) return make_node(std::move(out));
  return record<T>(
      std::move(out), {x, weight, bias},
      [col, kernel, stride, pad, out_h, out_w, kdim, cout, direct](Node<T>& self) {
        const int n = out_h * out_w;
        auto& xin = self.inputs[0];
        auto& win = self.inputs[1];
        auto& bin = self.inputs[2];
        const T* colp = direct ? xin->value.data.data() : col->data();
        const T* dy = self.grad.data.data();
        if (wants(win)) {
          kernels::gemm<T>(false, true, cout, kdim, n, T(1), dy, n, colp, n, T(1),
                           win->grad_buffer().data.data(), kdim);
        }
        if (wants(bin)) {
          auto& gb = bin->grad_buffer();
          for (int co = 0; co < cout; ++co) {
            T acc = 0;
            const T* p = dy + static_cast<std::ptrdiff_t>(co) * n;
            for (int i = 0; i < n; ++i) acc += p[i];
            gb.data[co] += acc;
          }
        }
        if (wants(xin)) {
          auto& gx = xin->grad_buffer();
          if (direct) {
            kernels::gemm<T>(true, false, kdim, n, cout, T(1), win->value.data.data(), kdim, dy, n,
                             T(1), gx.data.data(), n);
          } else {
            std::vector<T> dcol(static_cast<std::size_t>(kdim) * n);
            kernels::gemm<T>(true, false, kdim, n, cout, T(1), win->value.data.data(), kdim, dy,
                             n, T(0), dcol.data(), n);
            col2im_add(dcol, kernel, stride, pad, out_h, out_w, gx);
          }
        }
      });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& a) {
  const auto& v = a->value;
  const int oh = v.h / 2;
  const int ow = v.w / 2;
  Tensor<T> out(v.c, oh, ow);
  for (int ch = 0; ch < v.c; ++ch) {
    const T* src = v.plane(ch);
    T* dst = out.plane(ch);
    for (int y = 0; y < oh; ++y) {
      const T* r0 = src + static_cast<std::ptrdiff_t>(2 * y) * v.w;
      const T* r1 = r0 + v.w;
      for (int x = 0; x < ow; ++x) {
        dst[y * ow + x] = T(0.25) * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
      }
    }
  }
  return record<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const int oh = self.value.h, ow = self.value.w;
    for (int ch = 0; ch < g.c; ++ch) {
      const T* go = self.grad.plane(ch);
      T* gi = g.plane(ch);
      for (int y = 0; y < oh; ++y) {
        T* r0 = gi + static_cast<std::ptrdiff_t>(2 * y) * g.w;
        T* r1 = r0 + g.w;
        for (int x = 0; x < ow; ++x) {
          const T s = T(0.25) * go[y * ow + x];
          r0[2 * x] += s;
          r0[2 * x + 1] += s;
          r1[2 * x] += s;
          r1[2 * x + 1] += s;
        }
      }
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& a, T eps) {
  const auto& v = a->value;
  const std::size_t n = v.plane_size();
  Tensor<T> out(v.c, v.h, v.w);
  std::vector<T> inv_std(v.c);
  for (int ch = 0; ch < v.c; ++ch) {
    const T* src = v.plane(ch);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= double(n);
    inv_std[ch] = T(1.0 / std::sqrt(var + double(eps)));
    T* dst = out.plane(ch);
    for (std::size_t i = 0; i < n; ++i) dst[i] = T(src[i] - mean) * inv_std[ch];
  }
  return record<T>(std::move(out), {a}, [inv_std = std::move(inv_std)](Node<T>& self) {
    // dx = (dy - mean(dy) - y * mean(dy * y)) / sigma
    auto& g = self.inputs[0]->grad_buffer();
    const std::size_t n = self.value.plane_size();
    for (int ch = 0; ch < self.value.c; ++ch) {
      const T* y = self.value.plane(ch);
      const T* gy = self.grad.plane(ch);
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mg += gy[i];
        mgy += double(gy[i]) * y[i];
      }
      mg /= double(n);
      mgy /= double(n);
      T* gx = g.plane(ch);
      for (std::size_t i = 0; i < n; ++i) gx[i] += T((gy[i] - mg - y[i] * mgy) * inv_std[ch]);
    }
  });
}

template <typename T>
Var<T> separable_filter(const Var<T>& a, std::span<const T> taps) {
  const auto& v = a->value;
  const int n = static_cast<int>(taps.size());
  if (v.h < n || v.w < n) throw ScaleError("image smaller than the filter window");
  const int oh = v.h - n + 1;
  const int ow = v.w - n + 1;
  Tensor<T> out(v.c, oh, ow);
  std::vector<T> tmp(static_cast<std::size_t>(v.h) * ow);
  for (int ch = 0; ch < v.c; ++ch) {
    kernels::filter_rows<T>(v.plane(ch), v.h, v.w, taps.data(), n, tmp.data());
    kernels::filter_cols<T>(tmp.data(), v.h, ow, taps.data(), n, out.plane(ch));
  }
  std::vector<T> kept(taps.begin(), taps.end());
  return record<T>(std::move(out), {a}, [kept = std::move(kept)](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const int oh = self.value.h, ow = self.value.w;
    std::vector<T> dtmp(static_cast<std::size_t>(g.h) * ow);
    for (int ch = 0; ch < g.c; ++ch) {
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      filter_cols_transpose<T>(self.grad.plane(ch), oh, ow, kept, dtmp.data());
      filter_rows_transpose<T>(dtmp.data(), g.h, ow, kept, g.plane(ch));
    }
  });
}

template <typename T>
Var<T> smooth(const Var<T>& a, std::span<const T> taps) {
  const auto& v = a->value;
  const int n = static_cast<int>(taps.size());
  if (n % 2 == 0) throw ArgumentError("smoothing taps must have odd length");
  const int r = n / 2;
  const int ph = v.h + 2 * r, pw = v.w + 2 * r;
  auto clamp_row = [&](int y) { return std::clamp(y - r, 0, v.h - 1); };
  auto clamp_col = [&](int x) { return std::clamp(x - r, 0, v.w - 1); };
  Tensor<T> out(v.c, v.h, v.w);
  std::vector<T> padded(static_cast<std::size_t>(ph) * pw);
  std::vector<T> tmp(static_cast<std::size_t>(ph) * v.w);
  for (int ch = 0; ch < v.c; ++ch) {
    const T* src = v.plane(ch);
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) padded[std::size_t(y) * pw + x] = src[clamp_row(y) * v.w + clamp_col(x)];
    kernels::filter_rows<T>(padded.data(), ph, pw, taps.data(), n, tmp.data());
    kernels::filter_cols<T>(tmp.data(), ph, v.w, taps.data(), n, out.plane(ch));
  }
  std::vector<T> kept(taps.begin(), taps.end());
  return record<T>(std::move(out), {a}, [kept = std::move(kept), r](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const int h = g.h, w = g.w, ph = h + 2 * r, pw = w + 2 * r;
    std::vector<T> dtmp(static_cast<std::size_t>(ph) * w);
    std::vector<T> dpad(static_cast<std::size_t>(ph) * pw);
    for (int ch = 0; ch < g.c; ++ch) {
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      std::fill(dpad.begin(), dpad.end(), T(0));
      filter_cols_transpose<T>(self.grad.plane(ch), h, w, kept, dtmp.data());
      filter_rows_transpose<T>(dtmp.data(), ph, w, kept, dpad.data());
      T* dst = g.plane(ch);
      for (int y = 0; y < ph; ++y) {
        const int sy = std::clamp(y - r, 0, h - 1);
        for (int x = 0; x < pw; ++x) dst[sy * w + std::clamp(x - r, 0, w - 1)] += dpad[std::size_t(y) * pw + x];
      }
    }
  });
}

// ---------------------------------------------------------------- correlation

template <typename T>
Var<T> correlation(const Var<T>& f1, const Var<T>& f2) {
  require_same_shape(f1->value, f2->value, "correlation");
  const int d = f1->value.c;
  const int h = f1->value.h;
  const int w = f1->value.w;
  const int p = h * w;
  const T s = T(1) / std::sqrt(T(d));
  Tensor<T> out(p, h, w);
  kernels::gemm<T>(true, false, p, p, d, s, f1->value.data.data(), p, f2->value.data.data(), p,
                   T(0), out.data.data(), p);
  return record<T>(std::move(out), {f1, f2}, [d, p, s](Node<T>& self) {
    const T* dc = self.grad.data.data();
    auto& a = self.inputs[0];
    auto& b = self.inputs[1];
    if (wants(a)) {
      kernels::gemm<T>(false, true, d, p, p, s, b->value.data.data(), p, dc, p, T(1),
                       a->grad_buffer().data.data(), p);
    }
    if (wants(b)) {
      kernels::gemm<T>(false, false, d, p, p, s, a->value.data.data(), p, dc, p, T(1),
                       b->grad_buffer().data.data(), p);
    }
  });
}

template <typename T>
Var<T> correlation_lookup(std::span<const Var<T>> pyramid, const Var<T>& coords, int radius,
                          bool detach_coords) {
  const int levels = static_cast<int>(pyramid.size());
  const int h = coords->value.h;
  const int w = coords->value.w;
  const int side = 2 * radius + 1;
  const int taps = side * side;
  for (const auto& level : pyramid) {
    if (level->value.c != h * w) throw DimensionMismatch("correlation_lookup: pyramid/coords");
  }
  Tensor<T> out(levels * taps, h, w);
  const T* cx = coords->value.plane(0);
  const T* cy = coords->value.plane(1);
  for (int l = 0; l < levels; ++l) {
    const auto& lv = pyramid[l]->value;
    const T inv = T(1) / T(1 << l);
    for (int pix = 0; pix < h * w; ++pix) {
      const T* plane = lv.plane(pix);
      const T bx = cx[pix] * inv;
      const T by = cy[pix] * inv;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const auto tap = make_tap<T>(bx + T(dx), by + T(dy), lv.w, lv.h);
          const int ch = l * taps + (dy + radius) * side + (dx + radius);
          out.data[static_cast<std::size_t>(ch) * h * w + pix] = sample(plane, lv.w, tap);
        }
      }
    }
  }
  auto node = make_node(std::move(out));
  bool needs = false;
  for (const auto& level : pyramid) needs = needs || level->requires_grad;
  if (!detach_coords) needs = needs || coords->requires_grad;
  if (!needs || !g_grad_enabled) return node;
  node->requires_grad = true;
  node->inputs.assign(pyramid.begin(), pyramid.end());
  node->inputs.push_back(coords);
  node->backward_fn = [levels, radius, detach_coords](Node<T>& self) {
    auto& cin = self.inputs[levels];
    const int h = self.value.h, w = self.value.w;
    const int side = 2 * radius + 1, taps = side * side;
    const T* cx = cin->value.plane(0);
    const T* cy = cin->value.plane(1);
    const bool coord_grad = !detach_coords && cin->requires_grad;
    T* gcx = coord_grad ? cin->grad_buffer().plane(0) : nullptr;
    T* gcy = coord_grad ? cin->grad_buffer().plane(1) : nullptr;
    for (int l = 0; l < levels; ++l) {
      auto& level = self.inputs[l];
      const bool level_grad = level->requires_grad;
      if (!level_grad && !coord_grad) continue;
      const auto& lv = level->value;
      T* glv = level_grad ? level->grad_buffer().data.data() : nullptr;
      const T inv = T(1) / T(1 << l);
      for (int pix = 0; pix < h * w; ++pix) {
        const T bx = cx[pix] * inv;
        const T by = cy[pix] * inv;
        const T* plane = lv.plane(pix);
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            const int ch = l * taps + (dy + radius) * side + (dx + radius);
            const T g = self.grad.data[static_cast<std::size_t>(ch) * h * w + pix];
            if (g == T(0)) continue;
            const auto tap = make_tap<T>(bx + T(dx), by + T(dy), lv.w, lv.h);
            if (level_grad) scatter(glv + static_cast<std::size_t>(pix) * lv.plane_size(), lv.w, tap, g);
            if (coord_grad) {
              T sx, sy;
              sample_grad(plane, lv.w, tap, sx, sy);
              gcx[pix] += g * sx * inv;
              gcy[pix] += g * sy * inv;
            }
          }
        }
      }
    }
  };
  return node;
}

// ------------------------------------------------------------ flow resampling

namespace {

struct Interp {
  int i0, i1;
  double a;
};

// Output pixel o of an axis upsampled by `factor` from `n` cells, pixel
// centers aligned and clamped to the cell range.
std::vector<Interp> upsample_axis(int n, int factor) {
  std::vector<Interp> out(static_cast<std::size_t>(n) * factor);
  for (int o = 0; o < n * factor; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    s = std::clamp(s, 0.0, double(n - 1));
    int i0 = std::min(static_cast<int>(s), std::max(n - 2, 0));
    out[o] = {i0, std::min(i0 + 1, n - 1), s - i0};
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> upsample_flow(const Var<T>& flow, int factor) {
  const auto& v = flow->value;
  const int oh = v.h * factor;
  const int ow = v.w * factor;
  const auto ix = upsample_axis(v.w, factor);
  const auto iy = upsample_axis(v.h, factor);
  Tensor<T> out(v.c, oh, ow);
  std::vector<T> rows(static_cast<std::size_t>(v.h) * ow);
  for (int ch = 0; ch < v.c; ++ch) {
    const T* src = v.plane(ch);
    for (int y = 0; y < v.h; ++y) {
      for (int x = 0; x < ow; ++x) {
        const auto& t = ix[x];
        const T a = T(t.a);
        rows[static_cast<std::size_t>(y) * ow + x] =
            (T(1) - a) * src[y * v.w + t.i0] + a * src[y * v.w + t.i1];
      }
    }
    T* dst = out.plane(ch);
    for (int y = 0; y < oh; ++y) {
      const auto& t = iy[y];
      const T a = T(t.a);
      for (int x = 0; x < ow; ++x) {
        dst[static_cast<std::size_t>(y) * ow + x] =
            T(factor) * ((T(1) - a) * rows[static_cast<std::size_t>(t.i0) * ow + x] +
                         a * rows[static_cast<std::size_t>(t.i1) * ow + x]);
      }
    }
  }
  return record<T>(std::move(out), {flow}, [ix, iy, factor](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const int ow = self.value.w, oh = self.value.h;
    std::vector<T> rows(static_cast<std::size_t>(g.h) * ow);
    for (int ch = 0; ch < g.c; ++ch) {
      std::fill(rows.begin(), rows.end(), T(0));
      const T* go = self.grad.plane(ch);
      for (int y = 0; y < oh; ++y) {
        const auto& t = iy[y];
        const T a = T(t.a);
        for (int x = 0; x < ow; ++x) {
          const T v = T(factor) * go[static_cast<std::size_t>(y) * ow + x];
          rows[static_cast<std::size_t>(t.i0) * ow + x] += (T(1) - a) * v;
          rows[static_cast<std::size_t>(t.i1) * ow + x] += a * v;
        }
      }
      T* gi = g.plane(ch);
      for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < ow; ++x) {
          const auto& t = ix[x];
          const T a = T(t.a);
          const T v = rows[static_cast<std::size_t>(y) * ow + x];
          gi[y * g.w + t.i0] += (T(1) - a) * v;
          gi[y * g.w + t.i1] += a * v;
        }
      }
    }
  });
}

template <typename T>
Var<T> warp(const Var<T>& image, const Var<T>& flow) {
  const auto& iv = image->value;
  const auto& fv = flow->value;
  if (iv.c != 1 || fv.c != 2 || iv.h != fv.h || iv.w != fv.w) {
    throw DimensionMismatch("warp: image (1,H,W) and flow (2,H,W) required");
  }
  Tensor<T> out(1, iv.h, iv.w);
  kernels::warp<T>(iv.data.data(), iv.h, iv.w, fv.plane(0), fv.plane(1), out.data.data(), nullptr);
  return record<T>(std::move(out), {image, flow}, [](Node<T>& self) {
    auto& img = self.inputs[0];
    auto& fl = self.inputs[1];
    const int h = self.value.h, w = self.value.w;
    const T* src = img->value.data.data();
    const T* ux = fl->value.plane(0);
    const T* uy = fl->value.plane(1);
    T* gimg = wants(img) ? img->grad_buffer().data.data() : nullptr;
    T* gux = wants(fl) ? fl->grad_buffer().plane(0) : nullptr;
    T* guy = wants(fl) ? fl->grad_buffer().plane(1) : nullptr;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const T g = self.grad.data[i];
        if (g == T(0)) continue;
        const auto tap = make_tap<T>(T(x) + ux[i], T(y) + uy[i], w, h);
        if (gimg) scatter(gimg, w, tap, g);
        if (gux) {
          T sx, sy;
          sample_grad(src, w, tap, sx, sy);
          gux[i] += g * sx;
          guy[i] += g * sy;
        }
      }
    }
  });
}

#define URAFT_INSTANTIATE(T)                                                                    \
  template Var<T> constant<T>(Tensor<T>);                                                       \
  template Var<T> leaf<T>(Tensor<T>, bool);                                                     \
  template Var<T> detach<T>(const Var<T>&);                                                     \
  template void backward<T>(const Var<T>&);                                                     \
  template Var<T> make_op<T>(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>);   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> scale<T>(const Var<T>&, T);                                                   \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                              \
  template Var<T> one_minus<T>(const Var<T>&);                                                  \
  template Var<T> square<T>(const Var<T>&);                                                     \
  template Var<T> relu<T>(const Var<T>&);                                                       \
  template Var<T> sigmoid<T>(const Var<T>&);                                                    \
  template Var<T> tanh<T>(const Var<T>&);                                                       \
  template Var<T> abs<T>(const Var<T>&);                                                        \
  template Var<T> pow_relu<T>(const Var<T>&, T);                                                \
  template Var<T> sum<T>(const Var<T>&);                                                        \
  template Var<T> mean<T>(const Var<T>&);                                                       \
  template Var<T> concat<T>(std::span<const Var<T>>);                                           \
  template Var<T> slice_channels<T>(const Var<T>&, int, int);                                   \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int);        \
  template Var<T> avg_pool2<T>(const Var<T>&);                                                  \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                           \
  template Var<T> separable_filter<T>(const Var<T>&, std::span<const T>);                       \
  template Var<T> smooth<T>(const Var<T>&, std::span<const T>);                                 \
  template Var<T> correlation<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> correlation_lookup<T>(std::span<const Var<T>>, const Var<T>&, int, bool);     \
  template Var<T> upsample_flow<T>(const Var<T>&, int);                                         \
  template Var<T> warp<T>(const Var<T>&, const Var<T>&);

URAFT_INSTANTIATE(float)
URAFT_INSTANTIATE(double)
#undef URAFT_INSTANTIATE

}  // namespace uraft::ag
