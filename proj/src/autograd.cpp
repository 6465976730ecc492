#include "diffaug/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "diffaug/errors.hpp"

namespace diffaug::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int cols() const { return ho * wo; }
};

void im2col(const Real* x, const ConvGeom& g, Real* cols) {
  const int p = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        Real* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          Real* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const Real* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Real* cols, const ConvGeom& g, Real* dx) {
  const int p = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const Real* row =
            cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          Real* dst = dx + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const Real* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(std::move(out), {x}, [dfdx](Node& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
    }
  });
}

}  // namespace

void Node::accumulate(const Tensor& g) { grad_buffer() += g; }

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Var& v) { return v.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& v : inputs) node->inputs.push_back(v.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are transient; release them so repeated backward
  // passes over persistent leaves stay correct.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

Var constant(Tensor t) { return Var(std::move(t), false); }

Var detach(const Var& x) { return Var(x.value(), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var scale(const Var& a, Real s) {
  Tensor out = a.value();
  out *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    auto& in = *self.inputs[0];
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_scalar(const Var& a, Real s) {
  Tensor out = a.value();
  for (auto& v : out.span()) v += s;
  return make_result(std::move(out), {a}, [](Node& self) {
    self.inputs[0]->accumulate(self.grad);
  });
}

Var sum_scalars(std::span<const Var> terms) {
  Real total = 0.0;
  std::vector<Var> inputs;
  for (const auto& t : terms) {
    if (t.value().size() != 1) throw ShapeError("sum_scalars: non-scalar term");
    total += t.item();
    inputs.push_back(t);
  }
  return make_result(Tensor::scalar(total), std::move(inputs), [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->grad_buffer()[0] += self.grad[0];
    }
  });
}

Var silu(const Var& x) {
  return unary(
      x, [](Real v) { return v / (1.0 + std::exp(-v)); },
      [](Real v, Real) {
        const Real s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var relu(const Var& x) {
  return unary(
      x, [](Real v) { return v > 0.0 ? v : 0.0; },
      [](Real v, Real) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](Real v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](Real, Real y) { return y * (1.0 - y); });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " +
                     xs.str());
  }
  const int k = ws.h;
  ConvGeom g{xs.c, xs.h, xs.w, k, stride, padding,
             (xs.h + 2 * padding - k) / stride + 1,
             (xs.w + 2 * padding - k) / stride + 1};
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: empty output for " + xs.str());
  const int cout = ws.n;
  Tensor out({xs.n, cout, g.ho, g.wo});
  RealBuffer cols(static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMapMat wmat(weight.value().data(), cout, g.rows());
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.value().data() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w, g,
           cols.data());
    ConstMapMat cmat(cols.data(), g.rows(), g.cols());
    MapMat omat(out.data() + static_cast<std::size_t>(n) * cout * g.cols(), cout,
                g.cols());
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (int o = 0; o < cout; ++o) omat.row(o).array() += bias.value()[o];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [g, cout](Node& self) {
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    Node* bin = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const int batch = xin.value.shape().n;
    const std::size_t in_per = static_cast<std::size_t>(g.cin) * g.h * g.w;
    RealBuffer cols(static_cast<std::size_t>(g.rows()) * g.cols());
    RealBuffer dcols(cols.size());
    ConstMapMat wmat(win.value.data(), cout, g.rows());
    for (int n = 0; n < batch; ++n) {
      ConstMapMat dout(self.grad.data() + static_cast<std::size_t>(n) * cout * g.cols(),
                       cout, g.cols());
      if (win.requires_grad) {
        im2col(xin.value.data() + n * in_per, g, cols.data());
        ConstMapMat cmat(cols.data(), g.rows(), g.cols());
        MapMat dw(win.grad_buffer().data(), cout, g.rows());
        dw.noalias() += dout * cmat.transpose();
      }
      if (bin && bin->requires_grad) {
        Tensor& db = bin->grad_buffer();
        for (int o = 0; o < cout; ++o) db[o] += dout.row(o).sum();
      }
      if (xin.requires_grad) {
        MapMat dc(dcols.data(), g.rows(), g.cols());
        dc.noalias() = wmat.transpose() * dout;
        col2im(dcols.data(), g, xin.grad_buffer().data() + n * in_per);
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int in = xs.c * xs.h * xs.w;
  if (ws.c * ws.h * ws.w != in) {
    throw ShapeError("linear: weight " + ws.str() + " incompatible with " + xs.str());
  }
  const int outf = ws.n;
  Tensor out({xs.n, outf, 1, 1});
  ConstMapMat xm(x.value().data(), xs.n, in);
  ConstMapMat wm(weight.value().data(), outf, in);
  MapMat om(out.data(), xs.n, outf);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (int r = 0; r < xs.n; ++r)
      for (int o = 0; o < outf; ++o) om(r, o) += bias.value()[o];
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [in, outf](Node& self) {
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    Node* bin = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const int n = xin.value.shape().n;
    ConstMapMat dout(self.grad.data(), n, outf);
    if (xin.requires_grad) {
      MapMat dx(xin.grad_buffer().data(), n, in);
      dx.noalias() += dout * ConstMapMat(win.value.data(), outf, in);
    }
    if (win.requires_grad) {
      MapMat dw(win.grad_buffer().data(), outf, in);
      dw.noalias() += dout.transpose() * ConstMapMat(xin.value.data(), n, in);
    }
    if (bin && bin->requires_grad) {
      Tensor& db = bin->grad_buffer();
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < outf; ++o) db[o] += dout(r, o);
    }
  });
}

Var add_channel_bias(const Var& x, const Var& per_sample_bias) {
  const Shape xs = x.shape();
  const Shape bs = per_sample_bias.shape();
  if (bs.n != xs.n || bs.c != xs.c || bs.h != 1 || bs.w != 1) {
    throw ShapeError("add_channel_bias: bias " + bs.str() + " for input " + xs.str());
  }
  Tensor out = x.value();
  const std::size_t plane = xs.plane();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const Real b = per_sample_bias.value()[static_cast<std::size_t>(n) * xs.c + c];
      Real* p = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  return make_result(std::move(out), {x, per_sample_bias}, [xs, plane](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->grad_buffer();
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const Real* p = self.grad.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
          Real s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          gb[static_cast<std::size_t>(n) * xs.c + c] += s;
        }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape xs = x.shape();
  Tensor out({xs.n, xs.c, xs.h * 2, xs.w * 2});
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h * 2; ++y)
        for (int xx = 0; xx < xs.w * 2; ++xx)
          out.at(n, c, y, xx) = x.value().at(n, c, y / 2, xx / 2);
  return make_result(std::move(out), {x}, [xs](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        for (int y = 0; y < xs.h * 2; ++y)
          for (int xx = 0; xx < xs.w * 2; ++xx)
            g.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + as.str() + " vs " + bs.str());
  }
  Tensor out({as.n, as.c + bs.c, as.h, as.w});
  const std::size_t pa = static_cast<std::size_t>(as.c) * as.h * as.w;
  const std::size_t pb = static_cast<std::size_t>(bs.c) * bs.h * bs.w;
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.value().data() + n * pa, pa, out.data() + n * (pa + pb));
    std::copy_n(b.value().data() + n * pb, pb, out.data() + n * (pa + pb) + pa);
  }
  return make_result(std::move(out), {a, b}, [pa, pb](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const int batch = x.value.shape().n;
    for (int n = 0; n < batch; ++n) {
      const Real* g = self.grad.data() + n * (pa + pb);
      if (x.requires_grad) {
        Real* d = x.grad_buffer().data() + n * pa;
        for (std::size_t i = 0; i < pa; ++i) d[i] += g[i];
      }
      if (y.requires_grad) {
        Real* d = y.grad_buffer().data() + n * pb;
        for (std::size_t i = 0; i < pb; ++i) d[i] += g[pa + i];
      }
    }
  });
}

Var select_samples(const Var& x, std::vector<int> indices) {
  const Shape xs = x.shape();
  const std::size_t per = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  Tensor out({static_cast<int>(indices.size()), xs.c, xs.h, xs.w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= xs.n) {
      throw std::out_of_range("select_samples: index " + std::to_string(indices[i]));
    }
    std::copy_n(x.value().data() + indices[i] * per, per, out.data() + i * per);
  }
  return make_result(std::move(out), {x}, [indices, per](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Real* src = self.grad.data() + i * per;
      Real* dst = g.data() + indices[i] * per;
      for (std::size_t j = 0; j < per; ++j) dst[j] += src[j];
    }
  });
}

Var l1_mean(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "l1_mean");
  const std::size_t count = a.value().size();
  Real total = 0.0;
  for (std::size_t i = 0; i < count; ++i) total += std::abs(a.value()[i] - b.value()[i]);
  const Real inv = count ? 1.0 / static_cast<Real>(count) : 0.0;
  return make_result(Tensor::scalar(total * inv), {a, b}, [inv](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const Real g = self.grad[0] * inv;
    for (std::size_t i = 0; i < x.value.size(); ++i) {
      const Real d = x.value[i] - y.value[i];
      const Real s = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
      if (x.requires_grad) x.grad_buffer()[i] += s;
      if (y.requires_grad) y.grad_buffer()[i] -= s;
    }
  });
}

Var mean(const Var& x) {
  const std::size_t count = x.value().size();
  const Real inv = count ? 1.0 / static_cast<Real>(count) : 0.0;
  return make_result(Tensor::scalar(x.value().sum() * inv), {x}, [inv](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Real v = self.grad[0] * inv;
    for (auto& e : g.span()) e += v;
  });
}

}  // namespace diffaug::ag
