#include "satsynth/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace satsynth {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename S>
void Node<S>::accumulate(const Tensor<S>& g) {
  accumulate(g.data());
}

template <typename S>
void Node<S>::accumulate(const typename Tensor<S>::Vector& g) {
  if (!requires_grad) return;
  if (grad.empty()) {
    grad = Tensor<S>(value.shape(), g);
  } else {
    grad.data() += g;
  }
}

template <typename S>
Var<S>::Var(Tensor<S> value, bool requires_grad) : node_(std::make_shared<Node<S>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename S>
void backward(const Var<S>& root) {
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward() needs a single-element root, got " +
                                shape_to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  using NodePtr = std::shared_ptr<Node<S>>;
  std::vector<NodePtr> order;
  std::unordered_set<Node<S>*> visited;
  // Iterative post-order DFS; graphs can be deep.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor<S>(root.shape(), S(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
    if (node.backward_fn) {
      node.backward_fn = nullptr;
      node.parents.clear();
      node.grad = Tensor<S>();
    }
  }
}

namespace {

template <typename S>
Var<S> make_result(Tensor<S> value, std::vector<typename Var<S>::NodePtr> parents,
                   std::function<void(Node<S>&)> fn) {
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  Var<S> out(std::move(value), needs);
  if (needs) {
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(fn);
  }
  return out;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a) +
                                " vs " + shape_to_string(b));
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_to_string(s));
  }
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<S> out(a.shape(), a.value().data() + b.value().data());
  auto pa = a.node(), pb = b.node();
  return make_result<S>(std::move(out), {pa, pb}, [pa, pb](Node<S>& self) {
    pa->accumulate(self.grad);
    pb->accumulate(self.grad);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<S> out(a.shape(), a.value().data() - b.value().data());
  auto pa = a.node(), pb = b.node();
  return make_result<S>(std::move(out), {pa, pb}, [pa, pb](Node<S>& self) {
    pa->accumulate(self.grad);
    pb->accumulate(-self.grad.data());
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<S> out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  auto pa = a.node(), pb = b.node();
  return make_result<S>(std::move(out), {pa, pb}, [pa, pb](Node<S>& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.data().cwiseProduct(pb->value.data()));
    if (pb->requires_grad) pb->accumulate(self.grad.data().cwiseProduct(pa->value.data()));
  });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  Tensor<S> out(a.shape(), a.value().data().cwiseQuotient(b.value().data()));
  auto pa = a.node(), pb = b.node();
  return make_result<S>(std::move(out), {pa, pb}, [pa, pb](Node<S>& self) {
    const auto& bv = pb->value.data();
    if (pa->requires_grad) pa->accumulate(self.grad.data().cwiseQuotient(bv));
    if (pb->requires_grad) {
      pb->accumulate(
          (-self.grad.data().array() * pa->value.data().array() / (bv.array() * bv.array()))
              .matrix());
    }
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape(), a.value().data() * factor);
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa},
                        [pa, factor](Node<S>& self) { pa->accumulate(self.grad.data() * factor); });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  Tensor<S> out(a.shape(), (a.value().data().array() + offset).matrix());
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa},
                        [pa](Node<S>& self) { pa->accumulate(self.grad); });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().data().array().exp().matrix());
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa](Node<S>& self) {
    pa->accumulate(self.grad.data().cwiseProduct(self.value.data()));
  });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().data().array().tanh().matrix());
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa](Node<S>& self) {
    const auto& y = self.value.data().array();
    pa->accumulate((self.grad.data().array() * (S(1) - y * y)).matrix());
  });
}

template <typename S>
Var<S> abs(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().data().cwiseAbs());
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa](Node<S>& self) {
    const auto& x = pa->value.data().array();
    auto sign = (x > S(0)).template cast<S>() - (x < S(0)).template cast<S>();
    pa->accumulate((self.grad.data().array() * sign).matrix());
  });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().data().array().square().matrix());
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa](Node<S>& self) {
    pa->accumulate((self.grad.data().array() * S(2) * pa->value.data().array()).matrix());
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu(a, S(0));
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  const auto& x = a.value().data().array();
  Tensor<S> out(a.shape(), (x > S(0)).select(x, x * slope).matrix());
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, slope](Node<S>& self) {
    const auto& xv = pa->value.data().array();
    const auto& g = self.grad.data().array();
    pa->accumulate((xv > S(0)).select(g, g * slope).matrix());
  });
}

template <typename S>
Var<S> clamp_max(const Var<S>& a, S hi) {
  Tensor<S> out(a.shape(), a.value().data().cwiseMin(hi));
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, hi](Node<S>& self) {
    const auto& xv = pa->value.data().array();
    pa->accumulate((xv < hi).select(self.grad.data().array(), S(0)).matrix());
  });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out(Shape{}, S(a.value().data().sum()));
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa](Node<S>& self) {
    pa->accumulate(Tensor<S>::Vector::Constant(pa->value.size(), self.grad[0]));
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const Index n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  Tensor<S> out(Shape{}, S(a.value().data().sum() / S(n)));
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, n](Node<S>& self) {
    pa->accumulate(Tensor<S>::Vector::Constant(n, self.grad[0] / S(n)));
  });
}

template <typename S>
Var<S> sum_per_sample(const Var<S>& a) {
  if (a.value().rank() < 1) throw std::invalid_argument("sum_per_sample needs a batch axis");
  const Index n = a.dim(0);
  const Index per = n ? a.value().size() / n : 0;
  Tensor<S> out(Shape{n});
  const auto m = a.value().matrix(n, per);
  out.data() = m.rowwise().sum();
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, n, per](Node<S>& self) {
    typename Tensor<S>::RowMatrix g = self.grad.data().replicate(1, per);
    pa->accumulate(Eigen::Map<const typename Tensor<S>::Vector>(g.data(), n * per));
  });
}

template <typename S>
Var<S> mean_per_sample(const Var<S>& a) {
  const Index n = a.dim(0);
  const Index per = n ? a.value().size() / n : 0;
  if (per == 0) throw std::invalid_argument("mean_per_sample of empty sample");
  Tensor<S> out(Shape{n});
  out.data() = a.value().matrix(n, per).rowwise().sum() / S(per);
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, n, per](Node<S>& self) {
    typename Tensor<S>::RowMatrix g = (self.grad.data() / S(per)).replicate(1, per);
    pa->accumulate(Eigen::Map<const typename Tensor<S>::Vector>(g.data(), n * per));
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa](Node<S>& self) { pa->accumulate(self.grad); });
}

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w) {
    throw std::invalid_argument("concat_channels: incompatible " + shape_to_string(a.shape()) +
                                " and " + shape_to_string(b.shape()));
  }
  const Index hw = h * w;
  Tensor<S> out(Shape{n, ca + cb, h, w});
  for (Index i = 0; i < n; ++i) {
    out.data().segment(i * (ca + cb) * hw, ca * hw) = a.value().data().segment(i * ca * hw, ca * hw);
    out.data().segment((i * (ca + cb) + ca) * hw, cb * hw) =
        b.value().data().segment(i * cb * hw, cb * hw);
  }
  auto pa = a.node(), pb = b.node();
  return make_result<S>(std::move(out), {pa, pb}, [pa, pb, n, ca, cb, hw](Node<S>& self) {
    typename Tensor<S>::Vector ga(n * ca * hw), gb(n * cb * hw);
    for (Index i = 0; i < n; ++i) {
      ga.segment(i * ca * hw, ca * hw) = self.grad.data().segment(i * (ca + cb) * hw, ca * hw);
      gb.segment(i * cb * hw, cb * hw) =
          self.grad.data().segment((i * (ca + cb) + ca) * hw, cb * hw);
    }
    pa->accumulate(ga);
    pb->accumulate(gb);
  });
}

template <typename S>
Var<S> upsample_nearest2x(const Var<S>& a) {
  require_rank(a.shape(), 4, "upsample_nearest2x");
  const Index n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  Tensor<S> out(Shape{n, c, 2 * h, 2 * w});
  const S* src = a.value().ptr();
  S* dst = out.ptr();
  for (Index p = 0; p < n * c; ++p) {
    for (Index y = 0; y < 2 * h; ++y) {
      const S* row = src + (p * h + y / 2) * w;
      S* orow = dst + (p * 2 * h + y) * 2 * w;
      for (Index x = 0; x < 2 * w; ++x) orow[x] = row[x / 2];
    }
  }
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, n, c, h, w](Node<S>& self) {
    typename Tensor<S>::Vector g = Tensor<S>::Vector::Zero(n * c * h * w);
    const S* gs = self.grad.ptr();
    for (Index p = 0; p < n * c; ++p) {
      for (Index y = 0; y < 2 * h; ++y) {
        const S* grow = gs + (p * 2 * h + y) * 2 * w;
        S* drow = g.data() + (p * h + y / 2) * w;
        for (Index x = 0; x < 2 * w; ++x) drow[x / 2] += grow[x];
      }
    }
    pa->accumulate(g);
  });
}

template <typename S>
Var<S> avg_pool2(const Var<S>& a) {
  require_rank(a.shape(), 4, "avg_pool2");
  const Index n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const Index oh = h / 2, ow = w / 2;
  Tensor<S> out(Shape{n, c, oh, ow});
  const S* src = a.value().ptr();
  for (Index p = 0; p < n * c; ++p) {
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        const S* r0 = src + (p * h + 2 * y) * w + 2 * x;
        out[(p * oh + y) * ow + x] = (r0[0] + r0[1] + r0[w] + r0[w + 1]) * S(0.25);
      }
    }
  }
  auto pa = a.node();
  return make_result<S>(std::move(out), {pa}, [pa, n, c, h, w, oh, ow](Node<S>& self) {
    typename Tensor<S>::Vector g = Tensor<S>::Vector::Zero(n * c * h * w);
    for (Index p = 0; p < n * c; ++p) {
      for (Index y = 0; y < oh; ++y) {
        for (Index x = 0; x < ow; ++x) {
          const S v = self.grad[(p * oh + y) * ow + x] * S(0.25);
          S* r0 = g.data() + (p * h + 2 * y) * w + 2 * x;
          r0[0] += v;
          r0[1] += v;
          r0[w] += v;
          r0[w + 1] += v;
        }
      }
    }
    pa->accumulate(g);
  });
}

template <typename S>
Var<S> max_pool2(const Var<S>& a) {
  require_rank(a.shape(), 4, "max_pool2");
  const Index n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const Index oh = h / 2, ow = w / 2;
  Tensor<S> out(Shape{n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * c * oh * ow));
  const S* src = a.value().ptr();
  for (Index p = 0; p < n * c; ++p) {
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        Index best = (p * h + 2 * y) * w + 2 * x;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (p * h + 2 * y + dy) * w + 2 * x + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const Index o = (p * oh + y) * ow + x;
        out[o] = src[best];
        (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  auto pa = a.node();
  const Index in_size = a.value().size();
  return make_result<S>(std::move(out), {pa}, [pa, argmax, in_size](Node<S>& self) {
    typename Tensor<S>::Vector g = Tensor<S>::Vector::Zero(in_size);
    for (std::size_t o = 0; o < argmax->size(); ++o) {
      g[(*argmax)[o]] += self.grad[static_cast<Index>(o)];
    }
    pa->accumulate(g);
  });
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad) {
  using RowMatrix = typename Tensor<S>::RowMatrix;
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oc = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw std::invalid_argument("conv2d: weight " + shape_to_string(weight.shape()) +
                                " incompatible with input " + shape_to_string(x.shape()));
  }
  if (bias.defined() && bias.value().size() != oc) {
    throw std::invalid_argument("conv2d: bias length mismatch");
  }
  if (h + 2 * pad < k || w + 2 * pad < k) {
    throw std::invalid_argument("conv2d: input " + shape_to_string(x.shape()) +
                                " too small for kernel");
  }
  const Index oh = (h + 2 * pad - k) / stride + 1;
  const Index ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) {
    throw std::invalid_argument("conv2d: input " + shape_to_string(x.shape()) +
                                " too small for kernel");
  }
  const Index ckk = c * k * k;
  const Index ohw = oh * ow;
  const Index cols_n = n * ohw;

  auto cols = std::make_shared<RowMatrix>(ckk, cols_n);
  const S* src = x.value().ptr();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        S* row = cols->data() + ((ci * k + ky) * k + kx) * cols_n;
        for (Index b = 0; b < n; ++b) {
          const S* plane = src + (b * c + ci) * h * w;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * stride - pad + ky;
            S* out_row = row + b * ohw + oy * ow;
            if (iy < 0 || iy >= h) {
              std::fill(out_row, out_row + ow, S(0));
              continue;
            }
            const S* in_row = plane + iy * w;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * stride - pad + kx;
              out_row[ox] = (ix >= 0 && ix < w) ? in_row[ix] : S(0);
            }
          }
        }
      }
    }
  }

  const auto wmat = weight.value().matrix(oc, ckk);
  RowMatrix y = wmat * (*cols);
  if (bias.defined()) y.colwise() += bias.value().data();

  Tensor<S> out(Shape{n, oc, oh, ow});
  for (Index b = 0; b < n; ++b) {
    for (Index o = 0; o < oc; ++o) {
      std::copy_n(y.data() + o * cols_n + b * ohw, ohw, out.ptr() + (b * oc + o) * ohw);
    }
  }

  auto px = x.node(), pw = weight.node(), pb = bias.node();
  std::vector<typename Var<S>::NodePtr> parents{px, pw};
  if (pb) parents.push_back(pb);
  return make_result<S>(
      std::move(out), std::move(parents),
      [=](Node<S>& self) {
        RowMatrix g(oc, cols_n);
        for (Index b = 0; b < n; ++b) {
          for (Index o = 0; o < oc; ++o) {
            std::copy_n(self.grad.ptr() + (b * oc + o) * ohw, ohw, g.data() + o * cols_n + b * ohw);
          }
        }
        if (pb && pb->requires_grad) pb->accumulate(g.rowwise().sum().eval());
        if (pw->requires_grad) {
          RowMatrix gw = g * cols->transpose();
          pw->accumulate(Eigen::Map<const typename Tensor<S>::Vector>(gw.data(), gw.size()));
        }
        if (px->requires_grad) {
          RowMatrix gcols = pw->value.matrix(oc, ckk).transpose() * g;
          typename Tensor<S>::Vector gx = Tensor<S>::Vector::Zero(n * c * h * w);
          for (Index ci = 0; ci < c; ++ci) {
            for (Index ky = 0; ky < k; ++ky) {
              for (Index kx = 0; kx < k; ++kx) {
                const S* row = gcols.data() + ((ci * k + ky) * k + kx) * cols_n;
                for (Index b = 0; b < n; ++b) {
                  S* plane = gx.data() + (b * c + ci) * h * w;
                  for (Index oy = 0; oy < oh; ++oy) {
                    const Index iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const S* grow = row + b * ohw + oy * ow;
                    S* in_row = plane + iy * w;
                    for (Index ox = 0; ox < ow; ++ox) {
                      const Index ix = ox * stride - pad + kx;
                      if (ix >= 0 && ix < w) in_row[ix] += grow[ox];
                    }
                  }
                }
              }
            }
          }
          px->accumulate(gx);
        }
      });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  using RowMatrix = typename Tensor<S>::RowMatrix;
  require_rank(x.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const Index n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != f) {
    throw std::invalid_argument("linear: weight " + shape_to_string(weight.shape()) +
                                " incompatible with input " + shape_to_string(x.shape()));
  }
  RowMatrix y = x.value().matrix(n, f) * weight.value().matrix(o, f).transpose();
  if (bias.defined()) y.rowwise() += bias.value().data().transpose();
  Tensor<S> out(Shape{n, o}, Eigen::Map<const typename Tensor<S>::Vector>(y.data(), y.size()));
  auto px = x.node(), pw = weight.node(), pb = bias.node();
  std::vector<typename Var<S>::NodePtr> parents{px, pw};
  if (pb) parents.push_back(pb);
  return make_result<S>(std::move(out), std::move(parents), [=](Node<S>& self) {
    const auto g = self.grad.matrix(n, o);
    if (pb && pb->requires_grad) pb->accumulate(g.colwise().sum().transpose().eval());
    if (pw->requires_grad) {
      RowMatrix gw = g.transpose() * px->value.matrix(n, f);
      pw->accumulate(Eigen::Map<const typename Tensor<S>::Vector>(gw.data(), gw.size()));
    }
    if (px->requires_grad) {
      RowMatrix gx = g * pw->value.matrix(o, f);
      px->accumulate(Eigen::Map<const typename Tensor<S>::Vector>(gx.data(), gx.size()));
    }
  });
}

template <typename S>
Var<S> instance_norm(const Var<S>& x, S eps) {
  require_rank(x.shape(), 4, "instance_norm");
  const Index planes = x.dim(0) * x.dim(1);
  const Index hw = x.dim(2) * x.dim(3);
  auto inv_std = std::make_shared<typename Tensor<S>::Vector>(planes);
  Tensor<S> out(x.shape());
  const auto in = x.value().matrix(planes, hw);
  auto o = out.matrix(planes, hw);
  for (Index p = 0; p < planes; ++p) {
    const S mu = in.row(p).mean();
    const S var = (in.row(p).array() - mu).square().mean();
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    o.row(p) = (in.row(p).array() - mu) * is;
  }
  auto px = x.node();
  return make_result<S>(std::move(out), {px}, [px, inv_std, planes, hw](Node<S>& self) {
    typename Tensor<S>::RowMatrix gx(planes, hw);
    const auto g = self.grad.matrix(planes, hw);
    const auto y = self.value.matrix(planes, hw);
    for (Index p = 0; p < planes; ++p) {
      const S gm = g.row(p).mean();
      const S gym = g.row(p).cwiseProduct(y.row(p)).mean();
      gx.row(p) = (*inv_std)[p] * (g.row(p).array() - gm - y.row(p).array() * gym);
    }
    px->accumulate(Eigen::Map<const typename Tensor<S>::Vector>(gx.data(), gx.size()));
  });
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
  require_rank(logits.shape(), 4, "cross_entropy");
  const Index n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const Index pixels = n * hw;
  if (static_cast<Index>(labels.size()) != pixels) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  auto probs = std::make_shared<typename Tensor<S>::Vector>(n * k * hw);
  const S* z = logits.value().ptr();
  double loss = 0.0;
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < hw; ++p) {
      S mx = z[(b * k) * hw + p];
      for (Index c = 1; c < k; ++c) mx = std::max(mx, z[(b * k + c) * hw + p]);
      S denom = 0;
      for (Index c = 0; c < k; ++c) {
        const S e = std::exp(z[(b * k + c) * hw + p] - mx);
        (*probs)[(b * k + c) * hw + p] = e;
        denom += e;
      }
      for (Index c = 0; c < k; ++c) (*probs)[(b * k + c) * hw + p] /= denom;
      const int label = labels[static_cast<std::size_t>(b * hw + p)];
      if (label < 0 || label >= k) throw std::invalid_argument("cross_entropy: label out of range");
      loss -= static_cast<double>(z[(b * k + label) * hw + p] - mx - std::log(denom));
    }
  }
  Tensor<S> out(Shape{}, S(loss / static_cast<double>(pixels)));
  auto pl = logits.node();
  return make_result<S>(std::move(out), {pl}, [pl, probs, labels, n, k, hw, pixels](Node<S>& self) {
    typename Tensor<S>::Vector g = *probs;
    for (Index b = 0; b < n; ++b) {
      for (Index p = 0; p < hw; ++p) {
        g[(b * k + labels[static_cast<std::size_t>(b * hw + p)]) * hw + p] -= S(1);
      }
    }
    g *= self.grad[0] / S(pixels);
    pl->accumulate(g);
  });
}

template <typename S>
Var<S> spectral_normalize(const Var<S>& weight, const typename Tensor<S>::Vector& u,
                          const typename Tensor<S>::Vector& v) {
  const Index rows = u.size();
  const Index cols = v.size();
  if (rows * cols != weight.value().size()) {
    throw std::invalid_argument("spectral_normalize: u/v sizes do not match weight");
  }
  const auto wm = weight.value().matrix(rows, cols);
  const S sigma = u.dot(wm * v);
  Tensor<S> out(weight.shape(), weight.value().data() / sigma);
  auto pw = weight.node();
  return make_result<S>(std::move(out), {pw}, [pw, u, v, sigma, rows, cols](Node<S>& self) {
    const S inner = self.grad.data().dot(pw->value.data());
    typename Tensor<S>::RowMatrix outer = u * v.transpose();
    typename Tensor<S>::Vector g =
        self.grad.data() / sigma -
        Eigen::Map<const typename Tensor<S>::Vector>(outer.data(), rows * cols) *
            (inner / (sigma * sigma));
    pw->accumulate(g);
  });
}

template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& x, Index out_h, Index out_w) {
  require_rank(x.shape(), 4, "resize_nearest");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) return x;
  Tensor<S> out(Shape{n, c, out_h, out_w});
  for (Index p = 0; p < n * c; ++p) {
    for (Index y = 0; y < out_h; ++y) {
      const Index sy = y * h / out_h;
      for (Index xx = 0; xx < out_w; ++xx) {
        const Index sx = xx * w / out_w;
        out[(p * out_h + y) * out_w + xx] = x[(p * h + sy) * w + sx];
      }
    }
  }
  return out;
}

#define SATSYNTH_INSTANTIATE(S)                                                             \
  template struct Node<S>;                                                                  \
  template class Var<S>;                                                                    \
  template void backward<S>(const Var<S>&);                                                 \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                     \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                     \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                     \
  template Var<S> div<S>(const Var<S>&, const Var<S>&);                                     \
  template Var<S> scale<S>(const Var<S>&, S);                                               \
  template Var<S> add_scalar<S>(const Var<S>&, S);                                          \
  template Var<S> exp<S>(const Var<S>&);                                                    \
  template Var<S> tanh<S>(const Var<S>&);                                                   \
  template Var<S> abs<S>(const Var<S>&);                                                    \
  template Var<S> square<S>(const Var<S>&);                                                 \
  template Var<S> relu<S>(const Var<S>&);                                                   \
  template Var<S> leaky_relu<S>(const Var<S>&, S);                                          \
  template Var<S> clamp_max<S>(const Var<S>&, S);                                           \
  template Var<S> sum<S>(const Var<S>&);                                                    \
  template Var<S> mean<S>(const Var<S>&);                                                   \
  template Var<S> sum_per_sample<S>(const Var<S>&);                                         \
  template Var<S> mean_per_sample<S>(const Var<S>&);                                        \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                         \
  template Var<S> concat_channels<S>(const Var<S>&, const Var<S>&);                         \
  template Var<S> upsample_nearest2x<S>(const Var<S>&);                                     \
  template Var<S> avg_pool2<S>(const Var<S>&);                                              \
  template Var<S> max_pool2<S>(const Var<S>&);                                              \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, int, int);         \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                   \
  template Var<S> instance_norm<S>(const Var<S>&, S);                                       \
  template Var<S> cross_entropy<S>(const Var<S>&, const std::vector<int>&);                 \
  template Var<S> spectral_normalize<S>(const Var<S>&, const typename Tensor<S>::Vector&,   \
                                        const typename Tensor<S>::Vector&);                 \
  template Tensor<S> resize_nearest<S>(const Tensor<S>&, Index, Index);

SATSYNTH_INSTANTIATE(float)
SATSYNTH_INSTANTIATE(double)

#undef SATSYNTH_INSTANTIATE

}  // namespace satsynth
