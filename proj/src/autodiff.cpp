#include "dada/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dada/error.hpp"
#include "dada/fusion.hpp"
#include "dada/losses.hpp"

namespace dada::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(Node<T>&)> fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    node->requires_grad = any;
    if (any) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return Var<T>(std::move(node));
}

void require_chw(const char* op, const std::vector<std::int64_t>& shape) {
    if (shape.size() != 3) throw ShapeError(std::string(op) + ": expected a [C,H,W] tensor");
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape " + a.shape_string() + " vs " + b.shape_string());
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::int64_t k, const ConvGeometry& g, std::int64_t ho, std::int64_t wo) {
    const auto cin = x.channels(), h = x.height(), w = x.width();
    Tensor<T> cols({cin * k * k, ho * wo});
    T* out = cols.data();
    for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                T* row = out + ((c * k + ky) * k + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const auto iy = oy * g.stride - g.padding + ky * g.dilation;
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* src = x.data() + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const auto ix = ox * g.stride - g.padding + kx * g.dilation;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
    return cols;
}

template <typename T>
void col2im_add(const Tensor<T>& cols, Tensor<T>& gx, std::int64_t k, const ConvGeometry& g, std::int64_t ho,
                std::int64_t wo) {
    const auto cin = gx.channels(), h = gx.height(), w = gx.width();
    const T* in = cols.data();
    for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                const T* row = in + ((c * k + ky) * k + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const auto iy = oy * g.stride - g.padding + ky * g.dilation;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = gx.data() + (c * h + iy) * w;
                    const T* src = row + oy * wo;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const auto ix = ox * g.stride - g.padding + kx * g.dilation;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
}

struct BilinearTap {
    std::int64_t i0, i1;
    double w0, w1;
};

std::vector<BilinearTap> bilinear_taps(std::int64_t in, std::int64_t out) {
    std::vector<BilinearTap> taps(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const auto i1 = std::min(i0 + 1, in - 1);
        const double l = src - static_cast<double>(i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
    }
    return taps;
}

}  // namespace

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
        grad = g;
        return;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> Var<T>::detach() const {
    return Var<T>(node_->value, false);
}

template <typename T>
void backward(const Var<T>& loss) {
    const auto& root = loss.node();
    if (!root) throw std::invalid_argument("backward: undefined loss");
    if (root->value.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + root->value.shape_string());
    const double v = static_cast<double>(root->value[0]);
    if (!std::isfinite(v)) throw NumericError("backward: non-finite loss " + std::to_string(v));
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto* n : order)
        if (!n->is_leaf()) n->grad = Tensor<T>();
    root->grad = Tensor<T>(root->value.shape(), T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->is_leaf() || n->grad.empty()) continue;
        n->backward_fn(*n);
    }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same("add", a.value(), b.value());
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_result<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        if (pa->requires_grad) pa->accumulate(self.grad);
        if (pb->requires_grad) pb->accumulate(self.grad);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same("mul", a.value(), b.value());
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_result<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        if (pa->requires_grad) {
            Tensor<T> g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pb->value[i];
            pa->accumulate(g);
        }
        if (pb->requires_grad) {
            Tensor<T> g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pa->value[i];
            pb->accumulate(g);
        }
    });
}

template <typename T>
Var<T> mul_broadcast_channels(const Var<T>& x, const Var<T>& z) {
    require_chw("mul_broadcast_channels", x.value().shape());
    require_chw("mul_broadcast_channels", z.value().shape());
    const auto& xv = x.value();
    const auto& zv = z.value();
    if (zv.channels() != 1 || zv.height() != xv.height() || zv.width() != xv.width())
        throw ShapeError("mul_broadcast_channels: " + xv.shape_string() + " vs " + zv.shape_string());
    const auto c = xv.channels();
    const auto hw = xv.height() * xv.width();
    Tensor<T> out(xv.shape());
    for (std::int64_t k = 0; k < c; ++k)
        for (std::int64_t i = 0; i < hw; ++i) out[k * hw + i] = xv[k * hw + i] * zv[i];
    auto px = x.node(), pz = z.node();
    return make_result<T>(std::move(out), {px, pz}, [px, pz, c, hw](Node<T>& self) {
        if (px->requires_grad) {
            Tensor<T> g(px->value.shape());
            for (std::int64_t k = 0; k < c; ++k)
                for (std::int64_t i = 0; i < hw; ++i) g[k * hw + i] = self.grad[k * hw + i] * pz->value[i];
            px->accumulate(g);
        }
        if (pz->requires_grad) {
            Tensor<T> g(pz->value.shape());
            for (std::int64_t k = 0; k < c; ++k)
                for (std::int64_t i = 0; i < hw; ++i) g[i] += self.grad[k * hw + i] * px->value[k * hw + i];
            pz->accumulate(g);
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.storage()) v *= s;
    auto pa = a.node();
    return make_result<T>(std::move(out), {pa}, [pa, s](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (auto& v : g.storage()) v *= s;
        pa->accumulate(g);
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total = 0;
    for (auto v : a.value().storage()) total += v;
    auto pa = a.node();
    return make_result<T>(Tensor<T>::scalar(total), {pa}, [pa](Node<T>& self) {
        pa->accumulate(Tensor<T>(pa->value.shape(), self.grad[0]));
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> dot(const Var<T>& a, const Tensor<T>& weights) {
    require_same("dot", a.value(), weights);
    T total = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) total += a.value()[i] * weights[i];
    auto pa = a.node();
    return make_result<T>(Tensor<T>::scalar(total), {pa}, [pa, weights](Node<T>& self) {
        Tensor<T> g = weights;
        for (auto& v : g.storage()) v *= self.grad[0];
        pa->accumulate(g);
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
    require_chw("conv2d", x.value().shape());
    const auto& wv = weight.value();
    if (wv.rank() != 4 || wv.dim(2) != wv.dim(3))
        throw ShapeError("conv2d: weight must be [Cout,Cin,K,K], got " + wv.shape_string());
    const auto cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
    if (x.value().channels() != cin)
        throw ShapeError("conv2d: input has " + std::to_string(x.value().channels()) + " channels, expected " +
                         std::to_string(cin));
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != cout))
        throw ShapeError("conv2d: bias shape " + bias.value().shape_string());
    const auto ho = conv_out_size(x.value().height(), k, g);
    const auto wo = conv_out_size(x.value().width(), k, g);
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input " + x.value().shape_string() + " too small");
    const auto kk = cin * k * k;
    const auto n = ho * wo;

    const bool pointwise = (k == 1 && g.stride == 1 && g.padding == 0);
    auto cols = std::make_shared<Tensor<T>>(pointwise ? Tensor<T>() : im2col(x.value(), k, g, ho, wo));
    const T* col_data = pointwise ? x.value().data() : cols->data();

    Tensor<T> out({cout, ho, wo});
    MapMat<T> om(out.data(), cout, n);
    om.noalias() = CMapMat<T>(wv.data(), cout, kk) * CMapMat<T>(col_data, kk, n);
    if (bias.defined())
        for (std::int64_t o = 0; o < cout; ++o) om.row(o).array() += bias.value()[o];

    auto px = x.node(), pw = weight.node(), pb = bias.node();
    std::vector<std::shared_ptr<Node<T>>> parents{px, pw};
    if (pb) parents.push_back(pb);
    return make_result<T>(std::move(out), std::move(parents),
                          [px, pw, pb, cols, pointwise, g, cout, kk, n, k, ho, wo](Node<T>& self) {
                              CMapMat<T> gout(self.grad.data(), cout, n);
                              const T* cd = pointwise ? px->value.data() : cols->data();
                              if (pw->requires_grad) {
                                  auto& gw = pw->grad_buffer();
                                  MapMat<T>(gw.data(), cout, kk).noalias() += gout * CMapMat<T>(cd, kk, n).transpose();
                              }
                              if (pb && pb->requires_grad) {
                                  auto& gb = pb->grad_buffer();
                                  // Fixed-order sum: Eigen's redux order depends on buffer alignment.
                                  for (std::int64_t o = 0; o < cout; ++o) {
                                      T acc = 0;
                                      for (std::int64_t i = 0; i < n; ++i) acc += gout(o, i);
                                      gb[o] += acc;
                                  }
                              }
                              if (px->requires_grad) {
                                  const auto& wv = pw->value;
                                  if (pointwise) {
                                      auto& gx = px->grad_buffer();
                                      MapMat<T>(gx.data(), kk, n).noalias() +=
                                          CMapMat<T>(wv.data(), cout, kk).transpose() * gout;
                                  } else {
                                      Tensor<T> gcols({kk, n});
                                      MapMat<T>(gcols.data(), kk, n).noalias() =
                                          CMapMat<T>(wv.data(), cout, kk).transpose() * gout;
                                      col2im_add(gcols, px->grad_buffer(), k, g, ho, wo);
                                  }
                              }
                          });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    return leaky_relu(x, T(0));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    Tensor<T> out = x.value();
    for (auto& v : out.storage()) v = v > 0 ? v : v * slope;
    auto px = x.node();
    return make_result<T>(std::move(out), {px}, [px, slope](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= px->value[i] > 0 ? T(1) : slope;
        px->accumulate(g);
    });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.storage()) {
        const double d = static_cast<double>(v);
        v = static_cast<T>(d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d)));
    }
    auto px = x.node();
    return make_result<T>(std::move(out), {px}, [px](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= static_cast<T>(losses::sigmoid(static_cast<double>(px->value[i])));
        px->accumulate(g);
    });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
    require_chw("softmax_channels", x.value().shape());
    const auto& xv = x.value();
    const auto c = xv.channels();
    const auto hw = xv.height() * xv.width();
    Tensor<T> out(xv.shape());
    for (std::int64_t i = 0; i < hw; ++i) {
        T mx = xv[i];
        for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, xv[k * hw + i]);
        T denom = 0;
        for (std::int64_t k = 0; k < c; ++k) {
            const T e = std::exp(xv[k * hw + i] - mx);
            out[k * hw + i] = e;
            denom += e;
        }
        for (std::int64_t k = 0; k < c; ++k) out[k * hw + i] /= denom;
    }
    auto px = x.node();
    auto probs = std::make_shared<Tensor<T>>(out);
    return make_result<T>(std::move(out), {px}, [px, probs, c, hw](Node<T>& self) {
        Tensor<T> g(px->value.shape());
        for (std::int64_t i = 0; i < hw; ++i) {
            T inner = 0;
            for (std::int64_t k = 0; k < c; ++k) inner += self.grad[k * hw + i] * (*probs)[k * hw + i];
            for (std::int64_t k = 0; k < c; ++k)
                g[k * hw + i] = (*probs)[k * hw + i] * (self.grad[k * hw + i] - inner);
        }
        px->accumulate(g);
    });
}

template <typename T>
Var<T> avg_pool3x3(const Var<T>& x) {
    require_chw("avg_pool3x3", x.value().shape());
    const auto& xv = x.value();
    const auto c = xv.channels(), h = xv.height(), w = xv.width();
    auto valid = [h, w](std::int64_t y, std::int64_t xx) {
        const auto ny = std::min(y + 1, h - 1) - std::max(y - 1, std::int64_t(0)) + 1;
        const auto nx = std::min(xx + 1, w - 1) - std::max(xx - 1, std::int64_t(0)) + 1;
        return static_cast<T>(ny * nx);
    };
    Tensor<T> out(xv.shape());
    for (std::int64_t k = 0; k < c; ++k)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) {
                T acc = 0;
                for (auto yy = std::max(y - 1, std::int64_t(0)); yy <= std::min(y + 1, h - 1); ++yy)
                    for (auto x2 = std::max(xx - 1, std::int64_t(0)); x2 <= std::min(xx + 1, w - 1); ++x2)
                        acc += xv.at(k, yy, x2);
                out.at(k, y, xx) = acc / valid(y, xx);
            }
    auto px = x.node();
    return make_result<T>(std::move(out), {px}, [px, c, h, w, valid](Node<T>& self) {
        Tensor<T> g(px->value.shape());
        for (std::int64_t k = 0; k < c; ++k)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    const T share = self.grad.at(k, y, xx) / valid(y, xx);
                    for (auto yy = std::max(y - 1, std::int64_t(0)); yy <= std::min(y + 1, h - 1); ++yy)
                        for (auto x2 = std::max(xx - 1, std::int64_t(0)); x2 <= std::min(xx + 1, w - 1); ++x2)
                            g.at(k, yy, x2) += share;
                }
        px->accumulate(g);
    });
}

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w) {
    require_chw("upsample_bilinear", x.value().shape());
    const auto& xv = x.value();
    const auto c = xv.channels(), h = xv.height(), w = xv.width();
    auto ty = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(h, out_h));
    auto tx = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(w, out_w));
    Tensor<T> out({c, out_h, out_w});
    for (std::int64_t k = 0; k < c; ++k)
        for (std::int64_t y = 0; y < out_h; ++y) {
            const auto& a = (*ty)[static_cast<std::size_t>(y)];
            for (std::int64_t xx = 0; xx < out_w; ++xx) {
                const auto& b = (*tx)[static_cast<std::size_t>(xx)];
                const double v = a.w0 * (b.w0 * xv.at(k, a.i0, b.i0) + b.w1 * xv.at(k, a.i0, b.i1)) +
                                 a.w1 * (b.w0 * xv.at(k, a.i1, b.i0) + b.w1 * xv.at(k, a.i1, b.i1));
                out.at(k, y, xx) = static_cast<T>(v);
            }
        }
    auto px = x.node();
    return make_result<T>(std::move(out), {px}, [px, ty, tx, c, out_h, out_w](Node<T>& self) {
        Tensor<T> g(px->value.shape());
        for (std::int64_t k = 0; k < c; ++k)
            for (std::int64_t y = 0; y < out_h; ++y) {
                const auto& a = (*ty)[static_cast<std::size_t>(y)];
                for (std::int64_t xx = 0; xx < out_w; ++xx) {
                    const auto& b = (*tx)[static_cast<std::size_t>(xx)];
                    const double go = static_cast<double>(self.grad.at(k, y, xx));
                    g.at(k, a.i0, b.i0) += static_cast<T>(go * a.w0 * b.w0);
                    g.at(k, a.i0, b.i1) += static_cast<T>(go * a.w0 * b.w1);
                    g.at(k, a.i1, b.i0) += static_cast<T>(go * a.w1 * b.w0);
                    g.at(k, a.i1, b.i1) += static_cast<T>(go * a.w1 * b.w1);
                }
            }
        px->accumulate(g);
    });
}

template <typename T>
Var<T> self_information(const Var<T>& p, double log_base) {
    Tensor<T> out = fusion::self_information(p.value(), log_base);
    auto pp = p.node();
    const double inv_log_base = 1.0 / std::log(log_base);
    return make_result<T>(std::move(out), {pp}, [pp, inv_log_base](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = static_cast<double>(pp->value[i]);
            g[i] = v > 0 ? static_cast<T>(static_cast<double>(g[i]) * -(std::log(v) + 1.0) * inv_log_base) : T(0);
        }
        pp->accumulate(g);
    });
}

template <typename T>
Var<T> seg_nll(const Var<T>& probs, std::span<const std::uint8_t> labels) {
    const double value = losses::seg_loss(probs.value(), labels);
    auto pp = probs.node();
    std::vector<std::uint8_t> y(labels.begin(), labels.end());
    return make_result<T>(Tensor<T>::scalar(static_cast<T>(value)), {pp}, [pp, y = std::move(y)](Node<T>& self) {
        const auto hw = pp->value.height() * pp->value.width();
        Tensor<T> g(pp->value.shape());
        const double scale = static_cast<double>(self.grad[0]) / static_cast<double>(hw);
        for (std::int64_t i = 0; i < hw; ++i) {
            const auto idx = static_cast<std::size_t>(y[static_cast<std::size_t>(i)] * hw + i);
            const double p = static_cast<double>(pp->value[idx]);
            if (p > losses::kProbClamp) g[idx] = static_cast<T>(-scale / p);
        }
        pp->accumulate(g);
    });
}

template <typename T>
Var<T> berhu_loss(const Var<T>& pred, const Tensor<T>& target, double fraction) {
    const double c = losses::berhu_threshold(pred.value(), target, fraction);
    const double value = losses::depth_loss(pred.value(), target, fraction);
    auto pp = pred.node();
    return make_result<T>(Tensor<T>::scalar(static_cast<T>(value)), {pp}, [pp, target, c, fraction](Node<T>& self) {
        Tensor<T> g(pp->value.shape());
        if (c > 0) {
            const double s = static_cast<double>(self.grad[0]) / static_cast<double>(g.size());
            // The threshold follows the largest residual, so that element
            // also carries dL/dc.
            std::size_t k = 0;
            double emax = -1, dl_dc = 0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double e = static_cast<double>(pp->value[i]) - static_cast<double>(target[i]);
                g[i] = static_cast<T>(s * losses::berhu_grad(e, c));
                if (std::abs(e) > emax) {
                    emax = std::abs(e);
                    k = i;
                }
                if (std::abs(e) > c) dl_dc += (c * c - e * e) / (2 * c * c);
            }
            const double ek = static_cast<double>(pp->value[k]) - static_cast<double>(target[k]);
            g[k] += static_cast<T>(s * dl_dc * fraction * (ek < 0 ? -1.0 : 1.0));
        }
        pp->accumulate(g);
    });
}

template <typename T>
Var<T> domain_bce(const Var<T>& scores, int label) {
    const double value = losses::domain_bce(scores.value(), label);
    auto ps = scores.node();
    return make_result<T>(Tensor<T>::scalar(static_cast<T>(value)), {ps}, [ps, label](Node<T>& self) {
        Tensor<T> g(ps->value.shape());
        const double s = static_cast<double>(self.grad[0]) / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = static_cast<T>(s * losses::bce_grad(static_cast<double>(ps->value[i]), label));
        ps->accumulate(g);
    });
}

#define DADA_INSTANTIATE(T)                                                                              \
    template struct Node<T>;                                                                             \
    template class Var<T>;                                                                               \
    template void backward<T>(const Var<T>&);                                                            \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mul_broadcast_channels<T>(const Var<T>&, const Var<T>&);                             \
    template Var<T> scale<T>(const Var<T>&, T);                                                          \
    template Var<T> sum<T>(const Var<T>&);                                                               \
    template Var<T> mean<T>(const Var<T>&);                                                              \
    template Var<T> dot<T>(const Var<T>&, const Tensor<T>&);                                             \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);                \
    template Var<T> relu<T>(const Var<T>&);                                                              \
    template Var<T> leaky_relu<T>(const Var<T>&, T);                                                     \
    template Var<T> softplus<T>(const Var<T>&);                                                          \
    template Var<T> softmax_channels<T>(const Var<T>&);                                                  \
    template Var<T> avg_pool3x3<T>(const Var<T>&);                                                       \
    template Var<T> upsample_bilinear<T>(const Var<T>&, std::int64_t, std::int64_t);                     \
    template Var<T> self_information<T>(const Var<T>&, double);                                          \
    template Var<T> seg_nll<T>(const Var<T>&, std::span<const std::uint8_t>);                            \
    template Var<T> berhu_loss<T>(const Var<T>&, const Tensor<T>&, double);                              \
    template Var<T> domain_bce<T>(const Var<T>&, int);

DADA_INSTANTIATE(float)
DADA_INSTANTIATE(double)

#undef DADA_INSTANTIATE

}  // namespace dada::ad
