#include "lepde/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lepde/error.hpp"

namespace lepde::ag {

namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeMismatch(msg);
}

// Gathers kernel patches of a [C, img_h, img_w] image onto a grid of
// grid_h x grid_w strided positions: cols is [C*kh*kw, grid_h*grid_w].
void im2col(const double* img, int c, int img_h, int img_w, int kh, int kw, const ConvGeometry& g, int grid_h,
            int grid_w, double* cols) {
    const int grid = grid_h * grid_w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* row = cols + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * grid;
                for (int oy = 0; oy < grid_h; ++oy) {
                    const int iy = oy * g.stride_h - g.pad_h + ky;
                    double* out = row + oy * grid_w;
                    if (iy < 0 || iy >= img_h) {
                        std::fill(out, out + grid_w, 0.0);
                        continue;
                    }
                    const double* src = img + (static_cast<std::size_t>(ci) * img_h + iy) * img_w;
                    for (int ox = 0; ox < grid_w; ++ox) {
                        const int ix = ox * g.stride_w - g.pad_w + kx;
                        out[ox] = (ix >= 0 && ix < img_w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-adds cols back onto the image.
void col2im(const double* cols, int c, int img_h, int img_w, int kh, int kw, const ConvGeometry& g, int grid_h,
            int grid_w, double* img) {
    const int grid = grid_h * grid_w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* row = cols + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * grid;
                for (int oy = 0; oy < grid_h; ++oy) {
                    const int iy = oy * g.stride_h - g.pad_h + ky;
                    if (iy < 0 || iy >= img_h) continue;
                    double* dst = img + (static_cast<std::size_t>(ci) * img_h + iy) * img_w;
                    const double* in = row + oy * grid_w;
                    for (int ox = 0; ox < grid_w; ++ox) {
                        const int ix = ox * g.stride_w - g.pad_w + kx;
                        if (ix >= 0 && ix < img_w) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

bool any_requires_grad(const std::vector<Var>& vs) {
    return std::any_of(vs.begin(), vs.end(), [](const Var& v) { return v.requires_grad(); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Node / Var

void Node::accumulate(const Tensor& g) {
    if (grad.empty()) {
        grad = g;
        grad.reshape_inplace(value.shape());
    } else {
        grad.add_inplace(g);
    }
}

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (!node_ || node_->grad.empty()) return Tensor(node_ ? node_->value.shape() : Shape{});
    return node_->grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

void Var::backward() const {
    if (!node_) throw InvalidArgument("backward on undefined Var");
    if (node_->value.numel() != 1) throw ShapeMismatch("backward requires a single-element root");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->accumulate(Tensor(node_->value.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn || n->grad.empty()) continue;
        n->backward_fn(*n);
        // Interior gradients are consumed exactly once.
        n->grad = Tensor();
    }
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    Var out(std::move(value), false);
    if (t_grad_enabled && any_requires_grad(parents)) {
        auto& n = *out.node();
        n.requires_grad = true;
        for (auto& p : parents) n.parents.push_back(p.node());
        n.backward_fn = std::move(backward);
    }
    return out;
}

Var constant(Tensor t) { return Var(std::move(t), false); }

// ---------------------------------------------------------------------------
// Dense

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    require(xv.rank() == 2 && wv.rank() == 2, "linear: expected rank-2 input and weight");
    const int b = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    require(wv.dim(1) == in, "linear: input features " + std::to_string(in) + " vs weight " + shape_str(wv.shape()));
    require(bias.value().numel() == static_cast<std::size_t>(out), "linear: bias size");

    Tensor y(Shape{b, out});
    MapMat ym(y.data(), b, out);
    ym.noalias() = CMapMat(xv.data(), b, in) * CMapMat(wv.data(), out, in).transpose();
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().data(), out);
    ym.rowwise() += bv;

    return make_result(std::move(y), {x, weight, bias}, [x, weight, bias, b, in, out](Node& self) {
        CMapMat dy(self.grad.data(), b, out);
        if (x.requires_grad()) {
            Tensor dx(Shape{b, in});
            MapMat(dx.data(), b, in).noalias() = dy * CMapMat(weight.value().data(), out, in);
            x.node()->accumulate(dx);
        }
        if (weight.requires_grad()) {
            MapMat(weight.node()->grad_buffer().data(), out, in).noalias() +=
                dy.transpose() * CMapMat(x.value().data(), b, in);
        }
        if (bias.requires_grad()) {
            Eigen::Map<Eigen::RowVectorXd>(bias.node()->grad_buffer().data(), out) += dy.colwise().sum();
        }
    });
}

// ---------------------------------------------------------------------------
// Convolutions

int conv_out_extent(int in, int kernel, int stride, int pad) {
    const int span = in + 2 * pad - kernel;
    if (span < 0) return 0;
    return span / stride + 1;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expected [B,C,H,W] input and [Cout,Cin,kh,kw] weight");
    const int b = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    require(wv.dim(1) == cin, "conv2d: channel mismatch " + shape_str(xv.shape()) + " vs " + shape_str(wv.shape()));
    const int ho = conv_out_extent(h, kh, g.stride_h, g.pad_h);
    const int wo = conv_out_extent(w, kw, g.stride_w, g.pad_w);
    require(ho >= 1 && wo >= 1, "conv2d: output extent collapsed below 1");

    const int k = cin * kh * kw, p = ho * wo;
    Tensor y(Shape{b, cout, ho, wo});
    std::vector<double> cols(static_cast<std::size_t>(k) * p);
    CMapMat wm(wv.data(), cout, k);
    Eigen::Map<const Eigen::VectorXd> bv(bias.value().data(), cout);
    for (int n = 0; n < b; ++n) {
        im2col(xv.data() + static_cast<std::size_t>(n) * cin * h * w, cin, h, w, kh, kw, g, ho, wo, cols.data());
        MapMat ym(y.data() + static_cast<std::size_t>(n) * cout * p, cout, p);
        ym.noalias() = wm * CMapMat(cols.data(), k, p);
        ym.colwise() += bv;
    }

    return make_result(std::move(y), {x, weight, bias}, [=](Node& self) {
        std::vector<double> cols_b(static_cast<std::size_t>(k) * p);
        std::vector<double> dcols(static_cast<std::size_t>(k) * p);
        CMapMat wm_b(weight.value().data(), cout, k);
        Tensor dx;
        if (x.requires_grad()) dx = Tensor(x.value().shape());
        for (int n = 0; n < b; ++n) {
            CMapMat dy(self.grad.data() + static_cast<std::size_t>(n) * cout * p, cout, p);
            if (weight.requires_grad()) {
                im2col(x.value().data() + static_cast<std::size_t>(n) * cin * h * w, cin, h, w, kh, kw, g, ho, wo,
                       cols_b.data());
                MapMat(weight.node()->grad_buffer().data(), cout, k).noalias() +=
                    dy * CMapMat(cols_b.data(), k, p).transpose();
            }
            if (bias.requires_grad()) {
                Eigen::Map<Eigen::VectorXd>(bias.node()->grad_buffer().data(), cout) += dy.rowwise().sum();
            }
            if (x.requires_grad()) {
                MapMat(dcols.data(), k, p).noalias() = wm_b.transpose() * dy;
                col2im(dcols.data(), cin, h, w, kh, kw, g, ho, wo,
                       dx.data() + static_cast<std::size_t>(n) * cin * h * w);
            }
        }
        if (x.requires_grad()) x.node()->accumulate(dx);
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g, int out_h, int out_w) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    require(xv.rank() == 4 && wv.rank() == 4, "conv_transpose2d: expected rank-4 input and weight");
    const int b = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int cout = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    require(wv.dim(0) == cin, "conv_transpose2d: channel mismatch");
    // The transposed conv is the adjoint of a conv mapping (out_h,out_w) -> (h,w).
    require(conv_out_extent(out_h, kh, g.stride_h, g.pad_h) == h && conv_out_extent(out_w, kw, g.stride_w, g.pad_w) == w,
            "conv_transpose2d: output extent " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                " unreachable from " + std::to_string(h) + "x" + std::to_string(w));

    const int k = cout * kh * kw, p = h * w, po = out_h * out_w;
    Tensor y(Shape{b, cout, out_h, out_w});
    std::vector<double> cols(static_cast<std::size_t>(k) * p);
    CMapMat wm(wv.data(), cin, k);
    for (int n = 0; n < b; ++n) {
        MapMat(cols.data(), k, p).noalias() =
            wm.transpose() * CMapMat(xv.data() + static_cast<std::size_t>(n) * cin * p, cin, p);
        double* yo = y.data() + static_cast<std::size_t>(n) * cout * po;
        col2im(cols.data(), cout, out_h, out_w, kh, kw, g, h, w, yo);
        for (int c = 0; c < cout; ++c) {
            const double bc = bias.value()[c];
            for (int i = 0; i < po; ++i) yo[c * po + i] += bc;
        }
    }

    return make_result(std::move(y), {x, weight, bias}, [=](Node& self) {
        std::vector<double> dcols(static_cast<std::size_t>(k) * p);
        CMapMat wm_b(weight.value().data(), cin, k);
        Tensor dx;
        if (x.requires_grad()) dx = Tensor(x.value().shape());
        for (int n = 0; n < b; ++n) {
            const double* dy = self.grad.data() + static_cast<std::size_t>(n) * cout * po;
            im2col(dy, cout, out_h, out_w, kh, kw, g, h, w, dcols.data());
            CMapMat dc(dcols.data(), k, p);
            if (x.requires_grad()) {
                MapMat(dx.data() + static_cast<std::size_t>(n) * cin * p, cin, p).noalias() = wm_b * dc;
            }
            if (weight.requires_grad()) {
                MapMat(weight.node()->grad_buffer().data(), cin, k).noalias() +=
                    CMapMat(x.value().data() + static_cast<std::size_t>(n) * cin * p, cin, p) * dc.transpose();
            }
            if (bias.requires_grad()) {
                auto& gb = bias.node()->grad_buffer();
                for (int c = 0; c < cout; ++c) {
                    double s = 0.0;
                    for (int i = 0; i < po; ++i) s += dy[c * po + i];
                    gb[c] += s;
                }
            }
        }
        if (x.requires_grad()) x.node()->accumulate(dx);
    });
}

// ---------------------------------------------------------------------------
// Normalization and activations

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    const auto& xv = x.value();
    require(xv.rank() >= 2, "group_norm: expected [B, C, ...]");
    const int b = xv.dim(0), c = xv.dim(1);
    require(groups >= 1 && c % groups == 0, "group_norm: channels " + std::to_string(c) +
                                                " not divisible by groups " + std::to_string(groups));
    require(gamma.value().numel() == static_cast<std::size_t>(c) && beta.value().numel() == static_cast<std::size_t>(c),
            "group_norm: affine size");
    const std::size_t spatial = xv.numel() / (static_cast<std::size_t>(b) * c);
    const int cpg = c / groups;
    const std::size_t group_size = spatial * cpg;

    Tensor xhat(xv.shape());
    std::vector<double> rstd(static_cast<std::size_t>(b) * groups);
    Tensor y(xv.shape());
    for (int n = 0; n < b; ++n) {
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t off = (static_cast<std::size_t>(n) * c + static_cast<std::size_t>(gi) * cpg) * spatial;
            double mean = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) mean += xv[off + i];
            mean /= static_cast<double>(group_size);
            double var = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) {
                const double d = xv[off + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(group_size);
            const double r = 1.0 / std::sqrt(var + eps);
            rstd[static_cast<std::size_t>(n) * groups + gi] = r;
            for (int cc = 0; cc < cpg; ++cc) {
                const int ch = gi * cpg + cc;
                const double ga = gamma.value()[ch], be = beta.value()[ch];
                for (std::size_t s = 0; s < spatial; ++s) {
                    const std::size_t idx = off + cc * spatial + s;
                    xhat[idx] = (xv[idx] - mean) * r;
                    y[idx] = xhat[idx] * ga + be;
                }
            }
        }
    }

    return make_result(std::move(y), {x, gamma, beta},
                       [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), b, c, groups, cpg, spatial,
                        group_size](Node& self) {
                           const Tensor& dy = self.grad;
                           Tensor dx;
                           if (x.requires_grad()) dx = Tensor(x.value().shape());
                           Tensor* dg = gamma.requires_grad() ? &gamma.node()->grad_buffer() : nullptr;
                           Tensor* db = beta.requires_grad() ? &beta.node()->grad_buffer() : nullptr;
                           for (int n = 0; n < b; ++n) {
                               for (int gi = 0; gi < groups; ++gi) {
                                   const std::size_t off =
                                       (static_cast<std::size_t>(n) * c + static_cast<std::size_t>(gi) * cpg) * spatial;
                                   double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                                   for (int cc = 0; cc < cpg; ++cc) {
                                       const int ch = gi * cpg + cc;
                                       const double ga = gamma.value()[ch];
                                       double sg = 0.0, sb = 0.0;
                                       for (std::size_t s = 0; s < spatial; ++s) {
                                           const std::size_t idx = off + cc * spatial + s;
                                           sg += dy[idx] * xhat[idx];
                                           sb += dy[idx];
                                           const double dxh = dy[idx] * ga;
                                           sum_dxhat += dxh;
                                           sum_dxhat_xhat += dxh * xhat[idx];
                                       }
                                       if (dg) (*dg)[ch] += sg;
                                       if (db) (*db)[ch] += sb;
                                   }
                                   if (!x.requires_grad()) continue;
                                   const double r = rstd[static_cast<std::size_t>(n) * groups + gi];
                                   const double inv_n = 1.0 / static_cast<double>(group_size);
                                   for (int cc = 0; cc < cpg; ++cc) {
                                       const double ga = gamma.value()[gi * cpg + cc];
                                       for (std::size_t s = 0; s < spatial; ++s) {
                                           const std::size_t idx = off + cc * spatial + s;
                                           const double dxh = dy[idx] * ga;
                                           dx[idx] = r * (dxh - inv_n * sum_dxhat - xhat[idx] * inv_n * sum_dxhat_xhat);
                                       }
                                   }
                               }
                           }
                           if (x.requires_grad()) x.node()->accumulate(dx);
                       });
}

Var elu(const Var& x) {
    Tensor y(x.value().shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : std::expm1(xv[i]);
    Tensor yc = y;
    return make_result(std::move(y), {x}, [x, yc = std::move(yc)](Node& self) {
        Tensor dx(yc.shape());
        const auto& xv2 = x.value();
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = self.grad[i] * (xv2[i] > 0.0 ? 1.0 : yc[i] + 1.0);
        x.node()->accumulate(dx);
    });
}

// ---------------------------------------------------------------------------
// Elementwise and structural

Var add(const Var& a, const Var& b) {
    require(a.value().numel() == b.value().numel(), "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = a.value();
    y.add_inplace(b.value());
    return make_result(std::move(y), {a, b}, [a, b](Node& self) {
        if (a.requires_grad()) a.node()->accumulate(self.grad);
        if (b.requires_grad()) b.node()->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.value().numel() == b.value().numel(), "sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
    return make_result(std::move(y), {a, b}, [a, b](Node& self) {
        if (a.requires_grad()) a.node()->accumulate(self.grad);
        if (b.requires_grad()) {
            Tensor g = self.grad;
            for (auto& v : g.vec()) v = -v;
            b.node()->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor y = a.value();
    for (auto& v : y.vec()) v *= s;
    return make_result(std::move(y), {a}, [a, s](Node& self) {
        Tensor g = self.grad;
        for (auto& v : g.vec()) v *= s;
        a.node()->accumulate(g);
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor y = a.value().reshaped(std::move(shape));
    return make_result(std::move(y), {a}, [a](Node& self) { a.node()->accumulate(self.grad); });
}

Var concat_features(const Var& a, const Var& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0),
            "concat_features: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const int rows = av.dim(0), n1 = av.dim(1), n2 = bv.dim(1);
    Tensor y(Shape{rows, n1 + n2});
    for (int r = 0; r < rows; ++r) {
        std::copy_n(av.data() + static_cast<std::size_t>(r) * n1, n1, y.data() + static_cast<std::size_t>(r) * (n1 + n2));
        std::copy_n(bv.data() + static_cast<std::size_t>(r) * n2, n2,
                    y.data() + static_cast<std::size_t>(r) * (n1 + n2) + n1);
    }
    return make_result(std::move(y), {a, b}, [a, b, rows, n1, n2](Node& self) {
        if (a.requires_grad()) {
            Tensor g(Shape{rows, n1});
            for (int r = 0; r < rows; ++r)
                std::copy_n(self.grad.data() + static_cast<std::size_t>(r) * (n1 + n2), n1,
                            g.data() + static_cast<std::size_t>(r) * n1);
            a.node()->accumulate(g);
        }
        if (b.requires_grad()) {
            Tensor g(Shape{rows, n2});
            for (int r = 0; r < rows; ++r)
                std::copy_n(self.grad.data() + static_cast<std::size_t>(r) * (n1 + n2) + n1, n2,
                            g.data() + static_cast<std::size_t>(r) * n2);
            b.node()->accumulate(g);
        }
    });
}

Var stack_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "stack_rows: no parts");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    int rows = 0;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        require(t == tail, "stack_rows: trailing shape mismatch " + shape_str(p.shape()));
        rows += p.shape()[0];
    }
    Shape out_shape = tail;
    out_shape.insert(out_shape.begin(), rows);
    Tensor y(out_shape);
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy(p.value().vec().begin(), p.value().vec().end(), y.vec().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().numel();
    }
    return make_result(std::move(y), parts, [parts, offsets](Node& self) {
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (!parts[i].requires_grad()) continue;
            Tensor g(parts[i].shape());
            std::copy_n(self.grad.data() + offsets[i], g.numel(), g.data());
            parts[i].node()->accumulate(g);
        }
    });
}

Var slice_rows(const Var& a, int start, int count) {
    const auto& av = a.value();
    require(av.rank() >= 1 && start >= 0 && count >= 0 && start + count <= av.dim(0), "slice_rows: out of range");
    const std::size_t row = av.numel() / static_cast<std::size_t>(av.dim(0));
    Shape s = av.shape();
    s[0] = count;
    Tensor y(s);
    std::copy_n(av.data() + static_cast<std::size_t>(start) * row, y.numel(), y.data());
    return make_result(std::move(y), {a}, [a, start, row](Node& self) {
        Tensor g(a.shape());
        std::copy_n(self.grad.data(), self.grad.numel(), g.data() + static_cast<std::size_t>(start) * row);
        a.node()->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// Losses

namespace {

struct RowView {
    int rows;
    std::size_t cols;
};

RowView rows_of(const Var& pred, const Var& target, const char* op) {
    require(pred.value().numel() == target.value().numel() && pred.value().rank() >= 1,
            std::string(op) + ": " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const int rows = pred.shape()[0];
    return {rows, pred.value().numel() / static_cast<std::size_t>(rows)};
}

void accumulate_pair(const Var& pred, const Var& target, const Tensor& gp, const Tensor& gt) {
    if (pred.requires_grad()) pred.node()->accumulate(gp);
    if (target.requires_grad()) target.node()->accumulate(gt);
}

}  // namespace

Var mse(const Var& pred, const Var& target) {
    rows_of(pred, target, "mse");
    const auto& p = pred.value();
    const auto& t = target.value();
    const double n = static_cast<double>(p.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double d = p[i] - t[i];
        s += d * d;
    }
    return make_result(Tensor::scalar(s / n), {pred, target}, [pred, target, n](Node& self) {
        const double g = self.grad[0];
        Tensor gp(pred.shape()), gt(target.shape());
        for (std::size_t i = 0; i < gp.numel(); ++i) {
            const double d = 2.0 * g * (pred.value()[i] - target.value()[i]) / n;
            gp[i] = d;
            gt[i] = -d;
        }
        accumulate_pair(pred, target, gp, gt);
    });
}

Var rmse(const Var& pred, const Var& target) {
    const auto [rows, cols] = rows_of(pred, target, "rmse");
    std::vector<double> r(rows);
    double total = 0.0;
    for (int b = 0; b < rows; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < cols; ++i) {
            const double d = pred.value()[b * cols + i] - target.value()[b * cols + i];
            s += d * d;
        }
        r[b] = std::sqrt(s / static_cast<double>(cols));
        total += r[b];
    }
    return make_result(Tensor::scalar(total / rows), {pred, target}, [pred, target, r, rows, cols](Node& self) {
        const double g = self.grad[0];
        Tensor gp(pred.shape()), gt(target.shape());
        for (int b = 0; b < rows; ++b) {
            if (r[b] == 0.0) continue;
            const double f = g / (rows * static_cast<double>(cols) * r[b]);
            for (std::size_t i = 0; i < cols; ++i) {
                const std::size_t idx = b * cols + i;
                const double d = f * (pred.value()[idx] - target.value()[idx]);
                gp[idx] = d;
                gt[idx] = -d;
            }
        }
        accumulate_pair(pred, target, gp, gt);
    });
}

Var relative_l2(const Var& pred, const Var& target) {
    const auto [rows, cols] = rows_of(pred, target, "relative_l2");
    std::vector<double> err(rows), tn(rows);
    double total = 0.0;
    for (int b = 0; b < rows; ++b) {
        double s = 0.0, t2 = 0.0;
        for (std::size_t i = 0; i < cols; ++i) {
            const std::size_t idx = b * cols + i;
            const double d = pred.value()[idx] - target.value()[idx];
            s += d * d;
            t2 += target.value()[idx] * target.value()[idx];
        }
        err[b] = std::sqrt(s);
        tn[b] = std::max(std::sqrt(t2), 1e-12);
        total += err[b] / tn[b];
    }
    return make_result(Tensor::scalar(total / rows), {pred, target}, [pred, target, err, tn, rows, cols](Node& self) {
        const double g = self.grad[0] / rows;
        Tensor gp(pred.shape()), gt(target.shape());
        for (int b = 0; b < rows; ++b) {
            for (std::size_t i = 0; i < cols; ++i) {
                const std::size_t idx = b * cols + i;
                const double d = pred.value()[idx] - target.value()[idx];
                const double dp = err[b] > 0.0 ? d / (err[b] * tn[b]) : 0.0;
                gp[idx] = g * dp;
                gt[idx] = g * (-dp - err[b] * target.value()[idx] / (tn[b] * tn[b] * tn[b]));
            }
        }
        accumulate_pair(pred, target, gp, gt);
    });
}

Var relative_sq_error(const Var& pred, const Var& target, double floor) {
    const auto [rows, cols] = rows_of(pred, target, "relative_sq_error");
    std::vector<double> num(rows), den(rows);
    std::vector<bool> floored(rows, false);
    double total = 0.0;
    for (int b = 0; b < rows; ++b) {
        double s = 0.0, t2 = 0.0;
        for (std::size_t i = 0; i < cols; ++i) {
            const std::size_t idx = b * cols + i;
            const double d = pred.value()[idx] - target.value()[idx];
            s += d * d;
            t2 += target.value()[idx] * target.value()[idx];
        }
        if (t2 < floor) {
            floored[b] = true;
            t2 = floor;
            warn("relative_sq_error: target norm below floor; denominator floored");
        }
        num[b] = s;
        den[b] = t2;
        total += s / t2;
    }
    return make_result(Tensor::scalar(total / rows), {pred, target},
                       [pred, target, num, den, floored, rows, cols](Node& self) {
                           const double g = self.grad[0] / rows;
                           Tensor gp(pred.shape()), gt(target.shape());
                           for (int b = 0; b < rows; ++b) {
                               for (std::size_t i = 0; i < cols; ++i) {
                                   const std::size_t idx = b * cols + i;
                                   const double d = pred.value()[idx] - target.value()[idx];
                                   gp[idx] = g * 2.0 * d / den[b];
                                   gt[idx] = -gp[idx];
                                   if (!floored[b])
                                       gt[idx] -= g * 2.0 * num[b] * target.value()[idx] / (den[b] * den[b]);
                               }
                           }
                           accumulate_pair(pred, target, gp, gt);
                       });
}

Var sum_scalars(const std::vector<Var>& terms) {
    double s = 0.0;
    for (const auto& t : terms) s += t.value().item();
    return make_result(Tensor::scalar(s), terms, [terms](Node& self) {
        for (const auto& t : terms)
            if (t.requires_grad()) t.node()->accumulate(self.grad);
    });
}

}  // namespace lepde::ag
