#include "cdst/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace cdst {

namespace {

size_t numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(size_t m, size_t k, size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
    for (size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            double av = ai[p];
            const double* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(size_t m, size_t k, size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(size_t m, size_t k, size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
    for (size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            double av = ap[i];
            double* ci = c + i * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

using NodePtr = std::shared_ptr<Tensor::Node>;

thread_local bool g_no_grad = false;

Tensor make_result(Shape shape, std::vector<NodePtr> parents,
                   std::function<void(Tensor::Node&)> backward_fn) {
    auto n = std::make_shared<Tensor::Node>();
    n->shape = std::move(shape);
    n->value.resize(numel(n->shape));
    if (!g_no_grad)
        for (const auto& p : parents)
            if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

std::vector<double>& pgrad(Tensor::Node& self, size_t i) { return self.parents[i]->grad; }
bool pneeds(const Tensor::Node& self, size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value.assign(numel(shape), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
    if (data.size() != numel(shape))
        throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::randn(const Shape& shape, RandomSource& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    for (double& v : t.value()) v = stddev * rng.normal();
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
size_t Tensor::size() const { return node_->value.size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }
std::vector<double>& Tensor::value() { return node_->value; }
const std::vector<double>& Tensor::value() const { return node_->value; }

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: tensor has " +
                                            std::to_string(size()) + " elements");
    return node_->value[0];
}

Tensor Tensor::detach() const {
    return Tensor::from(node_->shape, node_->value, false);
}

void Tensor::backward() {
    if (size() != 1) throw std::logic_error("Tensor::backward: root must be scalar");
    if (!node_->requires_grad) return;

    // Iterative postorder over grad-requiring ancestors.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (n->backward_fn) {
            n->grad.assign(n->value.size(), 0.0);  // interior grads are per-call
        } else if (n->grad.empty()) {
            n->grad.assign(n->value.size(), 0.0);  // leaf grads accumulate
        }
    }
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

NoGradGuard::NoGradGuard() : prev_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = prev_; }
bool NoGradGuard::active() { return g_no_grad; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        shape_error("matmul", a.shape(), b.shape());
    size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_result({m, n}, {a.node(), b.node()}, [m, k, n](Tensor::Node& self) {
        const double* g = self.grad.data();
        const double* av = self.parents[0]->value.data();
        const double* bv = self.parents[1]->value.data();
        if (pneeds(self, 0)) gemm_nt(m, n, k, g, bv, pgrad(self, 0).data());
        if (pneeds(self, 1)) gemm_tn(k, m, n, av, g, pgrad(self, 1).data());
    });
    std::fill(out.value().begin(), out.value().end(), 0.0);
    gemm_nn(m, k, n, a.value().data(), b.value().data(), out.value().data());
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) shape_error("transpose", a.shape(), {});
    size_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_result({n, m}, {a.node()}, [m, n](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.value()[j * m + i] = a.value()[i * n + j];
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
    Tensor out = make_result(a.shape(), {a.node(), b.node()}, [](Tensor::Node& self) {
        for (int p = 0; p < 2; ++p) {
            if (!pneeds(self, p)) continue;
            double* g = pgrad(self, p).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
    for (size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
    Tensor out = make_result(a.shape(), {a.node(), b.node()}, [](Tensor::Node& self) {
        if (pneeds(self, 0)) {
            double* g = pgrad(self, 0).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (pneeds(self, 1)) {
            double* g = pgrad(self, 1).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
    for (size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    Tensor out = make_result(a.shape(), {a.node(), b.node()}, [](Tensor::Node& self) {
        const double* av = self.parents[0]->value.data();
        const double* bv = self.parents[1]->value.data();
        if (pneeds(self, 0)) {
            double* g = pgrad(self, 0).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (pneeds(self, 1)) {
            double* g = pgrad(self, 1).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
    for (size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_result(a.shape(), {a.node()}, [s](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    });
    for (size_t i = 0; i < out.size(); ++i) out.value()[i] = s * a.value()[i];
    return out;
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
    if (a.shape().size() != 2 || bias.shape().size() != 1 || a.dim(1) != bias.dim(0))
        shape_error("add_rowwise", a.shape(), bias.shape());
    size_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_result(a.shape(), {a.node(), bias.node()}, [m, n](Tensor::Node& self) {
        if (pneeds(self, 0)) {
            double* g = pgrad(self, 0).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (pneeds(self, 1)) {
            double* g = pgrad(self, 1).data();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.value()[i * n + j] = a.value()[i * n + j] + bias.value()[j];
    return out;
}

Tensor mul_rowwise(const Tensor& a, const Tensor& g) {
    if (a.shape().size() != 2 || g.shape().size() != 1 || a.dim(1) != g.dim(0))
        shape_error("mul_rowwise", a.shape(), g.shape());
    size_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_result(a.shape(), {a.node(), g.node()}, [m, n](Tensor::Node& self) {
        const double* av = self.parents[0]->value.data();
        const double* gv = self.parents[1]->value.data();
        if (pneeds(self, 0)) {
            double* d = pgrad(self, 0).data();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) d[i * n + j] += self.grad[i * n + j] * gv[j];
        }
        if (pneeds(self, 1)) {
            double* d = pgrad(self, 1).data();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) d[j] += self.grad[i * n + j] * av[i * n + j];
        }
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.value()[i * n + j] = a.value()[i * n + j] * g.value()[j];
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    if (a.shape().size() != 2) shape_error("softmax_rows", a.shape(), {});
    size_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_result(a.shape(), {a.node()}, [m, n](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        const double* y = self.value.data();
        for (size_t i = 0; i < m; ++i) {
            const double* yi = y + i * n;
            const double* gi = self.grad.data() + i * n;
            double dot = 0.0;
            for (size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
            for (size_t j = 0; j < n; ++j) g[i * n + j] += yi[j] * (gi[j] - dot);
        }
    });
    for (size_t i = 0; i < m; ++i) {
        const double* xi = a.value().data() + i * n;
        double* yi = out.value().data() + i * n;
        double mx = xi[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        for (size_t j = 0; j < n; ++j) yi[j] /= s;
    }
    return out;
}

Tensor layer_norm(const Tensor& a, double eps) {
    if (a.shape().size() != 2) shape_error("layer_norm", a.shape(), {});
    size_t m = a.dim(0), n = a.dim(1);
    auto inv_sigma = std::make_shared<std::vector<double>>(m);
    Tensor out = make_result(a.shape(), {a.node()}, [m, n, inv_sigma](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        const double* y = self.value.data();
        for (size_t i = 0; i < m; ++i) {
            const double* yi = y + i * n;
            const double* gi = self.grad.data() + i * n;
            double mg = 0.0, mgy = 0.0;
            for (size_t j = 0; j < n; ++j) {
                mg += gi[j];
                mgy += gi[j] * yi[j];
            }
            mg /= n;
            mgy /= n;
            double is = (*inv_sigma)[i];
            for (size_t j = 0; j < n; ++j) g[i * n + j] += is * (gi[j] - mg - yi[j] * mgy);
        }
    });
    for (size_t i = 0; i < m; ++i) {
        const double* xi = a.value().data() + i * n;
        double* yi = out.value().data() + i * n;
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += xi[j];
        mean /= n;
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            double d = xi[j] - mean;
            var += d * d;
        }
        var /= n;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (size_t j = 0; j < n; ++j) yi[j] = (xi[j] - mean) * is;
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = make_result(a.shape(), {a.node()}, [](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        const double* x = self.parents[0]->value.data();
        double* g = pgrad(self, 0).data();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double phi = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
            g[i] += self.grad[i] * (phi + x[i] * pdf);
        }
    });
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a.value()[i];
        out.value()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
    if (x.shape().size() != 3 || w.shape().size() != 4 || w.dim(1) != x.dim(0) ||
        w.dim(2) != 3 || w.dim(3) != 3)
        shape_error("conv2d", x.shape(), w.shape());
    if (bias.shape().size() != 1 || bias.dim(0) != w.dim(0))
        shape_error("conv2d(bias)", w.shape(), bias.shape());
    if (stride != 1 && stride != 2)
        throw std::invalid_argument("conv2d: stride must be 1 or 2");

    size_t ci_n = x.dim(0), h = x.dim(1), wd = x.dim(2), co_n = w.dim(0);
    size_t ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;

    Tensor out = make_result(
        {co_n, ho, wo}, {x.node(), w.node(), bias.node()},
        [ci_n, h, wd, co_n, ho, wo, stride](Tensor::Node& self) {
            const double* xv = self.parents[0]->value.data();
            const double* wv = self.parents[1]->value.data();
            const double* g = self.grad.data();
            bool need_x = pneeds(self, 0), need_w = pneeds(self, 1);
            if (need_x || need_w) {
                double* dx = need_x ? pgrad(self, 0).data() : nullptr;
                double* dw = need_w ? pgrad(self, 1).data() : nullptr;
                for (size_t co = 0; co < co_n; ++co)
                    for (size_t ci = 0; ci < ci_n; ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                double wval = wv[((co * ci_n + ci) * 3 + ky) * 3 + kx];
                                double wacc = 0.0;
                                for (size_t oy = 0; oy < ho; ++oy) {
                                    long iy = static_cast<long>(oy) * stride + ky - 1;
                                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                    const double* grow = g + (co * ho + oy) * wo;
                                    const double* xrow = xv + (ci * h + iy) * wd;
                                    double* dxrow = need_x ? dx + (ci * h + iy) * wd : nullptr;
                                    if (stride == 1) {
                                        long off = kx - 1;
                                        size_t xs = kx == 0 ? 1 : 0;
                                        size_t xe = kx == 2 ? wo - 1 : wo;
                                        if (need_x) {
                                            double* drow = dxrow + off;
                                            for (size_t ox = xs; ox < xe; ++ox)
                                                drow[ox] += wval * grow[ox];
                                        }
                                        if (need_w) {
                                            const double* srow = xrow + off;
                                            for (size_t ox = xs; ox < xe; ++ox)
                                                wacc += grow[ox] * srow[ox];
                                        }
                                    } else {
                                        for (size_t ox = 0; ox < wo; ++ox) {
                                            long ix = static_cast<long>(ox) * 2 + kx - 1;
                                            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                            if (need_x) dxrow[ix] += wval * grow[ox];
                                            if (need_w) wacc += grow[ox] * xrow[ix];
                                        }
                                    }
                                }
                                if (need_w) dw[((co * ci_n + ci) * 3 + ky) * 3 + kx] += wacc;
                            }
            }
            if (pneeds(self, 2)) {
                double* db = pgrad(self, 2).data();
                for (size_t co = 0; co < co_n; ++co) {
                    double acc = 0.0;
                    const double* gp = g + co * ho * wo;
                    for (size_t i = 0; i < ho * wo; ++i) acc += gp[i];
                    db[co] += acc;
                }
            }
        });

    const double* xv = x.value().data();
    const double* wv = w.value().data();
    double* ov = out.value().data();
    for (size_t co = 0; co < co_n; ++co) {
        double b = bias.value()[co];
        double* plane = ov + co * ho * wo;
        std::fill(plane, plane + ho * wo, b);
        for (size_t ci = 0; ci < ci_n; ++ci)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    double wval = wv[((co * ci_n + ci) * 3 + ky) * 3 + kx];
                    for (size_t oy = 0; oy < ho; ++oy) {
                        long iy = static_cast<long>(oy) * stride + ky - 1;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        double* orow = plane + oy * wo;
                        const double* xrow = xv + (ci * h + iy) * wd;
                        if (stride == 1) {
                            long dx = kx - 1;
                            size_t xs = dx < 0 ? 1 : 0;
                            size_t xe = dx > 0 ? wo - 1 : wo;
                            const double* src = xrow + xs + dx;
                            double* dst = orow + xs;
                            size_t cnt = xe - xs;
                            for (size_t i = 0; i < cnt; ++i) dst[i] += wval * src[i];
                        } else {
                            for (size_t ox = 0; ox < wo; ++ox) {
                                long ix = static_cast<long>(ox) * 2 + kx - 1;
                                if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                orow[ox] += wval * xrow[ix];
                            }
                        }
                    }
                }
    }
    return out;
}

Tensor add_channelwise(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 3 || b.shape().size() != 1 || b.dim(0) != x.dim(0))
        shape_error("add_channelwise", x.shape(), b.shape());
    size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out = make_result(x.shape(), {x.node(), b.node()}, [c, hw](Tensor::Node& self) {
        if (pneeds(self, 0)) {
            double* g = pgrad(self, 0).data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (pneeds(self, 1)) {
            double* g = pgrad(self, 1).data();
            for (size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (size_t i = 0; i < hw; ++i) acc += self.grad[ch * hw + i];
                g[ch] += acc;
            }
        }
    });
    for (size_t ch = 0; ch < c; ++ch) {
        double bv = b.value()[ch];
        for (size_t i = 0; i < hw; ++i) out.value()[ch * hw + i] = x.value()[ch * hw + i] + bv;
    }
    return out;
}

Tensor upsample2x(const Tensor& x) {
    if (x.shape().size() != 3) shape_error("upsample2x", x.shape(), {});
    size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out = make_result({c, 2 * h, 2 * w}, {x.node()}, [c, h, w](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        for (size_t ch = 0; ch < c; ++ch)
            for (size_t y = 0; y < 2 * h; ++y)
                for (size_t xx = 0; xx < 2 * w; ++xx)
                    g[(ch * h + y / 2) * w + xx / 2] +=
                        self.grad[(ch * 2 * h + y) * 2 * w + xx];
    });
    for (size_t ch = 0; ch < c; ++ch)
        for (size_t y = 0; y < 2 * h; ++y)
            for (size_t xx = 0; xx < 2 * w; ++xx)
                out.value()[(ch * 2 * h + y) * 2 * w + xx] =
                    x.value()[(ch * h + y / 2) * w + xx / 2];
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    size_t cols = parts[0].dim(1), rows = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(1) != cols)
            shape_error("concat_rows", parts[0].shape(), p.shape());
        rows += p.dim(0);
        nodes.push_back(p.node());
    }
    Tensor out = make_result({rows, cols}, nodes, [cols](Tensor::Node& self) {
        size_t off = 0;
        for (size_t p = 0; p < self.parents.size(); ++p) {
            size_t len = self.parents[p]->value.size();
            if (pneeds(self, p)) {
                double* g = pgrad(self, p).data();
                for (size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
            }
            off += len;
        }
    });
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().begin(), p.value().end(), out.value().begin() + off);
        off += p.size();
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.dim(1) != b.dim(1) ||
        a.dim(2) != b.dim(2))
        shape_error("concat_channels", a.shape(), b.shape());
    Tensor out = make_result({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)},
                             {a.node(), b.node()}, [](Tensor::Node& self) {
        size_t la = self.parents[0]->value.size();
        size_t lb = self.parents[1]->value.size();
        if (pneeds(self, 0)) {
            double* g = pgrad(self, 0).data();
            for (size_t i = 0; i < la; ++i) g[i] += self.grad[i];
        }
        if (pneeds(self, 1)) {
            double* g = pgrad(self, 1).data();
            for (size_t i = 0; i < lb; ++i) g[i] += self.grad[la + i];
        }
    });
    std::copy(a.value().begin(), a.value().end(), out.value().begin());
    std::copy(b.value().begin(), b.value().end(), out.value().begin() + a.size());
    return out;
}

Tensor mean_pool_rows(const Tensor& a) {
    if (a.shape().size() != 2) shape_error("mean_pool_rows", a.shape(), {});
    size_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_result({1, n}, {a.node()}, [m, n](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] / m;
    });
    for (size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (size_t i = 0; i < m; ++i) s += a.value()[i * n + j];
        out.value()[j] = s / m;
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    size_t n = a.size();
    Tensor out = make_result({1}, {a.node()}, [n](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        double gv = self.grad[0] / n;
        for (size_t i = 0; i < n; ++i) g[i] += gv;
    });
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.value()[0] = s / n;
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
    size_t n = a.size();
    Tensor out = make_result({1}, {a.node(), b.node()}, [n](Tensor::Node& self) {
        const double* av = self.parents[0]->value.data();
        const double* bv = self.parents[1]->value.data();
        double gv = 2.0 * self.grad[0] / n;
        if (pneeds(self, 0)) {
            double* g = pgrad(self, 0).data();
            for (size_t i = 0; i < n; ++i) g[i] += gv * (av[i] - bv[i]);
        }
        if (pneeds(self, 1)) {
            double* g = pgrad(self, 1).data();
            for (size_t i = 0; i < n; ++i) g[i] -= gv * (av[i] - bv[i]);
        }
    });
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    out.value()[0] = s / n;
    return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
    Tensor out = make_result(shape, {a.node()}, [](Tensor::Node& self) {
        if (!pneeds(self, 0)) return;
        double* g = pgrad(self, 0).data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
    out.value() = a.value();
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, size_t d) {
    if (d == 0) throw std::invalid_argument("attention: head dim must be > 0");
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2 ||
        q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
        shape_error("attention", q.shape(), k.shape());
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax_rows(scores), v);
}

}  // namespace cdst
