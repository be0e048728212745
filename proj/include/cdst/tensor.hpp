#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cdst/rng.hpp"

namespace cdst {

using Shape = std::vector<size_t>;

// Reverse-mode autodiff tensor (float64). Ops build a graph owned by their
// results; backward() on a scalar propagates exact analytic gradients.
// Gradients of leaf tensors accumulate across backward calls until cleared.
class Tensor {
 public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double v, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor randn(const Shape& shape, RandomSource& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    size_t size() const;
    size_t dim(size_t i) const { return shape().at(i); }
    bool requires_grad() const;
    void set_requires_grad(bool v);

    std::vector<double>& value();
    const std::vector<double>& value() const;
    // Allocated on demand; persists across backward calls for leaves.
    std::vector<double>& grad();
    void zero_grad();

    double item() const;  // single-element tensors

    // Runs reverse-mode accumulation from this scalar.
    void backward();

    // Value copy detached from the graph.
    Tensor detach() const;

    struct Node;
    const std::shared_ptr<Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
    std::shared_ptr<Node> node_;
};

struct Tensor::Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // adds into parents' grads
};

// Disables graph recording while alive; forwards run detached.
class NoGradGuard {
 public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    static bool active();

 private:
    bool prev_;
};

// ---- ops ----
Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k]x[k,n]
Tensor transpose(const Tensor& a);                        // [m,n]->[n,m]
Tensor add(const Tensor& a, const Tensor& b);             // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);             // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_rowwise(const Tensor& a, const Tensor& bias);  // [m,n] + [n]
Tensor mul_rowwise(const Tensor& a, const Tensor& g);     // [m,n] * [n]
Tensor softmax_rows(const Tensor& a);                     // per-row softmax
Tensor layer_norm(const Tensor& a, double eps = 1e-5);    // per-row normalize
Tensor gelu(const Tensor& a);                             // erf form
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride);
Tensor add_channelwise(const Tensor& x, const Tensor& b);  // [C,H,W] + [C]
Tensor upsample2x(const Tensor& x);                       // [C,H,W] nearest
Tensor concat_rows(const std::vector<Tensor>& parts);     // along dim 0
Tensor concat_channels(const Tensor& a, const Tensor& b); // [C,H,W] dim 0
Tensor mean_pool_rows(const Tensor& a);                   // [m,n]->[1,n]
Tensor mean_all(const Tensor& a);                         // scalar
Tensor mse(const Tensor& a, const Tensor& b);             // scalar
Tensor reshape(const Tensor& a, const Shape& shape);

// softmax(Q K^T / sqrt(d)) V
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, size_t d);

}  // namespace cdst
