#include "lakd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lakd {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;

std::uint64_t next_node_id() {
    return g_next_node_id.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, bool requires_grad) {
    impl_ = std::make_shared<TensorImpl>();
    impl_->data.assign(shape_numel(shape), 0.0f);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
    impl_->node_id = next_node_id();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("shape " + shape_str(shape) + " does not match data size " +
                                    std::to_string(data.size()));
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
    impl_->node_id = next_node_id();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

float Tensor::item() const {
    if (numel() != 1)
        throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

std::vector<float>& Tensor::grad() { return ensure_grad(*impl_); }

const std::vector<float>& Tensor::grad() const {
    if (impl_->grad.empty()) throw std::runtime_error("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

std::vector<float>& ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
    return t.grad;
}

Tensor make_node(Shape shape, std::vector<float> data,
                 const std::vector<Tensor>& parents,
                 std::function<void(TensorImpl&)> backward_fn) {
    Tensor out(std::move(shape), std::move(data));
    bool needs = false;
    if (g_grad_enabled)
        for (const Tensor& p : parents)
            if (p.requires_grad()) needs = true;
    if (needs) {
        out.impl()->requires_grad = true;
        out.impl()->parents.reserve(parents.size());
        for (const Tensor& p : parents) out.impl()->parents.push_back(p.impl());
        out.impl()->backward_fn = std::move(backward_fn);
    }
    return out;
}

namespace {

enum class BinOp { Add, Sub, Mul };

void check_binary_shapes(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return;
    if (a.numel() == 1 || b.numel() == 1) return;
    throw std::invalid_argument("shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

Tensor binary_op(BinOp op, const Tensor& a, const Tensor& b) {
    check_binary_shapes(a, b);
    const bool a_scalar = a.numel() == 1 && b.numel() != 1;
    const bool b_scalar = b.numel() == 1 && a.numel() != 1;
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = a_scalar ? b.numel() : a.numel();

    std::vector<float> out(n);
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        const float x = a_scalar ? pa[0] : pa[i];
        const float y = b_scalar ? pb[0] : pb[i];
        switch (op) {
            case BinOp::Add: out[i] = x + y; break;
            case BinOp::Sub: out[i] = x - y; break;
            case BinOp::Mul: out[i] = x * y; break;
        }
    }

    auto ai = a.impl();
    auto bi = b.impl();
    auto bwd = [op, ai, bi, a_scalar, b_scalar, n](TensorImpl& self) {
        const float* g = self.grad.data();
        if (ai->requires_grad) {
            auto& ga = ensure_grad(*ai);
            if (a_scalar) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double gi = g[i];
                    if (op == BinOp::Mul) gi *= bi->data[i];
                    acc += gi;
                }
                ga[0] += static_cast<float>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    float gi = g[i];
                    if (op == BinOp::Mul) gi *= bi->data[bi->data.size() == 1 ? 0 : i];
                    ga[i] += gi;
                }
            }
        }
        if (bi->requires_grad) {
            auto& gb = ensure_grad(*bi);
            if (b_scalar) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double gi = g[i];
                    if (op == BinOp::Sub) gi = -gi;
                    if (op == BinOp::Mul) gi *= ai->data[i];
                    acc += gi;
                }
                gb[0] += static_cast<float>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    float gi = g[i];
                    if (op == BinOp::Sub) gi = -gi;
                    if (op == BinOp::Mul) gi *= ai->data[ai->data.size() == 1 ? 0 : i];
                    gb[i] += gi;
                }
            }
        }
    };
    return make_node(out_shape, std::move(out), {a, b}, std::move(bwd));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, a, b); }

Tensor add(const Tensor& a, float s) { return add(a, Tensor::scalar(s)); }
Tensor mul(const Tensor& a, float s) { return mul(a, Tensor::scalar(s)); }

Tensor sqrt_elem(const Tensor& a) {
    const std::size_t n = a.numel();
    std::vector<float> out(n);
    const float* pa = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (pa[i] < 0.0f)
            throw std::invalid_argument("sqrt_elem of negative value at index " + std::to_string(i));
        out[i] = std::sqrt(pa[i]);
    }
    auto ai = a.impl();
    auto bwd = [ai, n](TensorImpl& self) {
        if (!ai->requires_grad) return;
        auto& ga = ensure_grad(*ai);
        const float* g = self.grad.data();
        const float* y = self.data.data();
        for (std::size_t i = 0; i < n; ++i)
            ga[i] += g[i] * 0.5f / y[i];
    };
    return make_node(a.shape(), std::move(out), {a}, std::move(bwd));
}

Tensor mean(const Tensor& t) {
    const std::size_t n = t.numel();
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    double acc = 0.0;
    const float* p = t.data();
    for (std::size_t i = 0; i < n; ++i) acc += p[i];
    auto ti = t.impl();
    auto bwd = [ti, n](TensorImpl& self) {
        if (!ti->requires_grad) return;
        auto& g = ensure_grad(*ti);
        const float u = self.grad[0] / static_cast<float>(n);
        for (std::size_t i = 0; i < n; ++i) g[i] += u;
    };
    return make_node({1}, {static_cast<float>(acc / static_cast<double>(n))}, {t}, std::move(bwd));
}

Tensor max_reduce(const Tensor& t) {
    const std::size_t n = t.numel();
    if (n == 0) throw std::invalid_argument("max of empty tensor");
    const float* p = t.data();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (p[i] > p[arg]) arg = i;  // first maximal element wins ties
    auto ti = t.impl();
    auto bwd = [ti, arg](TensorImpl& self) {
        if (!ti->requires_grad) return;
        ensure_grad(*ti)[arg] += self.grad[0];
    };
    return make_node({1}, {p[arg]}, {t}, std::move(bwd));
}

Tensor spatial_pick_sum(const Tensor& t, int h, int w) {
    const Shape& s = t.shape();
    if (s.size() != 4)
        throw std::invalid_argument("spatial_pick_sum expects [B,C,H,W], got " + shape_str(s));
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (h < 0 || h >= H || w < 0 || w >= W)
        throw std::invalid_argument("pick position out of range");
    double acc = 0.0;
    const float* p = t.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            acc += p[((static_cast<std::size_t>(b) * C + c) * H + h) * W + w];
    auto ti = t.impl();
    auto bwd = [ti, B, C, H, W, h, w](TensorImpl& self) {
        if (!ti->requires_grad) return;
        auto& g = ensure_grad(*ti);
        const float gv = self.grad[0];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                g[((static_cast<std::size_t>(b) * C + c) * H + h) * W + w] += gv;
    };
    return make_node({1}, {static_cast<float>(acc)}, {t}, std::move(bwd));
}

void backward(const Tensor& root, float seed) {
    if (root.numel() != 1)
        throw std::invalid_argument("backward root must be scalar, got shape " +
                                    shape_str(root.shape()));
    auto ri = root.impl();
    if (!ri->requires_grad) return;

    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<TensorImpl*> stack{ri.get()};
    seen.insert(ri.get());
    while (!stack.empty()) {
        TensorImpl* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (auto& p : cur->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    // node ids increase with creation order, so descending id is a reverse
    // topological order of the recorded graph
    std::sort(order.begin(), order.end(),
              [](const TensorImpl* a, const TensorImpl* b) { return a->node_id > b->node_id; });

    ensure_grad(*ri)[0] += seed;
    for (TensorImpl* node : order) {
        if (!node->backward_fn) continue;  // leaf: keep accumulated grad
        if (node->grad.empty()) continue;
        node->backward_fn(*node);
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps) {
    Tensor xc(x.shape(), x.vec(), true);
    Tensor y = f(xc);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    backward(y, 1.0f);
    std::vector<float> analytic(x.numel(), 0.0f);
    if (xc.has_grad()) analytic = xc.grad();

    double max_err = 0.0;
    NoGradGuard ng;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor xp(x.shape(), x.vec());
        Tensor xm(x.shape(), x.vec());
        xp.data()[i] += static_cast<float>(eps);
        xm.data()[i] -= static_cast<float>(eps);
        const double cd =
            (static_cast<double>(f(xp).item()) - static_cast<double>(f(xm).item())) / (2.0 * eps);
        const double err = std::abs(analytic[i] - cd) / std::max(1.0, std::abs(cd));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace lakd
