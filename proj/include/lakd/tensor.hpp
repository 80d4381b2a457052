#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lakd {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;   // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t node_id = 0;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;  // null for leaves
};

/// Dense float32 tensor participating in a dynamically recorded autodiff
/// graph. Copies are shallow; the payload lives in a shared impl.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }
    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    /// Value of a one-element tensor; throws otherwise.
    float item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<float>& grad();              // allocates zeros on demand
    const std::vector<float>& grad() const;  // throws if absent
    void zero_grad();

    std::shared_ptr<TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording in its scope (inference / finite differences).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

/// Builds a graph node: result requires grad iff recording is enabled and
/// any parent requires grad; only then are parents and backward_fn kept.
Tensor make_node(Shape shape, std::vector<float> data,
                 const std::vector<Tensor>& parents,
                 std::function<void(TensorImpl&)> backward_fn);

/// Ensures a grad buffer exists and returns it.
std::vector<float>& ensure_grad(TensorImpl& t);

// Elementwise binary ops. Shapes must match exactly, or one operand may be
// a one-element tensor (scalar broadcast). No other broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float s);
Tensor mul(const Tensor& a, float s);

/// Elementwise square root; inputs must be non-negative.
Tensor sqrt_elem(const Tensor& a);

/// Mean over all elements -> scalar tensor.
Tensor mean(const Tensor& t);

/// Maximum over all elements -> scalar tensor. Gradient is routed to the
/// first maximal element in row-major order.
Tensor max_reduce(const Tensor& t);

/// Sum of all channels at spatial position (h, w) of a [B,C,H,W] tensor
/// -> scalar. Used to seed ERF probes.
Tensor spatial_pick_sum(const Tensor& t, int h, int w);

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; intermediate gradients are released as soon as they are consumed.
void backward(const Tensor& root, float seed = 1.0f);

/// Max over coordinates of |analytic - central difference| / max(1, |cd|).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps);

}  // namespace lakd
