#include "rareunet/tensor.hpp"

#include <algorithm>
#include <random>
#include <sstream>
#include <unordered_set>

namespace rareunet {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("shape must have at least one axis");
    for (int64_t e : shape) {
        if (e < 1) throw ShapeError("non-positive extent in shape " + shape_string(shape));
    }
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

int64_t linear_index(const Shape& shape, std::span<const int64_t> index) {
    if (index.size() != shape.size()) throw ShapeError("index rank does not match shape rank");
    int64_t linear = 0;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (index[i] < 0 || index[i] >= shape[i]) throw ShapeError("index out of range");
        linear = linear * shape[i] + index[i];
    }
    return linear;
}

std::vector<int64_t> multi_index(const Shape& shape, int64_t linear) {
    if (linear < 0 || linear >= shape_numel(shape)) throw ShapeError("linear index out of range");
    std::vector<int64_t> index(shape.size());
    for (int64_t i = static_cast<int64_t>(shape.size()) - 1; i >= 0; --i) {
        index[i] = linear % shape[i];
        linear /= shape[i];
    }
    return index;
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<float> values) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return impl;
}

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
    if (!impl) throw ContractError("use of an undefined tensor");
    return *impl;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

Tensor Tensor::create(Shape shape, const Init& how) {
    check_shape(shape);
    const int64_t n = shape_numel(shape);
    std::vector<float> values(static_cast<size_t>(n), 0.0f);
    if (const auto* c = std::get_if<init::Constant>(&how)) {
        std::fill(values.begin(), values.end(), c->value);
    } else if (const auto* u = std::get_if<init::Uniform>(&how)) {
        if (!(u->lo < u->hi)) throw ContractError("uniform init requires lo < hi");
        std::mt19937_64 rng(u->seed);
        std::uniform_real_distribution<float> dist(u->lo, u->hi);
        for (auto& v : values) v = dist(rng);
    }
    return Tensor(new_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::zeros(Shape shape) { return create(std::move(shape), init::Zeros{}); }
Tensor Tensor::full(Shape shape, float value) { return create(std::move(shape), init::Constant{value}); }
Tensor Tensor::uniform(Shape shape, uint64_t seed, float lo, float hi) {
    return create(std::move(shape), init::Uniform{seed, lo, hi});
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_string(shape));
    }
    return Tensor(new_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(float value) { return from_vector({1}, {value}); }

const Shape& Tensor::shape() const { return checked(impl_).shape; }

int64_t Tensor::size(int64_t axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int64_t>(s.size());
    if (axis < 0 || axis >= static_cast<int64_t>(s.size())) throw ShapeError("axis out of range");
    return s[axis];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(checked(impl_).data.size()); }

std::span<float> Tensor::data() & {
    checked(impl_);
    return impl_->data;
}
std::span<const float> Tensor::data() const& { return checked(impl_).data; }

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return impl_->data[0];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
    std::vector<int64_t> idx(index);
    return data()[linear_index(shape(), idx)];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    checked(impl_);
    if (impl_->node && !flag) throw ContractError("cannot clear requires_grad on a non-leaf tensor");
    impl_->requires_grad = flag;
    if (!flag) impl_->grad.clear();
    return *this;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }
std::span<const float> Tensor::grad() const { return checked(impl_).grad; }

std::span<float> Tensor::mutable_grad() {
    checked(impl_);
    return impl_->grad;
}

void Tensor::zero_grad() {
    checked(impl_);
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
}

bool Tensor::is_leaf() const { return checked(impl_).node == nullptr; }

void Tensor::backward() const {
    const auto& root = checked(impl_);
    if (root.data.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_string(root.shape));
    }
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->inputs.size()) {
            detail::TensorImpl* child = t->node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(t);
        stack.pop_back();
    }

    for (auto* t : order) {
        if (t->node) t->grad.clear();
    }
    if (impl_->node) {
        impl_->grad.assign(1, 1.0f);
    } else {
        auto g = detail::grad_sink(*impl_);
        g[0] += 1.0f;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = *it;
        if (t->node && !t->grad.empty()) t->node->backward(*t);
    }
}

Tensor Tensor::detach() const {
    const auto& src = checked(impl_);
    return Tensor(new_impl(src.shape, src.data));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::reshape(Shape new_shape) const {
    check_shape(new_shape);
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
    }
    auto input = impl_;
    return detail::make_result(std::move(new_shape), input->data, {*this}, "reshape",
                               [input](const detail::TensorImpl& out) {
                                   auto g = detail::grad_sink(*input);
                                   for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
                               });
}

namespace detail {

Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward) {
    auto impl = new_impl(std::move(shape), std::move(values));
    if (!g_grad_enabled) return Tensor(impl);
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (!any) return Tensor(impl);
    auto node = std::make_shared<GradNode>();
    node->op = op;
    for (const auto& t : inputs) {
        if (t.defined()) node->inputs.push_back(t.impl());
    }
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->node = std::move(node);
    return Tensor(impl);
}

std::span<float> grad_sink(TensorImpl& t) {
    if (!t.requires_grad) return {};
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
    return t.grad;
}

}  // namespace detail

}  // namespace rareunet
