#ifndef RAREUNET_TENSOR_HPP
#define RAREUNET_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rareunet/error.hpp"

namespace rareunet {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);
// Throws ShapeError if any extent is < 1.
void check_shape(const Shape& shape);

// Row-major strides (last axis fastest).
std::vector<int64_t> row_major_strides(const Shape& shape);
int64_t linear_index(const Shape& shape, std::span<const int64_t> index);
std::vector<int64_t> multi_index(const Shape& shape, int64_t linear);

namespace detail {

struct TensorImpl;

struct GradNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Receives the output tensor (value and populated grad) and accumulates
    // into the inputs' gradient buffers.
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty == absent
    bool requires_grad = false;
    std::shared_ptr<GradNode> node;
};

}  // namespace detail

namespace init {
struct Zeros {};
struct Constant {
    float value = 0.0f;
};
struct Uniform {
    uint64_t seed = 0;
    float lo = 0.0f;
    float hi = 1.0f;
};
}  // namespace init

using Init = std::variant<init::Zeros, init::Constant, init::Uniform>;

// Shared handle to a dense float32 array. Copies alias the same storage;
// use clone() or detach() for an independent buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor create(Shape shape, const Init& how);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor uniform(Shape shape, uint64_t seed, float lo, float hi);
    static Tensor from_vector(Shape shape, std::vector<float> values);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t dim() const { return static_cast<int64_t>(shape().size()); }
    int64_t size(int64_t axis) const;
    int64_t numel() const;

    std::span<float> data() &;
    std::span<const float> data() const&;
    // A span into a temporary would dangle once the full expression ends.
    std::span<const float> data() const&& = delete;
    float item() const;
    float at(std::initializer_list<int64_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();  // drops the buffer entirely
    bool is_leaf() const;

    // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    // calls; interior buffers are recomputed on each call.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;
    Tensor reshape(Shape shape) const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// While alive, ops on this thread build no autodiff graph.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

namespace detail {

using BackwardFn = std::function<void(const TensorImpl& out)>;

// Wraps freshly computed values into a Tensor and links it into the graph
// when any input requires gradient and grad mode is on. Undefined inputs
// (absent optional operands) are ignored.
Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward);

// Gradient buffer of an input, allocated (zeroed) on first use. Empty span
// when the input does not require gradient.
std::span<float> grad_sink(TensorImpl& t);

}  // namespace detail

}  // namespace rareunet

#endif  // RAREUNET_TENSOR_HPP
