#include "rareunet/ops.hpp"

#include <algorithm>
#include <cmath>

namespace rareunet::ops {

namespace {

using detail::grad_sink;
using detail::make_result;
using detail::TensorImpl;

enum class Broadcast { none, scalar_a, scalar_b };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.numel() == 1) return Broadcast::scalar_b;
    if (a.numel() == 1) return Broadcast::scalar_a;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
}

// Applies f elementwise with broadcasting; dfa/dfb give partials w.r.t. a and b.
template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA dfa, DB dfb) {
    const Broadcast mode = broadcast_mode(a, b, op);
    const Shape shape = mode == Broadcast::scalar_a ? b.shape() : a.shape();
    const int64_t n = shape_numel(shape);
    const auto av = a.data();
    const auto bv = b.data();
    auto aval = [&, mode](int64_t i) { return mode == Broadcast::scalar_a ? av[0] : av[i]; };
    auto bval = [&, mode](int64_t i) { return mode == Broadcast::scalar_b ? bv[0] : bv[i]; };
    std::vector<float> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = f(aval(i), bval(i));

    auto ai = a.impl();
    auto bi = b.impl();
    return make_result(shape, std::move(out), {a, b}, op, [ai, bi, mode, dfa, dfb](const TensorImpl& o) {
        const int64_t count = static_cast<int64_t>(o.grad.size());
        auto x = [&](int64_t i) { return mode == Broadcast::scalar_a ? ai->data[0] : ai->data[i]; };
        auto y = [&](int64_t i) { return mode == Broadcast::scalar_b ? bi->data[0] : bi->data[i]; };
        if (auto ga = grad_sink(*ai); !ga.empty()) {
            if (mode == Broadcast::scalar_a) {
                double acc = 0.0;
                for (int64_t i = 0; i < count; ++i) acc += o.grad[i] * dfa(x(i), y(i));
                ga[0] += static_cast<float>(acc);
            } else {
                for (int64_t i = 0; i < count; ++i) ga[i] += o.grad[i] * dfa(x(i), y(i));
            }
        }
        if (auto gb = grad_sink(*bi); !gb.empty()) {
            if (mode == Broadcast::scalar_b) {
                double acc = 0.0;
                for (int64_t i = 0; i < count; ++i) acc += o.grad[i] * dfb(x(i), y(i));
                gb[0] += static_cast<float>(acc);
            } else {
                for (int64_t i = 0; i < count; ++i) gb[i] += o.grad[i] * dfb(x(i), y(i));
            }
        }
    });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* op, F f, D df) {
    const auto xv = x.data();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    auto xi = x.impl();
    return make_result(x.shape(), std::move(out), {x}, op, [xi, df](const TensorImpl& o) {
        auto g = grad_sink(*xi);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(xi->data[i], o.data[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
        [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
        [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](float x, float y) { return x * y; }, [](float, float y) { return y; },
        [](float x, float) { return x; });
}

Tensor add(const Tensor& a, float b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, float b) { return mul(a, Tensor::scalar(b)); }

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](float v) { return v < 0.0f ? 0.0f : v; },
        [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, "exp", [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
    for (float v : x.data()) {
        if (!(v > 0.0f)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return unary(
        x, "log", [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor clip(const Tensor& x, float lo, float hi) {
    if (!(lo <= hi)) throw ContractError("clip requires lo <= hi");
    return unary(
        x, "clip", [lo, hi](float v) { return std::clamp(v, lo, hi); },
        [lo, hi](float v, float) { return (v > lo && v < hi) ? 1.0f : 0.0f; });
}

Tensor reduce(ReduceKind kind, const Tensor& x, std::vector<int64_t> axes) {
    const Shape& in_shape = x.shape();
    const int64_t rank = static_cast<int64_t>(in_shape.size());
    std::vector<bool> reduced(rank, axes.empty());
    for (int64_t a : axes) {
        if (a < 0) a += rank;
        if (a < 0 || a >= rank) throw ShapeError("reduce axis out of range for shape " + shape_string(in_shape));
        reduced[a] = true;
    }
    Shape out_shape;
    for (int64_t i = 0; i < rank; ++i) {
        if (!reduced[i]) out_shape.push_back(in_shape[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    const int64_t out_n = shape_numel(out_shape);
    const int64_t in_n = x.numel();
    const int64_t group = in_n / out_n;

    // out_index[i] maps each input element to its output slot.
    std::vector<int64_t> out_index(static_cast<size_t>(in_n));
    {
        std::vector<int64_t> idx(rank, 0);
        for (int64_t i = 0; i < in_n; ++i) {
            int64_t o = 0;
            for (int64_t ax = 0; ax < rank; ++ax) {
                if (!reduced[ax]) o = o * in_shape[ax] + idx[ax];
            }
            out_index[i] = o;
            for (int64_t ax = rank - 1; ax >= 0; --ax) {
                if (++idx[ax] < in_shape[ax]) break;
                idx[ax] = 0;
            }
        }
    }

    const auto xv = x.data();
    std::vector<float> out(static_cast<size_t>(out_n));
    std::vector<int64_t> argmax;
    if (kind == ReduceKind::max) {
        argmax.assign(static_cast<size_t>(out_n), -1);
        for (int64_t i = 0; i < in_n; ++i) {
            int64_t& best = argmax[out_index[i]];
            if (best < 0 || xv[i] > xv[best]) best = i;
        }
        for (int64_t o = 0; o < out_n; ++o) out[o] = xv[argmax[o]];
    } else {
        std::vector<double> acc(static_cast<size_t>(out_n), 0.0);
        for (int64_t i = 0; i < in_n; ++i) acc[out_index[i]] += xv[i];
        const double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(group) : 1.0;
        for (int64_t o = 0; o < out_n; ++o) out[o] = static_cast<float>(acc[o] * scale);
    }

    auto xi = x.impl();
    const char* name = kind == ReduceKind::sum ? "sum" : kind == ReduceKind::mean ? "mean" : "max";
    return make_result(out_shape, std::move(out), {x}, name,
                       [xi, kind, group, out_index = std::move(out_index),
                        argmax = std::move(argmax)](const TensorImpl& o) {
                           auto g = grad_sink(*xi);
                           if (kind == ReduceKind::max) {
                               for (size_t k = 0; k < argmax.size(); ++k) g[argmax[k]] += o.grad[k];
                               return;
                           }
                           const float scale = kind == ReduceKind::mean ? 1.0f / static_cast<float>(group) : 1.0f;
                           for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[out_index[i]] * scale;
                       });
}

Tensor sum(const Tensor& x, std::vector<int64_t> axes) { return reduce(ReduceKind::sum, x, std::move(axes)); }
Tensor mean(const Tensor& x, std::vector<int64_t> axes) { return reduce(ReduceKind::mean, x, std::move(axes)); }
Tensor max(const Tensor& x, std::vector<int64_t> axes) { return reduce(ReduceKind::max, x, std::move(axes)); }

}  // namespace rareunet::ops
