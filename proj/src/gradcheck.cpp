#include "rareunet/gradcheck.hpp"

#include "rareunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rareunet {

namespace {

double evaluate(const TensorFunction& f, const std::vector<Tensor>& inputs) {
    NoGradGuard guard;
    Tensor out = f(inputs);
    if (out.numel() != 1) throw ContractError("gradient check function must return a scalar");
    return static_cast<double>(out.item());
}

std::vector<int64_t> probe_set(int64_t n, const GradCheckOptions& options, size_t input_index) {
    std::vector<int64_t> all(static_cast<size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    if (n <= options.max_probes) return all;
    std::mt19937_64 rng(options.probe_seed * 1000003ULL + input_index);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<size_t>(options.max_probes));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

Tensor CenteredProjection::operator()(const Tensor& y) {
    if (!origin_.defined()) {
        origin_ = y.detach();
        weights_ = Tensor::uniform(y.shape(), seed_, -1.0f, 1.0f);
    }
    if (y.shape() != origin_.shape()) throw ShapeError("CenteredProjection applied to a different shape");
    return ops::sum(ops::mul(ops::sub(y, origin_), weights_));
}

GradReport finite_diff_check(const TensorFunction& f, std::vector<Tensor> inputs, const GradCheckOptions& options) {
    if (!(options.eps > 0.0)) throw ContractError("finite_diff_check requires eps > 0");
    for (auto& t : inputs) {
        if (!t.is_leaf()) throw ContractError("finite_diff_check inputs must be leaf tensors");
        t.set_requires_grad(true);
        t.zero_grad();
    }

    Tensor loss = f(inputs);
    if (loss.numel() != 1) throw ContractError("gradient check function must return a scalar");
    loss.backward();

    GradReport report;
    report.eps = options.eps;
    report.tolerance = options.tolerance;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& x = inputs[k];
        const int64_t n = x.numel();
        std::vector<float> analytic(static_cast<size_t>(n), 0.0f);
        if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

        GradReport::Input entry;
        auto values = x.data();
        for (int64_t i : probe_set(n, options, k)) {
            const float original = values[i];
            const float hi = static_cast<float>(original + options.eps);
            const float lo = static_cast<float>(original - options.eps);
            values[i] = hi;
            const double up = evaluate(f, inputs);
            values[i] = lo;
            const double down = evaluate(f, inputs);
            values[i] = original;
            // Divide by the step actually representable in float32.
            const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double a = analytic[i];
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), options.rel_floor});
            entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
            entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
            ++entry.probed;
            if (rel_err > options.tolerance) report.pass = false;
        }
        report.inputs.push_back(entry);
    }
    for (auto& t : inputs) t.zero_grad();
    return report;
}

}  // namespace rareunet
