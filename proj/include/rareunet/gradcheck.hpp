#ifndef RAREUNET_GRADCHECK_HPP
#define RAREUNET_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "rareunet/tensor.hpp"

namespace rareunet {

struct GradCheckOptions {
    double eps = 1e-3;
    double tolerance = 1e-3;
    // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, rel_floor).
    // The floor keeps float32 round-off on near-zero partials from dominating.
    double rel_floor = 1.0;
    // Inputs with more coordinates than this are probed on a seeded subset.
    int64_t max_probes = 512;
    uint64_t probe_seed = 0;
};

struct GradReport {
    struct Input {
        double max_abs_error = 0.0;
        double max_rel_error = 0.0;
        int64_t probed = 0;
    };
    std::vector<Input> inputs;
    bool pass = true;
    double eps = 0.0;
    double tolerance = 0.0;
};

using TensorFunction = std::function<Tensor(const std::vector<Tensor>&)>;

// Scalar probe f(y) = sum(r * (y - y0)) with fixed random weights r and y0 the
// first tensor it sees. Same gradient as sum(r * y), but the loss stays near
// zero so float32 rounding of the scalar does not swamp central differences.
class CenteredProjection {
public:
    explicit CenteredProjection(uint64_t seed) : seed_(seed) {}
    Tensor operator()(const Tensor& y);

private:
    uint64_t seed_;
    Tensor weights_;
    Tensor origin_;
};

// Compares reverse-mode gradients of scalar f against central differences.
// Every input is treated as a differentiable leaf.
GradReport finite_diff_check(const TensorFunction& f, std::vector<Tensor> inputs,
                             const GradCheckOptions& options = {});

}  // namespace rareunet

#endif  // RAREUNET_GRADCHECK_HPP
