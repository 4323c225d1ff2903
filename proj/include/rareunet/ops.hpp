#ifndef RAREUNET_OPS_HPP
#define RAREUNET_OPS_HPP

#include <optional>
#include <vector>

#include "rareunet/tensor.hpp"

namespace rareunet::ops {

// Binary ops take equal shapes, or a one-element operand broadcast as a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float b);
Tensor mul(const Tensor& a, float b);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
// Throws DomainError on any non-positive input.
Tensor log(const Tensor& x);
Tensor clip(const Tensor& x, float lo, float hi);

enum class ReduceKind { sum, mean, max };

// Reduces over `axes` (all axes when empty). Reduced axes are dropped; a full
// reduction yields shape (1). Max routes gradient to the lowest-index maximum.
Tensor reduce(ReduceKind kind, const Tensor& x, std::vector<int64_t> axes = {});
Tensor sum(const Tensor& x, std::vector<int64_t> axes = {});
Tensor mean(const Tensor& x, std::vector<int64_t> axes = {});
Tensor max(const Tensor& x, std::vector<int64_t> axes = {});

}  // namespace rareunet::ops

#endif  // RAREUNET_OPS_HPP
