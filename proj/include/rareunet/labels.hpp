#ifndef RAREUNET_LABELS_HPP
#define RAREUNET_LABELS_HPP

#include <cstdint>
#include <vector>

#include "rareunet/tensor.hpp"

namespace rareunet {

// Dense integer class map, row-major like Tensor.
struct LabelVolume {
    Shape shape;
    std::vector<uint8_t> values;

    static LabelVolume zeros(Shape shape);
    static LabelVolume from_vector(Shape shape, std::vector<uint8_t> values);

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    bool operator==(const LabelVolume&) const = default;
};

}  // namespace rareunet

#endif  // RAREUNET_LABELS_HPP
