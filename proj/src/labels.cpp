#include "rareunet/labels.hpp"

namespace rareunet {

LabelVolume LabelVolume::zeros(Shape shape) {
    check_shape(shape);
    const auto n = static_cast<size_t>(shape_numel(shape));
    return LabelVolume{std::move(shape), std::vector<uint8_t>(n, 0)};
}

LabelVolume LabelVolume::from_vector(Shape shape, std::vector<uint8_t> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("label count does not match shape " + shape_string(shape));
    }
    return LabelVolume{std::move(shape), std::move(values)};
}

}  // namespace rareunet
