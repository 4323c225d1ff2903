#ifndef RAREUNET_ROUTING_HPP
#define RAREUNET_ROUTING_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rareunet/data.hpp"
#include "rareunet/model.hpp"

namespace rareunet {

struct RouteDecision {
    int64_t depth = 0;
    Extent3 expected{0, 0, 0};          // full / 2^depth
    std::array<int64_t, 3> delta{0, 0, 0};  // expected - input per axis: > 0 pad, < 0 crop

    bool exact() const { return delta == std::array<int64_t, 3>{0, 0, 0}; }
    std::string describe() const;
};

// d = round(mean_i log2(full_i / input_i)) with .5 rounding toward depth 0,
// clamped to [0, max_depth].
RouteDecision select_entry_depth(const Extent3& input, const Extent3& full, int64_t max_depth);

// How a volume at a reduced scale is presented to a model.
enum class InputHandling { route, pad, up };

std::string to_string(InputHandling h);
InputHandling parse_input_handling(const std::string& text);

// Centred zero-pad (crop if larger) or trilinear upsampling to `full`.
Tensor baseline_prepare(const Tensor& volume, InputHandling mode, const Extent3& full);

struct InferResult {
    LabelVolume labels;  // D,H,W at the routed resolution
    RouteDecision route;
};

// image: C,D,H,W. Optionally normalizes, routes, pads/crops to the routed
// level and returns the argmax of head_d. Runs in eval mode.
InferResult infer(const Model& model, const Tensor& image, bool normalize = true, ForwardTrace* trace = nullptr);

// Label map for `image` (C,D,H,W, already normalized) under a handling:
// route -> routed resolution; pad -> full frame; up -> full then nearest-downsampled
// back to the input extent.
LabelVolume predict(const Model& model, const Tensor& image, InputHandling handling);

// Per-foreground-class DSC of the sample downsampled by 2^scale and predicted
// with `handling`. Pad compares in the padded frame against the padded ground truth.
std::vector<double> score_at_scale(const Model& model, const Sample& sample, int64_t scale, InputHandling handling);

// Mean foreground DSC per scale 0..D-1 averaged over samples.
std::vector<double> mean_dsc_per_scale(const Model& model, const std::vector<Sample>& samples, InputHandling handling);

}  // namespace rareunet

#endif  // RAREUNET_ROUTING_HPP
