#include "rareunet/routing.hpp"

#include <cmath>
#include <numeric>

#include "rareunet/error.hpp"
#include "rareunet/losses.hpp"

namespace rareunet {

namespace {

Tensor with_batch(const Tensor& image) {
    Shape s = image.shape();
    s.insert(s.begin(), 1);
    return image.reshape(s);
}

LabelVolume drop_batch(LabelVolume l) {
    l.shape.erase(l.shape.begin());
    return l;
}

Extent3 extent_of(const Tensor& image) {
    if (image.dim() != 4) throw ShapeError("expected a C,D,H,W volume, got " + shape_string(image.shape()));
    return {image.size(1), image.size(2), image.size(3)};
}

Model eval_copy(const Model& model) {
    Model m = model;
    m.set_training(false);
    return m;
}

}  // namespace

std::string RouteDecision::describe() const {
    return "depth=" + std::to_string(depth) + " expected=" + std::to_string(expected[0]) + "x" +
           std::to_string(expected[1]) + "x" + std::to_string(expected[2]) + " delta=" + std::to_string(delta[0]) + "," +
           std::to_string(delta[1]) + "," + std::to_string(delta[2]);
}

RouteDecision select_entry_depth(const Extent3& input, const Extent3& full, int64_t max_depth) {
    double mean_log = 0.0;
    for (int a = 0; a < 3; ++a) {
        if (input[a] < 1 || full[a] < 1) throw ShapeError("routing needs positive extents");
        mean_log += std::log2(static_cast<double>(full[a]) / static_cast<double>(input[a]));
    }
    mean_log /= 3.0;
    int64_t d = static_cast<int64_t>(std::ceil(mean_log - 0.5));
    d = std::clamp<int64_t>(d, 0, std::max<int64_t>(max_depth, 0));
    RouteDecision r;
    r.depth = d;
    for (int a = 0; a < 3; ++a) {
        r.expected[a] = full[a] >> d;
        r.delta[a] = r.expected[a] - input[a];
    }
    return r;
}

std::string to_string(InputHandling h) {
    switch (h) {
        case InputHandling::route: return "route";
        case InputHandling::pad: return "pad";
        case InputHandling::up: return "up";
    }
    return "?";
}

InputHandling parse_input_handling(const std::string& text) {
    if (text == "route") return InputHandling::route;
    if (text == "pad") return InputHandling::pad;
    if (text == "up") return InputHandling::up;
    throw ConfigError("unknown input handling '" + text + "' (expected route|pad|up)");
}

Tensor baseline_prepare(const Tensor& volume, InputHandling mode, const Extent3& full) {
    switch (mode) {
        case InputHandling::pad: return pad_or_crop(volume, full);
        case InputHandling::up: return resample_trilinear(volume, full);
        case InputHandling::route: break;
    }
    throw ContractError("baseline_prepare needs pad or up handling");
}

InferResult infer(const Model& model, const Tensor& image, bool normalize, ForwardTrace* trace) {
    const auto& c = model.config();
    if (image.dim() != 4 || image.size(0) != c.in_channels)
        throw DataError("volume " + shape_string(image.shape()) + " does not have " + std::to_string(c.in_channels) +
                        " channels");
    const Tensor x = normalize ? normalize_channels(image) : image;
    InferResult out;
    out.route = select_entry_depth(extent_of(x), c.full_shape, c.msb_enabled ? c.depth - 1 : 0);
    const Tensor ready = out.route.exact() ? x : pad_or_crop(x, out.route.expected);
    NoGradGuard no_grad;
    const Model m = eval_copy(model);
    out.labels = drop_batch(nn::argmax_channels(m.forward_at(with_batch(ready), out.route.depth, trace)));
    return out;
}

LabelVolume predict(const Model& model, const Tensor& image, InputHandling handling) {
    if (handling == InputHandling::route) return infer(model, image, false).labels;
    const auto& c = model.config();
    NoGradGuard no_grad;
    const Model m = eval_copy(model);
    const Tensor prepared = baseline_prepare(image, handling, c.full_shape);
    LabelVolume full = drop_batch(nn::argmax_channels(m.forward_full(with_batch(prepared)).logits));
    if (handling == InputHandling::pad) return full;
    return resample_nearest(full, extent_of(image));
}

std::vector<double> score_at_scale(const Model& model, const Sample& sample, int64_t scale, InputHandling handling) {
    const int64_t f = int64_t{1} << scale;
    const Tensor image = scale == 0 ? sample.image : downsample_image(sample.image, f);
    LabelVolume gt = scale == 0 ? sample.labels : downsample_labels(sample.labels, f);
    const LabelVolume pred = predict(model, image, handling);
    if (handling == InputHandling::pad) gt = pad_or_crop(gt, model.config().full_shape);
    return dice_score(pred, gt, model.config().num_classes);
}

std::vector<double> mean_dsc_per_scale(const Model& model, const std::vector<Sample>& samples, InputHandling handling) {
    const int64_t D = model.config().depth;
    std::vector<double> out(static_cast<size_t>(D), 0.0);
    if (samples.empty()) return out;
    for (int64_t s = 0; s < D; ++s) {
        double acc = 0.0;
        for (const auto& sample : samples) {
            const auto dsc = score_at_scale(model, sample, s, handling);
            acc += std::accumulate(dsc.begin(), dsc.end(), 0.0) / static_cast<double>(dsc.size());
        }
        out[s] = acc / static_cast<double>(samples.size());
    }
    return out;
}

}  // namespace rareunet
