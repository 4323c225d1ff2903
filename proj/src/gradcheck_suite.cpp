#include "rareunet/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <random>

#include "rareunet/error.hpp"
#include "rareunet/gradcheck.hpp"
#include "rareunet/losses.hpp"
#include "rareunet/nn.hpp"
#include "rareunet/ops.hpp"

namespace rareunet {

namespace {

struct Problem {
    TensorFunction f;
    std::vector<Tensor> inputs;
};

using Builder = std::function<Problem(uint64_t)>;

nn::ConvSpec conv_spec(int64_t cin, int64_t cout, int64_t stride) {
    nn::ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.stride = {stride, stride, stride};
    return s;
}

LabelVolume random_labels(Shape shape, int64_t classes, uint64_t seed) {
    std::mt19937_64 rng(seed);
    LabelVolume l = LabelVolume::zeros(std::move(shape));
    for (auto& v : l.values) v = static_cast<uint8_t>(rng() % static_cast<uint64_t>(classes));
    return l;
}

// Shuffled distinct values spaced 0.05 apart: no ties within +-eps.
Tensor spread(Shape shape, uint64_t seed, float step) {
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    for (size_t i = 0; i < v.size(); ++i) v[i] = step * static_cast<float>(i) - step * static_cast<float>(v.size()) / 2;
    std::mt19937_64 rng(seed);
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
    return Tensor::from_vector(std::move(shape), std::move(v));
}

// Uniform draws pushed at least `gap` away from zero.
Tensor away_from_zero(Shape shape, uint64_t seed, float gap) {
    Tensor t = Tensor::uniform(std::move(shape), seed, -1.0f, 1.0f);
    for (float& v : t.data()) v = v < 0 ? std::min(v, -gap) : std::max(v, gap);
    return t;
}

template <typename Op>
Builder projected(Op op, std::function<std::vector<Tensor>(uint64_t)> make) {
    return [op, make](uint64_t s) {
        auto proj = std::make_shared<CenteredProjection>(s);
        return Problem{[op, proj](const std::vector<Tensor>& in) { return (*proj)(op(in)); }, make(s)};
    };
}

const std::map<std::string, Builder>& registry() {
    static const std::map<std::string, Builder> r = [] {
        std::map<std::string, Builder> m;
        const Shape e{3, 4};
        m["add"] = projected([](auto& in) { return ops::add(in[0], in[1]); },
                             [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, -1, 1), Tensor::uniform(e, s + 1, -1, 1)}; });
        m["sub"] = projected([](auto& in) { return ops::sub(in[0], in[1]); },
                             [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, -1, 1), Tensor::uniform(e, s + 1, -1, 1)}; });
        m["mul"] = projected([](auto& in) { return ops::mul(in[0], in[1]); },
                             [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, -1, 1), Tensor::uniform(e, s + 1, -1, 1)}; });
        m["relu"] = projected([](auto& in) { return ops::relu(in[0]); },
                              [e](uint64_t s) { return std::vector{away_from_zero(e, s, 0.05f)}; });
        m["exp"] = projected([](auto& in) { return ops::exp(in[0]); },
                             [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, -1, 1)}; });
        m["log"] = projected([](auto& in) { return ops::log(in[0]); },
                             [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, 0.5f, 2.0f)}; });
        m["clip"] = projected([](auto& in) { return ops::clip(in[0], -0.5f, 0.5f); },
                              [e](uint64_t s) { return std::vector{spread(e, s, 0.09f)}; });
        m["sum"] = projected([](auto& in) { return ops::sum(in[0], {1}); },
                             [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, -1, 1)}; });
        m["mean"] = projected([](auto& in) { return ops::mean(in[0], {0}); },
                              [e](uint64_t s) { return std::vector{Tensor::uniform(e, s, -1, 1)}; });
        m["max"] = projected([](auto& in) { return ops::max(in[0], {1}); },
                             [e](uint64_t s) { return std::vector{spread(e, s, 0.1f)}; });
        m["conv3d"] = projected(
            [](auto& in) { return nn::conv3d(in[0], in[1], in[2], conv_spec(2, 3, 1 + static_cast<int64_t>(in[0].size(2) % 2))); },
            [](uint64_t s) {
                const int64_t d = 4 + static_cast<int64_t>(s % 2);
                return std::vector{Tensor::uniform({1, 2, d, 5, 4}, s, -1, 1), Tensor::uniform({3, 2, 3, 3, 3}, s + 1, -0.5f, 0.5f),
                                   Tensor::uniform({3}, s + 2, -1, 1)};
            });
        m["conv_transpose3d"] = projected([](auto& in) { return nn::conv_transpose3d(in[0], in[1], in[2]); },
                                          [](uint64_t s) {
                                              return std::vector{Tensor::uniform({2, 3, 2, 3, 2}, s, -1, 1),
                                                                 Tensor::uniform({3, 2, 2, 2, 2}, s + 1, -1, 1),
                                                                 Tensor::uniform({2}, s + 2, -1, 1)};
                                          });
        m["max_pool3d"] = projected([](auto& in) { return nn::max_pool3d(in[0]).output; },
                                    [](uint64_t s) { return std::vector{spread({1, 2, 4, 4, 2}, s, 0.05f)}; });
        m["batch_norm"] = projected(
            [](auto& in) { return nn::batch_norm(in[0], in[1], in[2], 1e-5f, nn::NormMode::train, nullptr); },
            [](uint64_t s) {
                return std::vector{Tensor::uniform({2, 2, 2, 3, 2}, s, -1, 2), Tensor::uniform({2}, s + 1, 0.5f, 1.5f),
                                   Tensor::uniform({2}, s + 2, -1, 1)};
            });
        m["instance_norm"] = projected([](auto& in) { return nn::instance_norm(in[0], in[1], in[2], 1e-5f); },
                                       [](uint64_t s) {
                                           return std::vector{Tensor::uniform({2, 2, 2, 2, 3}, s, -1, 2),
                                                              Tensor::uniform({2}, s + 1, 0.5f, 1.5f),
                                                              Tensor::uniform({2}, s + 2, -1, 1)};
                                       });
        m["softmax"] = projected([](auto& in) { return nn::softmax_channels(in[0]); },
                                 [](uint64_t s) { return std::vector{Tensor::uniform({2, 3, 2, 2, 2}, s, -3, 3)}; });
        m["concat"] = projected([](auto& in) { return nn::concat_channels(in[0], in[1]); },
                                [](uint64_t s) {
                                    return std::vector{Tensor::uniform({2, 1, 2, 2, 2}, s, -1, 1),
                                                       Tensor::uniform({2, 2, 2, 2, 2}, s + 1, -1, 1)};
                                });
        m["cross_entropy"] = [](uint64_t s) {
            auto labels = random_labels({2, 2, 3, 2}, 3, s + 7);
            return Problem{[labels](auto& in) { return cross_entropy(in[0], labels); }, {Tensor::uniform({2, 3, 2, 3, 2}, s, -2, 2)}};
        };
        m["soft_dice_loss"] = [](uint64_t s) {
            auto labels = random_labels({1, 2, 3, 2}, 3, s + 7);
            return Problem{[labels](auto& in) { return soft_dice_loss(in[0], labels); }, {Tensor::uniform({1, 3, 2, 3, 2}, s, -2, 2)}};
        };
        m["seg_loss"] = [](uint64_t s) {
            auto labels = random_labels({1, 2, 2, 3}, 2, s + 7);
            return Problem{[labels](auto& in) { return seg_loss(in[0], labels, LossWeights{}); },
                           {Tensor::uniform({1, 2, 2, 2, 3}, s, -2, 2)}};
        };
        m["consistency_loss"] = [](uint64_t s) {
            auto target = Tensor::uniform({1, 2, 2, 2, 2}, s + 1, -1, 1);
            return Problem{[target](auto& in) { return consistency_loss(in[0], target); },
                           {Tensor::uniform({1, 2, 2, 2, 2}, s, -1, 1)}};
        };
        return m;
    }();
    return r;
}

// Adds 0.5 * sum(x) - detach(0.5 * sum(x)) for the first input: zero value,
// gradient offset of 0.5 everywhere.
TensorFunction with_fault(TensorFunction f) {
    return [f](const std::vector<Tensor>& in) {
        const Tensor extra = ops::mul(ops::sum(in[0]), 0.5f);
        return ops::add(f(in), ops::sub(extra, extra.detach()));
    };
}

}  // namespace

bool GradcheckSummary::pass() const {
    return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.pass; });
}

nlohmann::json GradcheckSummary::to_json() const {
    nlohmann::json j;
    j["pass"] = pass();
    j["seconds"] = seconds;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : cases)
        j["cases"].push_back({{"op", c.op},
                              {"seed", c.seed},
                              {"pass", c.pass},
                              {"max_rel_error", c.max_rel_error},
                              {"max_abs_error", c.max_abs_error}});
    return j;
}

std::vector<std::string> gradcheck_ops() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

GradcheckSummary run_gradcheck_suite(const std::string& scope, const std::vector<uint64_t>& seeds, bool inject_fault) {
    std::vector<std::string> ops_to_run;
    if (scope == "all") {
        ops_to_run = gradcheck_ops();
    } else if (registry().count(scope)) {
        ops_to_run = {scope};
    } else {
        throw ConfigError("unknown gradcheck scope '" + scope + "'");
    }
    if (seeds.empty()) throw ConfigError("gradcheck needs at least one seed");
    const auto start = std::chrono::steady_clock::now();
    GradcheckSummary summary;
    for (const auto& name : ops_to_run) {
        for (uint64_t seed : seeds) {
            Problem p = registry().at(name)(seed);
            const TensorFunction f = inject_fault ? with_fault(p.f) : p.f;
            const GradReport r = finite_diff_check(f, p.inputs);
            GradcheckCase c{name, seed, r.pass, 0.0, 0.0};
            for (const auto& in : r.inputs) {
                c.max_rel_error = std::max(c.max_rel_error, in.max_rel_error);
                c.max_abs_error = std::max(c.max_abs_error, in.max_abs_error);
            }
            summary.cases.push_back(c);
        }
    }
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
}

}  // namespace rareunet
