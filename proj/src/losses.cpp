#include "rareunet/losses.hpp"

#include <cmath>
#include <string>

#include "rareunet/error.hpp"
#include "rareunet/nn.hpp"
#include "rareunet/ops.hpp"

namespace rareunet {

using detail::grad_sink;
using detail::make_result;
using detail::TensorImpl;

namespace {

struct Layout {
    int64_t N = 0, C = 0, S = 0;
};

Layout check_logits_labels(const Tensor& logits, const LabelVolume& labels, const char* op) {
    if (logits.dim() < 3) throw ShapeError(std::string(op) + ": logits must be N,C,spatial");
    Shape want = logits.shape();
    want.erase(want.begin() + 1);
    if (labels.shape != want)
        throw ShapeError(std::string(op) + ": labels " + shape_string(labels.shape) + " do not match logits " +
                         shape_string(logits.shape()));
    Layout l{logits.size(0), logits.size(1), 0};
    l.S = logits.numel() / (l.N * l.C);
    for (uint8_t v : labels.values) {
        if (v >= l.C) throw DataError(std::string(op) + ": label " + std::to_string(v) + " >= class count " + std::to_string(l.C));
    }
    return l;
}

}  // namespace

void LossWeights::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be within [0,1]");
    if (!(lambda_con >= 0.0)) throw ConfigError("lambda_con must be >= 0");
    if (!(dice_epsilon > 0.0)) throw ConfigError("dice_epsilon must be > 0");
}

Tensor cross_entropy(const Tensor& logits, const LabelVolume& labels) {
    const Layout L = check_logits_labels(logits, labels, "cross_entropy");
    const float* x = logits.data().data();
    const int64_t V = L.N * L.S;
    // Softmax kept for backward.
    std::vector<float> prob(logits.data().size());
    double total = 0.0;
    for (int64_t n = 0; n < L.N; ++n) {
        for (int64_t s = 0; s < L.S; ++s) {
            const float* xv = x + n * L.C * L.S + s;
            float m = xv[0];
            for (int64_t c = 1; c < L.C; ++c) m = std::max(m, xv[c * L.S]);
            double z = 0.0;
            for (int64_t c = 0; c < L.C; ++c) z += std::exp(static_cast<double>(xv[c * L.S]) - m);
            const double lse = m + std::log(z);
            total += lse - xv[labels.values[n * L.S + s] * L.S];
            for (int64_t c = 0; c < L.C; ++c)
                prob[n * L.C * L.S + c * L.S + s] = static_cast<float>(std::exp(static_cast<double>(xv[c * L.S]) - lse));
        }
    }
    auto li = logits.impl();
    auto lab = std::make_shared<std::vector<uint8_t>>(labels.values);
    return make_result({1}, {static_cast<float>(total / static_cast<double>(V))}, {logits}, "cross_entropy",
                       [li, lab, prob = std::move(prob), L, V](const TensorImpl& o) {
                           auto g = grad_sink(*li);
                           const float scale = o.grad[0] / static_cast<float>(V);
                           for (int64_t n = 0; n < L.N; ++n) {
                               for (int64_t c = 0; c < L.C; ++c) {
                                   const int64_t base = n * L.C * L.S + c * L.S;
                                   for (int64_t s = 0; s < L.S; ++s) {
                                       const float onehot = (*lab)[n * L.S + s] == c ? 1.0f : 0.0f;
                                       g[base + s] += scale * (prob[base + s] - onehot);
                                   }
                               }
                           }
                       });
}

Tensor soft_dice_from_probs(const Tensor& probs, const LabelVolume& labels, double epsilon) {
    const Layout L = check_logits_labels(probs, labels, "soft_dice");
    if (L.C < 2) throw ShapeError("soft_dice needs at least two classes");
    if (!(epsilon > 0.0)) throw ContractError("soft_dice epsilon must be > 0");
    const float* p = probs.data().data();
    std::vector<double> inter(L.C, 0.0), psum(L.C, 0.0), gsum(L.C, 0.0);
    for (int64_t n = 0; n < L.N; ++n) {
        for (int64_t c = 1; c < L.C; ++c) {
            const float* pc = p + n * L.C * L.S + c * L.S;
            for (int64_t s = 0; s < L.S; ++s) {
                const bool g = labels.values[n * L.S + s] == c;
                psum[c] += pc[s];
                if (g) {
                    inter[c] += pc[s];
                    gsum[c] += 1.0;
                }
            }
        }
    }
    const double K = static_cast<double>(L.C - 1);
    double mean_dsc = 0.0;
    for (int64_t c = 1; c < L.C; ++c) mean_dsc += (2.0 * inter[c] + epsilon) / (psum[c] + gsum[c] + epsilon);
    mean_dsc /= K;
    // dL/dp_c = -(1/K) (2 g / den - num / den^2)
    std::vector<double> on(L.C, 0.0), off(L.C, 0.0);
    for (int64_t c = 1; c < L.C; ++c) {
        const double den = psum[c] + gsum[c] + epsilon;
        const double num = 2.0 * inter[c] + epsilon;
        off[c] = num / (den * den) / K;
        on[c] = off[c] - 2.0 / den / K;
    }
    auto pi = probs.impl();
    auto lab = std::make_shared<std::vector<uint8_t>>(labels.values);
    return make_result({1}, {static_cast<float>(1.0 - mean_dsc)}, {probs}, "soft_dice",
                       [pi, lab, L, on = std::move(on), off = std::move(off)](const TensorImpl& o) {
                           auto g = grad_sink(*pi);
                           const double gy = o.grad[0];
                           for (int64_t n = 0; n < L.N; ++n) {
                               for (int64_t c = 1; c < L.C; ++c) {
                                   const float a = static_cast<float>(gy * on[c]);
                                   const float b = static_cast<float>(gy * off[c]);
                                   float* gc = g.data() + n * L.C * L.S + c * L.S;
                                   for (int64_t s = 0; s < L.S; ++s) gc[s] += (*lab)[n * L.S + s] == c ? a : b;
                               }
                           }
                       });
}

Tensor soft_dice_loss(const Tensor& logits, const LabelVolume& labels, double epsilon) {
    check_logits_labels(logits, labels, "soft_dice_loss");
    return soft_dice_from_probs(nn::softmax_channels(logits), labels, epsilon);
}

Tensor seg_loss(const Tensor& logits, const LabelVolume& labels, const LossWeights& w) {
    w.validate();
    const float a = static_cast<float>(w.alpha);
    if (w.alpha == 1.0) return cross_entropy(logits, labels);
    if (w.alpha == 0.0) return soft_dice_loss(logits, labels, w.dice_epsilon);
    return ops::add(ops::mul(cross_entropy(logits, labels), a),
                    ops::mul(soft_dice_loss(logits, labels, w.dice_epsilon), 1.0f - a));
}

Tensor consistency_loss(const Tensor& f_msb, const Tensor& f_enc) {
    if (f_msb.shape() != f_enc.shape())
        throw ShapeError("consistency_loss shapes " + shape_string(f_msb.shape()) + " vs " + shape_string(f_enc.shape()));
    const Tensor diff = ops::sub(f_msb, f_enc.detach());
    return ops::mean(ops::mul(diff, diff));
}

Tensor total_loss(const std::vector<Tensor>& seg_losses, const std::vector<Tensor>& con_losses, const LossWeights& w) {
    if (seg_losses.empty()) throw ContractError("total_loss needs at least one segmentation loss");
    w.validate();
    Tensor seg = seg_losses[0];
    for (size_t i = 1; i < seg_losses.size(); ++i) seg = ops::add(seg, seg_losses[i]);
    seg = ops::mul(seg, 1.0f / static_cast<float>(seg_losses.size()));
    if (con_losses.empty() || w.lambda_con == 0.0) return seg;
    Tensor con = con_losses[0];
    for (size_t i = 1; i < con_losses.size(); ++i) con = ops::add(con, con_losses[i]);
    con = ops::mul(con, static_cast<float>(w.lambda_con / static_cast<double>(con_losses.size())));
    return ops::add(seg, con);
}

std::vector<double> dice_score(const LabelVolume& pred, const LabelVolume& gt, int64_t num_classes) {
    if (pred.shape != gt.shape)
        throw ShapeError("dice_score shapes " + shape_string(pred.shape) + " vs " + shape_string(gt.shape));
    if (num_classes < 2) throw ContractError("dice_score needs num_classes >= 2");
    std::vector<int64_t> inter(num_classes, 0), np(num_classes, 0), ng(num_classes, 0);
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const uint8_t p = pred.values[i], g = gt.values[i];
        if (p >= num_classes || g >= num_classes) throw DataError("dice_score: label outside class range");
        ++np[p];
        ++ng[g];
        if (p == g) ++inter[p];
    }
    std::vector<double> out;
    for (int64_t c = 1; c < num_classes; ++c) {
        const int64_t den = np[c] + ng[c];
        out.push_back(den == 0 ? 1.0 : 2.0 * static_cast<double>(inter[c]) / static_cast<double>(den));
    }
    return out;
}

}  // namespace rareunet
