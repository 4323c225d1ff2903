#ifndef RAREUNET_LOSSES_HPP
#define RAREUNET_LOSSES_HPP

#include <cstdint>
#include <vector>

#include "rareunet/labels.hpp"
#include "rareunet/tensor.hpp"

namespace rareunet {

struct LossWeights {
    double alpha = 0.5;       // CE share of the segmentation loss
    double lambda_con = 1.0;  // consistency weight
    double dice_epsilon = 1e-5;

    // ConfigError unless alpha in [0,1], lambda_con >= 0, dice_epsilon > 0.
    void validate() const;
};

// Logits N,C,D,H,W against labels N,D,H,W. DataError on labels >= C.

// Mean over voxels of -log softmax(logits)[label], via log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const LabelVolume& labels);
// 1 - mean over classes c >= 1 of (2 sum p g + eps) / (sum p + sum g + eps),
// sums over batch and voxels.
Tensor soft_dice_loss(const Tensor& logits, const LabelVolume& labels, double epsilon = 1e-5);
// Same as soft_dice_loss but takes probabilities directly.
Tensor soft_dice_from_probs(const Tensor& probs, const LabelVolume& labels, double epsilon = 1e-5);
// alpha * CE + (1 - alpha) * Dice.
Tensor seg_loss(const Tensor& logits, const LabelVolume& labels, const LossWeights& weights);
// Mean squared difference; the target is detached and never receives gradient.
Tensor consistency_loss(const Tensor& f_msb, const Tensor& f_enc);
// mean(seg) + lambda_con * mean(con); an empty con list contributes 0.
Tensor total_loss(const std::vector<Tensor>& seg_losses, const std::vector<Tensor>& con_losses,
                  const LossWeights& weights);

// Hard DSC per foreground class 1..num_classes-1. Both masks empty -> 1.0.
std::vector<double> dice_score(const LabelVolume& pred, const LabelVolume& gt, int64_t num_classes);

}  // namespace rareunet

#endif  // RAREUNET_LOSSES_HPP
