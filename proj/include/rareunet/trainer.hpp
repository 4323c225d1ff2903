#ifndef RAREUNET_TRAINER_HPP
#define RAREUNET_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rareunet/data.hpp"
#include "rareunet/kv.hpp"
#include "rareunet/losses.hpp"
#include "rareunet/model.hpp"
#include "rareunet/routing.hpp"

namespace rareunet {

enum class TrainMode { rare, unet, unet_aug };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainHyper {
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int64_t epochs = 30;
    int64_t batch_size = 2;
    LossWeights loss;
    TrainMode mode = TrainMode::rare;
    // unet_aug: how downsampled inputs are restored; unet/unet_aug: validation handling.
    InputHandling handling = InputHandling::pad;
    uint64_t seed = 0;
    double val_fraction = 0.2;
    bool log_wall_time = false;  // otherwise wall_seconds is written as 0
    bool sample_paths = false;   // rare: one random MSB path per step instead of all

    // ConfigError on out-of-range values.
    void validate() const;
    KeyValues to_key_values() const;
    static TrainHyper from_key_values(const KeyValues& kv);
};

struct TrainState {
    int64_t step = 0;
    std::vector<std::vector<float>> m;  // one per parameter, same length
    std::vector<std::vector<float>> v;
    uint64_t rng_seed = 0;
    int64_t epoch = 0;
    double best_val_dsc = -1.0;

    static TrainState init(const Model& model, uint64_t rng_seed);
};

// One decoupled-weight-decay Adam update from the gradients stored on the
// parameters. `active` (when given) masks parameters to skip entirely.
// ContractError when an updated parameter has no gradient.
void adamw_step(std::vector<Parameter>& params, TrainState& state, const TrainHyper& hyper,
                const std::vector<bool>* active = nullptr);

struct StepLosses {
    std::vector<double> seg;  // per depth 0..D-1; NaN where the path did not run
    std::vector<double> con;  // per depth 1..D-1
    double total = 0.0;
};

struct Batch {
    Tensor images;       // N,C,D,H,W
    LabelVolume labels;  // N,D,H,W
};

Batch make_batch(const std::vector<const Sample*>& samples);

// Full path plus each scale path on the same batch downsampled by 2^d, one
// backward over the combined loss, one optimizer step. `paths` selects the
// scale paths to run (default: all).
StepLosses train_step_rare(Model& model, const Batch& batch, const TrainHyper& hyper, TrainState& state,
                           const std::vector<int64_t>* paths = nullptr);
// Single full-resolution path with head_0.
StepLosses train_step_unet(Model& model, const Batch& batch, const TrainHyper& hyper, TrainState& state);

struct AugmentResult {
    Tensor image;         // C, full_shape
    int64_t factor = 1;   // 1 = unchanged
};

// p = 0.5 keep; otherwise factor uniform over {2,4,8}, then pad or upsample
// back to full_shape. Labels are not touched.
AugmentResult augment_multires(const Tensor& image, std::mt19937_64& rng, InputHandling handling,
                               const Extent3& full_shape);

struct EpochRecord {
    int64_t epoch = 0;
    int64_t step = 0;
    std::vector<double> seg;  // NaN = not populated
    std::vector<double> con;
    double total = 0.0;
    std::vector<double> val_dsc;  // empty without a validation split
    double wall_seconds = 0.0;
};

std::string metrics_header(int64_t depth);
std::string metrics_row(const EpochRecord& record, int64_t depth);

struct TrainResult {
    Model model;  // after the last epoch
    TrainState state;
    std::vector<EpochRecord> history;
    int64_t best_epoch = 0;
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;  // empty when epochs == 0
    std::filesystem::path metrics;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Epoch loop over shuffled batches. Writes metrics.csv, last.ckpt and
// best.ckpt (highest mean validation DSC across scales) into out_dir.
TrainResult train(const ModelConfig& config, const TrainHyper& hyper, const std::vector<Sample>& train_split,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

struct Checkpoint {
    Model model;
    TrainState state;
    TrainMode mode = TrainMode::rare;
};

// "RUCKPT01", u32 LE header length, key=value header, f32 LE payload:
// parameters in declaration order, running stats, first and second moments.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainState& state, TrainMode mode);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// FormatError when the embedded config or mode differs from the expectation.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected, TrainMode expected_mode);

}  // namespace rareunet

#endif  // RAREUNET_TRAINER_HPP
