#ifndef RAREUNET_MODEL_HPP
#define RAREUNET_MODEL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rareunet/kv.hpp"
#include "rareunet/nn.hpp"
#include "rareunet/tensor.hpp"

namespace rareunet {

enum class NormKind { batch, instance };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& text);

struct ModelConfig {
    int64_t depth = 4;  // resolution levels, 2..5
    int64_t base_channels = 8;
    int64_t num_classes = 3;
    int64_t in_channels = 1;
    nn::Extent3 full_shape{32, 64, 32};
    NormKind norm = NormKind::batch;
    bool msb_enabled = true;
    uint64_t init_seed = 0;

    // ConfigError on out-of-range values or extents not divisible by 2^(depth-1).
    void validate() const;
    int64_t channels(int64_t level) const { return base_channels << level; }
    nn::Extent3 extent(int64_t level) const;

    KeyValues to_key_values() const;
    static ModelConfig from_key_values(const KeyValues& kv);
    bool operator==(const ModelConfig&) const = default;
};

struct ParamDecl {
    std::string name;
    Shape shape;
    int64_t fan_in = 0;  // > 0: He-uniform weight; 0 with `one`: ones; otherwise zeros
    bool one = false;
};

// Every parameter in declaration order: encoders, bottleneck, decoders
// (deepest first), head_0, then MSBs and their heads.
std::vector<ParamDecl> declare_parameters(const ModelConfig& config);
int64_t param_count(const ModelConfig& config);
int64_t conv3d_param_count(const nn::ConvSpec& spec, bool bias);
int64_t conv3d_macs(const nn::ConvSpec& spec, const nn::Extent3& out_extent, int64_t batch = 1);
// Multiply-accumulates of the layers executed for an input entering at
// `entry_depth` (0 = full path). Bias additions are not counted.
int64_t flop_count(const ModelConfig& config, int64_t entry_depth, int64_t batch = 1);

// Filled by forward passes when supplied.
struct ForwardTrace {
    std::vector<std::string> blocks;  // executed blocks, in order
    std::vector<std::string> params;  // parameters read, in order
    int64_t conv_layers = 0;          // conv, transposed-conv and head layers executed
    int64_t macs = 0;
    int64_t max_activation_voxels = 0;  // largest spatial size of any produced activation

    bool touched(const std::string& param) const;
    bool ran(const std::string& block) const;
};

struct FullPathOutput {
    Tensor logits;
    std::vector<Tensor> enc_feats;  // enc_feats[d - 1] = f_enc^(d), d = 1..D-1
};

struct ScalePathOutput {
    Tensor logits;
    Tensor f_msb;
};

struct Parameter {
    std::string name;
    Tensor value;
};

class Model {
public:
    static Model build(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    const Tensor& param(const std::string& name) const;
    // Batch-norm running statistics, one per norm layer in declaration order.
    std::vector<nn::RunningStats>& buffers() { return stats_; }
    const std::vector<nn::RunningStats>& buffers() const { return stats_; }

    // Train mode uses batch statistics and updates the running buffers.
    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    FullPathOutput forward_full(const Tensor& x, ForwardTrace* trace = nullptr) const;
    // x_d at full/2^d, 1 <= d <= D-1. Requires msb_enabled.
    ScalePathOutput forward_scale(const Tensor& x, int64_t d, ForwardTrace* trace = nullptr) const;
    // d = 0 runs forward_full, otherwise forward_scale; returns head_d logits.
    Tensor forward_at(const Tensor& x, int64_t d, ForwardTrace* trace = nullptr) const;

    void zero_grad();

private:
    struct Ctx;
    Tensor param_traced(const std::string& name, Ctx& ctx) const;
    Tensor double_conv(const std::string& block, const Tensor& x, Ctx& ctx) const;
    Tensor conv_norm_relu(const std::string& block, int stage, const Tensor& x, Ctx& ctx) const;
    Tensor decoder(int64_t level, const Tensor& below, const Tensor& skip, Ctx& ctx) const;
    Tensor head(int64_t level, const Tensor& x, Ctx& ctx) const;
    // `feat` is the level-`level` encoder feature. Runs the deeper encoders,
    // the bottleneck and the decoders back up to `level`, and returns the
    // decoded level-`level` feature map. Deeper encoder outputs are appended
    // to `enc_out` when given.
    Tensor deep_path(const Tensor& feat, int64_t level, std::vector<Tensor>* enc_out, Ctx& ctx) const;
    void check_input(const Tensor& x, int64_t level) const;

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::map<std::string, size_t> param_index_;
    std::map<std::string, size_t> norm_index_;
    mutable std::vector<nn::RunningStats> stats_;
    bool training_ = true;
};

}  // namespace rareunet

#endif  // RAREUNET_MODEL_HPP
