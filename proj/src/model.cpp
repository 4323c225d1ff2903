#include "rareunet/model.hpp"

#include <algorithm>
#include <cmath>

#include "rareunet/error.hpp"
#include "rareunet/hash.hpp"
#include "rareunet/ops.hpp"

namespace rareunet {

namespace {

constexpr float kNormEps = 1e-5f;

int64_t voxels(const nn::Extent3& e) { return e[0] * e[1] * e[2]; }

nn::ConvSpec conv3(int64_t cin, int64_t cout) {
    nn::ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    return s;
}

nn::ConvSpec conv1(int64_t cin, int64_t cout) {
    nn::ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = {1, 1, 1};
    s.padding = {0, 0, 0};
    return s;
}

void declare_conv(std::vector<ParamDecl>& out, const std::string& name, const nn::ConvSpec& spec) {
    const int64_t fan_in = spec.in_channels * spec.kernel_volume();
    out.push_back({name + ".weight",
                   {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]},
                   fan_in,
                   false});
    out.push_back({name + ".bias", {spec.out_channels}, 0, false});
}

void declare_norm(std::vector<ParamDecl>& out, const std::string& name, int64_t channels) {
    out.push_back({name + ".gamma", {channels}, 0, true});
    out.push_back({name + ".beta", {channels}, 0, false});
}

void declare_double_conv(std::vector<ParamDecl>& out, const std::string& block, int64_t cin, int64_t cout) {
    declare_conv(out, block + ".conv1", conv3(cin, cout));
    declare_norm(out, block + ".norm1", cout);
    declare_conv(out, block + ".conv2", conv3(cout, cout));
    declare_norm(out, block + ".norm2", cout);
}

std::string level_name(const char* prefix, int64_t level) { return prefix + std::to_string(level); }

// MACs of a double conv cin -> cout -> cout at extent e.
int64_t double_conv_macs(int64_t cin, int64_t cout, const nn::Extent3& e, int64_t batch) {
    return conv3d_macs(conv3(cin, cout), e, batch) + conv3d_macs(conv3(cout, cout), e, batch);
}

}  // namespace

std::string to_string(NormKind kind) { return kind == NormKind::batch ? "batch" : "instance"; }

NormKind parse_norm_kind(const std::string& text) {
    if (text == "batch") return NormKind::batch;
    if (text == "instance") return NormKind::instance;
    throw ConfigError("unknown norm kind '" + text + "' (expected batch|instance)");
}

void ModelConfig::validate() const {
    if (depth < 2 || depth > 5) throw ConfigError("depth must be within 2..5, got " + std::to_string(depth));
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be within 2..255");
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    const int64_t div = int64_t{1} << (depth - 1);
    for (int64_t e : full_shape) {
        if (e < 1 || e % div != 0)
            throw ConfigError("full_shape " + shape_string({full_shape[0], full_shape[1], full_shape[2]}) +
                              " must be divisible by " + std::to_string(div));
    }
}

nn::Extent3 ModelConfig::extent(int64_t level) const {
    return {full_shape[0] >> level, full_shape[1] >> level, full_shape[2] >> level};
}

KeyValues ModelConfig::to_key_values() const {
    return {{"depth", std::to_string(depth)},
            {"base_channels", std::to_string(base_channels)},
            {"num_classes", std::to_string(num_classes)},
            {"in_channels", std::to_string(in_channels)},
            {"full_d", std::to_string(full_shape[0])},
            {"full_h", std::to_string(full_shape[1])},
            {"full_w", std::to_string(full_shape[2])},
            {"norm", to_string(norm)},
            {"msb_enabled", msb_enabled ? "true" : "false"},
            {"init_seed", std::to_string(init_seed)}};
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
    ModelConfig c;
    c.depth = kv_int(kv, "depth", c.depth);
    c.base_channels = kv_int(kv, "base_channels", c.base_channels);
    c.num_classes = kv_int(kv, "num_classes", c.num_classes);
    c.in_channels = kv_int(kv, "in_channels", c.in_channels);
    c.full_shape = {kv_int(kv, "full_d", c.full_shape[0]), kv_int(kv, "full_h", c.full_shape[1]),
                    kv_int(kv, "full_w", c.full_shape[2])};
    c.norm = parse_norm_kind(kv_string(kv, "norm", to_string(c.norm)));
    c.msb_enabled = kv_bool(kv, "msb_enabled", c.msb_enabled);
    c.init_seed = kv_u64(kv, "init_seed", c.init_seed);
    return c;
}

std::vector<ParamDecl> declare_parameters(const ModelConfig& c) {
    c.validate();
    std::vector<ParamDecl> out;
    const int64_t D = c.depth;
    for (int64_t l = 0; l < D; ++l)
        declare_double_conv(out, level_name("enc", l), l == 0 ? c.in_channels : c.channels(l - 1), c.channels(l));
    declare_double_conv(out, "bottleneck", c.channels(D - 1), c.channels(D - 1));
    for (int64_t l = D - 2; l >= 0; --l) {
        const std::string block = level_name("dec", l);
        const int64_t cin = c.channels(l + 1), cout = c.channels(l);
        // Each transposed-conv output voxel receives exactly one tap per input channel.
        out.push_back({block + ".up.weight", {cin, cout, 2, 2, 2}, cin, false});
        out.push_back({block + ".up.bias", {cout}, 0, false});
        declare_double_conv(out, block, 2 * cout, cout);
    }
    declare_conv(out, "head0", conv1(c.channels(0), c.num_classes));
    if (c.msb_enabled) {
        for (int64_t d = 1; d < D; ++d) declare_double_conv(out, level_name("msb", d), c.in_channels, c.channels(d));
        for (int64_t d = 1; d < D; ++d) declare_conv(out, level_name("head", d), conv1(c.channels(d), c.num_classes));
    }
    return out;
}

int64_t param_count(const ModelConfig& config) {
    int64_t n = 0;
    for (const auto& p : declare_parameters(config)) n += shape_numel(p.shape);
    return n;
}

int64_t conv3d_param_count(const nn::ConvSpec& spec, bool bias) {
    return spec.out_channels * spec.in_channels * spec.kernel_volume() + (bias ? spec.out_channels : 0);
}

int64_t conv3d_macs(const nn::ConvSpec& spec, const nn::Extent3& out_extent, int64_t batch) {
    return batch * voxels(out_extent) * spec.out_channels * spec.in_channels * spec.kernel_volume();
}

int64_t flop_count(const ModelConfig& c, int64_t entry_depth, int64_t batch) {
    c.validate();
    const int64_t D = c.depth;
    if (entry_depth < 0 || entry_depth >= D) throw ConfigError("entry_depth out of range");
    if (entry_depth > 0 && !c.msb_enabled) throw ConfigError("entry_depth > 0 needs msb_enabled");
    const int64_t e = entry_depth;
    int64_t macs = 0;
    // Entry block: encoder 0 on the full path, MSB_e otherwise.
    macs += double_conv_macs(c.in_channels, c.channels(e), c.extent(e), batch);
    for (int64_t l = e + 1; l < D; ++l) macs += double_conv_macs(c.channels(l - 1), c.channels(l), c.extent(l), batch);
    macs += double_conv_macs(c.channels(D - 1), c.channels(D - 1), c.extent(D - 1), batch);
    for (int64_t l = D - 2; l >= e; --l) {
        // Transposed conv: every input voxel scatters Cin x Cout x 8 products.
        macs += batch * voxels(c.extent(l + 1)) * c.channels(l + 1) * c.channels(l) * 8;
        macs += double_conv_macs(2 * c.channels(l), c.channels(l), c.extent(l), batch);
    }
    macs += conv3d_macs(conv1(c.channels(e), c.num_classes), c.extent(e), batch);
    return macs;
}

bool ForwardTrace::touched(const std::string& param) const {
    return std::find(params.begin(), params.end(), param) != params.end();
}

bool ForwardTrace::ran(const std::string& block) const {
    return std::find(blocks.begin(), blocks.end(), block) != blocks.end();
}

struct Model::Ctx {
    ForwardTrace* trace = nullptr;
    nn::NormMode mode = nn::NormMode::train;

    void block(const std::string& name) {
        if (trace) trace->blocks.push_back(name);
    }
    void produced(const Tensor& t) {
        if (trace) trace->max_activation_voxels = std::max(trace->max_activation_voxels, t.size(2) * t.size(3) * t.size(4));
    }
    void layer(int64_t macs) {
        if (!trace) return;
        ++trace->conv_layers;
        trace->macs += macs;
    }
};

Model Model::build(const ModelConfig& config) {
    Model m;
    m.config_ = config;
    for (const auto& decl : declare_parameters(config)) {
        Tensor t;
        if (decl.fan_in > 0) {
            const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(decl.fan_in)));
            t = Tensor::uniform(decl.shape, hash_combine(config.init_seed, hash_string(decl.name)), -bound, bound);
        } else {
            t = Tensor::full(decl.shape, decl.one ? 1.0f : 0.0f);
        }
        t.set_requires_grad(true);
        m.param_index_[decl.name] = m.params_.size();
        m.params_.push_back({decl.name, t});
        if (config.norm == NormKind::batch && decl.one) {
            const std::string norm = decl.name.substr(0, decl.name.size() - std::string(".gamma").size());
            m.norm_index_[norm] = m.stats_.size();
            m.stats_.push_back(nn::RunningStats::identity(decl.shape[0]));
        }
    }
    return m;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw ContractError("no parameter named '" + name + "'");
    return params_[it->second].value;
}

void Model::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

Tensor Model::param_traced(const std::string& name, Ctx& ctx) const {
    if (ctx.trace) ctx.trace->params.push_back(name);
    return param(name);
}

Tensor Model::conv_norm_relu(const std::string& block, int stage, const Tensor& x, Ctx& ctx) const {
    const std::string conv = block + ".conv" + std::to_string(stage);
    const std::string norm = block + ".norm" + std::to_string(stage);
    const Tensor& w = param_traced(conv + ".weight", ctx);
    nn::ConvSpec spec = conv3(w.size(1), w.size(0));
    Tensor y = nn::conv3d(x, w, param_traced(conv + ".bias", ctx), spec);
    ctx.layer(conv3d_macs(spec, {y.size(2), y.size(3), y.size(4)}, y.size(0)));
    const Tensor gamma = param_traced(norm + ".gamma", ctx);
    const Tensor beta = param_traced(norm + ".beta", ctx);
    if (config_.norm == NormKind::batch) {
        y = nn::batch_norm(y, gamma, beta, kNormEps, ctx.mode, &stats_[norm_index_.at(norm)]);
    } else {
        y = nn::instance_norm(y, gamma, beta, kNormEps);
    }
    y = ops::relu(y);
    ctx.produced(y);
    return y;
}

Tensor Model::double_conv(const std::string& block, const Tensor& x, Ctx& ctx) const {
    ctx.block(block);
    return conv_norm_relu(block, 2, conv_norm_relu(block, 1, x, ctx), ctx);
}

Tensor Model::decoder(int64_t level, const Tensor& below, const Tensor& skip, Ctx& ctx) const {
    const std::string block = level_name("dec", level);
    ctx.block(block);
    const Tensor& w = param_traced(block + ".up.weight", ctx);
    Tensor up = nn::conv_transpose3d(below, w, param_traced(block + ".up.bias", ctx));
    ctx.layer(below.size(0) * below.size(2) * below.size(3) * below.size(4) * w.size(0) * w.size(1) * 8);
    ctx.produced(up);
    Tensor cat = nn::concat_channels(up, skip);
    return conv_norm_relu(block, 2, conv_norm_relu(block, 1, cat, ctx), ctx);
}

Tensor Model::head(int64_t level, const Tensor& x, Ctx& ctx) const {
    const std::string block = level_name("head", level);
    ctx.block(block);
    const Tensor& w = param_traced(block + ".weight", ctx);
    nn::ConvSpec spec = conv1(w.size(1), w.size(0));
    Tensor y = nn::conv3d(x, w, param_traced(block + ".bias", ctx), spec);
    ctx.layer(conv3d_macs(spec, {y.size(2), y.size(3), y.size(4)}, y.size(0)));
    ctx.produced(y);
    return y;
}

Tensor Model::deep_path(const Tensor& feat, int64_t level, std::vector<Tensor>* enc_out, Ctx& ctx) const {
    const int64_t D = config_.depth;
    std::vector<Tensor> skips(static_cast<size_t>(D));
    skips[level] = feat;
    Tensor cur = feat;
    for (int64_t l = level + 1; l < D; ++l) {
        Tensor pooled = nn::max_pool3d(cur).output;
        ctx.produced(pooled);
        cur = double_conv(level_name("enc", l), pooled, ctx);
        skips[l] = cur;
        if (enc_out) enc_out->push_back(cur);
    }
    cur = double_conv("bottleneck", cur, ctx);
    for (int64_t l = D - 2; l >= level; --l) cur = decoder(l, cur, skips[l], ctx);
    return cur;
}

void Model::check_input(const Tensor& x, int64_t level) const {
    const nn::Extent3 e = config_.extent(level);
    const Shape want{x.dim() == 5 ? x.size(0) : 1, config_.in_channels, e[0], e[1], e[2]};
    if (x.dim() != 5 || x.shape() != want)
        throw ShapeError("input " + shape_string(x.shape()) + " does not match expected " + shape_string(want) +
                         " at depth " + std::to_string(level));
}

FullPathOutput Model::forward_full(const Tensor& x, ForwardTrace* trace) const {
    check_input(x, 0);
    Ctx ctx{trace, training_ ? nn::NormMode::train : nn::NormMode::eval};
    ctx.produced(x);
    FullPathOutput out;
    Tensor f0 = double_conv("enc0", x, ctx);
    Tensor top = deep_path(f0, 0, &out.enc_feats, ctx);
    out.logits = head(0, top, ctx);
    return out;
}

ScalePathOutput Model::forward_scale(const Tensor& x, int64_t d, ForwardTrace* trace) const {
    if (!config_.msb_enabled) throw ContractError("forward_scale needs msb_enabled");
    if (d < 1 || d >= config_.depth)
        throw ContractError("forward_scale depth " + std::to_string(d) + " outside 1.." + std::to_string(config_.depth - 1));
    check_input(x, d);
    Ctx ctx{trace, training_ ? nn::NormMode::train : nn::NormMode::eval};
    ctx.produced(x);
    ScalePathOutput out;
    out.f_msb = double_conv(level_name("msb", d), x, ctx);
    Tensor top = deep_path(out.f_msb, d, nullptr, ctx);
    out.logits = head(d, top, ctx);
    return out;
}

Tensor Model::forward_at(const Tensor& x, int64_t d, ForwardTrace* trace) const {
    return d == 0 ? forward_full(x, trace).logits : forward_scale(x, d, trace).logits;
}

}  // namespace rareunet
