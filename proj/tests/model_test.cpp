#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "rareunet/model.hpp"
#include "rareunet/ops.hpp"

using namespace rareunet;

namespace {

ModelConfig small_config(int64_t depth = 3) {
    ModelConfig c;
    c.depth = depth;
    c.base_channels = 4;
    c.num_classes = 3;
    c.in_channels = 1;
    c.full_shape = {8, 16, 8};
    c.init_seed = 11;
    return c;
}

ModelConfig desk_config() { return ModelConfig{}; }

Tensor input_at(const ModelConfig& c, int64_t d, uint64_t seed, int64_t batch = 1) {
    const auto e = c.extent(d);
    return Tensor::uniform({batch, c.in_channels, e[0], e[1], e[2]}, seed, 0.0f, 1.0f);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(float)) != 0) return false;
    return true;
}

// Hand-counted plain UNet parameters for the layer layout used by the model.
int64_t plain_unet_params(const ModelConfig& c) {
    auto conv = [](int64_t cin, int64_t cout, int64_t k) { return cout * cin * k * k * k + cout; };
    auto dbl = [&](int64_t cin, int64_t cout) { return conv(cin, cout, 3) + 2 * cout + conv(cout, cout, 3) + 2 * cout; };
    int64_t n = 0;
    for (int64_t l = 0; l < c.depth; ++l) n += dbl(l == 0 ? c.in_channels : c.channels(l - 1), c.channels(l));
    n += dbl(c.channels(c.depth - 1), c.channels(c.depth - 1));
    for (int64_t l = 0; l + 1 < c.depth; ++l)
        n += c.channels(l + 1) * c.channels(l) * 8 + c.channels(l) + dbl(2 * c.channels(l), c.channels(l));
    return n + conv(c.channels(0), c.num_classes, 1);
}

// Plain UNet assembled straight from the primitives, reading the model's weights.
Tensor reference_unet(const Model& m, const Tensor& x) {
    const auto& c = m.config();
    auto p = [&](const std::string& n) { return m.param(n); };
    auto cnr = [&](const std::string& pre, const Tensor& in) {
        const Tensor& w = p(pre + ".weight");
        nn::ConvSpec s;
        s.in_channels = w.size(1);
        s.out_channels = w.size(0);
        return nn::conv3d(in, w, p(pre + ".bias"), s);
    };
    std::vector<nn::RunningStats> stats = m.buffers();
    size_t next = 0;
    auto stage = [&](const std::string& blk, int i, const Tensor& in) {
        const std::string n = blk + ".norm" + std::to_string(i);
        Tensor y = cnr(blk + ".conv" + std::to_string(i), in);
        y = nn::batch_norm(y, p(n + ".gamma"), p(n + ".beta"), 1e-5f, nn::NormMode::train, &stats[next++]);
        return ops::relu(y);
    };
    auto dbl = [&](const std::string& blk, const Tensor& in) { return stage(blk, 2, stage(blk, 1, in)); };
    std::vector<Tensor> skips;
    Tensor cur = x;
    for (int64_t l = 0; l < c.depth; ++l) {
        if (l > 0) cur = nn::max_pool3d(cur).output;
        cur = dbl("enc" + std::to_string(l), cur);
        skips.push_back(cur);
    }
    cur = dbl("bottleneck", cur);
    for (int64_t l = c.depth - 2; l >= 0; --l) {
        const std::string blk = "dec" + std::to_string(l);
        Tensor up = nn::conv_transpose3d(cur, p(blk + ".up.weight"), p(blk + ".up.bias"));
        cur = dbl(blk, nn::concat_channels(up, skips[l]));
    }
    nn::ConvSpec h;
    h.in_channels = c.channels(0);
    h.out_channels = c.num_classes;
    h.kernel = {1, 1, 1};
    h.padding = {0, 0, 0};
    return nn::conv3d(cur, p("head0.weight"), p("head0.bias"), h);
}

}  // namespace

TEST(ModelConfigTest, RejectsIndivisibleShape) {
    ModelConfig c;
    c.full_shape = {30, 64, 32};
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(Model::build(c), ConfigError);
    c.full_shape = {32, 64, 32};
    c.depth = 6;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfigTest, KeyValueRoundTrip) {
    ModelConfig c = small_config();
    c.norm = NormKind::instance;
    c.msb_enabled = false;
    EXPECT_EQ(ModelConfig::from_key_values(c.to_key_values()), c);
}

TEST(ModelBuild, DeskConfigHeadsMapToClasses) {
    Model m = Model::build(desk_config());
    for (int64_t d = 0; d < 4; ++d) {
        const Tensor& w = m.param("head" + std::to_string(d) + ".weight");
        EXPECT_EQ(w.shape(), (Shape{3, 8 << d, 1, 1, 1}));
    }
    for (int64_t d = 1; d < 4; ++d) {
        EXPECT_EQ(m.param("msb" + std::to_string(d) + ".conv1.weight").shape(), (Shape{8 << d, 1, 3, 3, 3}));
    }
}

TEST(ModelBuild, PlainModeMatchesHandCountedUnet) {
    ModelConfig c = desk_config();
    c.msb_enabled = false;
    EXPECT_EQ(param_count(c), plain_unet_params(c));
    ModelConfig r = desk_config();
    EXPECT_LT(param_count(c), param_count(r));
    // Shared layers keep identical initial values across modes.
    Model plain = Model::build(c);
    Model rare = Model::build(r);
    for (const auto& p : plain.parameters()) EXPECT_TRUE(bit_equal(p.value, rare.param(p.name))) << p.name;
}

TEST(ModelBuild, SingleConvParamCount) {
    nn::ConvSpec s;
    s.kernel = {1, 1, 1};
    s.padding = {0, 0, 0};
    EXPECT_EQ(conv3d_param_count(s, true), 2);
}

TEST(ModelBuild, DeskParamCountFixture) {
    // Pinned from the first build of the default configuration.
    EXPECT_EQ(param_count(desk_config()), 721940);
    ModelConfig c = desk_config();
    c.msb_enabled = false;
    EXPECT_EQ(param_count(c), 572747);
}

TEST(ModelBuild, ParamCountMatchesTensors) {
    Model m = Model::build(desk_config());
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.value.numel();
    EXPECT_EQ(n, param_count(desk_config()));
}

TEST(ModelBuild, SameSeedBitIdentical) {
    Model a = Model::build(small_config());
    Model b = Model::build(small_config());
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (size_t i = 0; i < a.parameters().size(); ++i)
        EXPECT_TRUE(bit_equal(a.parameters()[i].value, b.parameters()[i].value));
    ModelConfig other = small_config();
    other.init_seed = 12;
    EXPECT_FALSE(bit_equal(a.param("enc0.conv1.weight"), Model::build(other).param("enc0.conv1.weight")));
}

TEST(ModelBuild, HeUniformBoundsAndDefaults) {
    Model m = Model::build(small_config());
    const Tensor& w = m.param("enc1.conv1.weight");  // fan_in = 4 * 27
    const float bound = std::sqrt(6.0f / 108.0f);
    float lo = 0, hi = 0;
    for (float v : w.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    EXPECT_LE(hi, bound);
    EXPECT_GE(lo, -bound);
    EXPECT_GT(hi, 0.8f * bound);
    for (float v : m.param("enc1.conv1.bias").data()) EXPECT_EQ(v, 0.0f);
    for (float v : m.param("enc1.norm1.gamma").data()) EXPECT_EQ(v, 1.0f);
    for (float v : m.param("enc1.norm1.beta").data()) EXPECT_EQ(v, 0.0f);
}

TEST(ModelForward, DeskFullPathShapes) {
    Model m = Model::build(desk_config());
    auto out = m.forward_full(input_at(desk_config(), 0, 3));
    EXPECT_EQ(out.logits.shape(), (Shape{1, 3, 32, 64, 32}));
    ASSERT_EQ(out.enc_feats.size(), 3u);
    EXPECT_EQ(out.enc_feats[0].shape(), (Shape{1, 16, 16, 32, 16}));
    EXPECT_EQ(out.enc_feats[1].shape(), (Shape{1, 32, 8, 16, 8}));
    EXPECT_EQ(out.enc_feats[2].shape(), (Shape{1, 64, 4, 8, 4}));
}

TEST(ModelForward, DeskScalePathShapes) {
    const ModelConfig c = desk_config();
    Model m = Model::build(c);
    for (int64_t d = 1; d < 4; ++d) {
        auto out = m.forward_scale(input_at(c, d, 3), d);
        const auto e = c.extent(d);
        EXPECT_EQ(out.logits.shape(), (Shape{1, 3, e[0], e[1], e[2]}));
        EXPECT_EQ(out.f_msb.shape(), (Shape{1, 8 << d, e[0], e[1], e[2]}));
    }
}

TEST(ModelForward, ZeroInputFinite) {
    const ModelConfig c = small_config();
    Model m = Model::build(c);
    auto x = Tensor::zeros({1, 1, 8, 16, 8});
    const Tensor train_logits = m.forward_full(x).logits;
    for (float v : train_logits.data()) ASSERT_TRUE(std::isfinite(v));
    m.set_training(false);
    const Tensor eval_logits = m.forward_full(x).logits;
    for (float v : eval_logits.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(ModelForward, RepeatedForwardIdentical) {
    const ModelConfig c = small_config();
    Model m = Model::build(c);
    auto x = input_at(c, 0, 5, 2);
    EXPECT_TRUE(bit_equal(m.forward_full(x).logits, m.forward_full(x).logits));
    m.set_training(false);
    auto x1 = input_at(c, 1, 6);
    EXPECT_TRUE(bit_equal(m.forward_scale(x1, 1).logits, m.forward_scale(x1, 1).logits));
}

TEST(ModelForward, ShapeAndDepthErrors) {
    const ModelConfig c = small_config();
    Model m = Model::build(c);
    EXPECT_THROW(m.forward_full(input_at(c, 1, 1)), ShapeError);
    EXPECT_THROW(m.forward_scale(input_at(c, 0, 1), 1), ShapeError);
    EXPECT_THROW(m.forward_scale(input_at(c, 1, 1), 0), ContractError);
    EXPECT_THROW(m.forward_scale(input_at(c, 1, 1), 3), ContractError);
    ModelConfig plain = c;
    plain.msb_enabled = false;
    EXPECT_THROW(Model::build(plain).forward_scale(input_at(c, 1, 1), 1), ContractError);
}

TEST(ModelForward, DeepestMsbSkipsDecoders) {
    const ModelConfig c = small_config(3);
    Model m = Model::build(c);
    ForwardTrace t;
    m.forward_scale(input_at(c, 2, 1), 2, &t);
    EXPECT_EQ(t.blocks, (std::vector<std::string>{"msb2", "bottleneck", "head2"}));
}

TEST(ModelForward, ScalePathRunsFewerLayers) {
    const ModelConfig c = desk_config();
    Model m = Model::build(c);
    ForwardTrace full, half;
    m.forward_full(input_at(c, 0, 1), &full);
    m.forward_scale(input_at(c, 1, 1), 1, &half);
    EXPECT_LT(half.conv_layers, full.conv_layers);
    EXPECT_EQ(full.blocks.front(), "enc0");
    EXPECT_EQ(half.blocks.front(), "msb1");
}

TEST(ModelPruning, ScalePathNeverReadsShallowerBlocksOrForeignHeads) {
    for (int64_t depth = 2; depth <= 4; ++depth) {
        ModelConfig c = small_config(depth);
        c.full_shape = {8, 8, 8};
        Model m = Model::build(c);
        for (int64_t d = 1; d < depth; ++d) {
            ForwardTrace t;
            m.forward_scale(input_at(c, d, 2), d, &t);
            for (const auto& name : t.params) {
                for (int64_t k = 0; k < d; ++k) {
                    EXPECT_NE(name.rfind("enc" + std::to_string(k) + ".", 0), 0u) << name;
                    EXPECT_NE(name.rfind("dec" + std::to_string(k) + ".", 0), 0u) << name;
                }
                for (int64_t k = 0; k < depth; ++k) {
                    if (k != d) EXPECT_NE(name.rfind("head" + std::to_string(k) + ".", 0), 0u) << name;
                    if (k != d) EXPECT_NE(name.rfind("msb" + std::to_string(k) + ".", 0), 0u) << name;
                }
            }
            EXPECT_TRUE(t.touched("head" + std::to_string(d) + ".weight"));
            EXPECT_TRUE(t.touched("bottleneck.conv1.weight"));
        }
    }
}

TEST(ModelPruning, ActivationsNeverFinerThanEntryLevel) {
    const ModelConfig c = small_config(3);
    Model m = Model::build(c);
    for (int64_t d = 0; d < 3; ++d) {
        ForwardTrace t;
        m.forward_at(input_at(c, d, 2), d, &t);
        const auto e = c.extent(d);
        EXPECT_EQ(t.max_activation_voxels, e[0] * e[1] * e[2]);
    }
}

TEST(ModelGradients, PathLossReachesOnlyExecutedBlocks) {
    const ModelConfig c = small_config(4);
    Model m = Model::build(ModelConfig{c.depth, c.base_channels, c.num_classes, c.in_channels, {8, 8, 8}, c.norm,
                                       true, c.init_seed});
    const ModelConfig& mc = m.config();
    for (int64_t d = 0; d < 4; ++d) {
        m.zero_grad();
        ForwardTrace t;
        Tensor logits = m.forward_at(input_at(mc, d, 4), d, &t);
        ops::sum(ops::mul(logits, Tensor::uniform(logits.shape(), 9, -1, 1))).backward();
        for (const auto& p : m.parameters()) {
            const std::string& n = p.name;
            const std::string blk = n.substr(0, n.find('.'));
            const int64_t lvl = blk == "bottleneck" ? 99 : std::stoll(blk.substr(blk.find_first_of("0123456789")));
            bool expect = false;
            if (blk == "bottleneck") expect = true;
            else if (blk.rfind("enc", 0) == 0) expect = d == 0 ? true : lvl > d;
            else if (blk.rfind("dec", 0) == 0) expect = lvl >= d;
            else if (blk.rfind("head", 0) == 0) expect = lvl == d;
            else if (blk.rfind("msb", 0) == 0) expect = lvl == d;
            EXPECT_EQ(p.value.has_grad(), expect) << "d=" << d << " " << n;
            EXPECT_EQ(t.touched(n), expect) << "d=" << d << " " << n;
        }
    }
}

TEST(ModelEquivalence, PlainModeEqualsReferenceUnetBitForBit) {
    ModelConfig c = small_config(3);
    c.msb_enabled = false;
    Model m = Model::build(c);
    auto x = input_at(c, 0, 8, 2);
    Tensor ref = reference_unet(m, x);
    EXPECT_TRUE(bit_equal(m.forward_full(x).logits, ref));
}

TEST(ModelFlops, SingleConvClosedForm) {
    nn::ConvSpec s;
    EXPECT_EQ(conv3d_macs(s, {4, 4, 4}), 1728);
}

TEST(ModelFlops, MatchesExecutedLayers) {
    for (int64_t depth = 2; depth <= 4; ++depth) {
        ModelConfig c = small_config(depth);
        c.full_shape = {8, 16, 8};
        Model m = Model::build(c);
        for (int64_t d = 0; d < depth; ++d) {
            ForwardTrace t;
            m.forward_at(input_at(c, d, 1, 2), d, &t);
            EXPECT_EQ(t.macs, flop_count(c, d, 2)) << depth << " " << d;
        }
    }
}

TEST(ModelFlops, DecreaseWithEntryDepth) {
    const ModelConfig c = desk_config();
    for (int64_t d = 1; d < 4; ++d) EXPECT_LT(flop_count(c, d), flop_count(c, d - 1));
    EXPECT_THROW(flop_count(c, 4), ConfigError);
}
