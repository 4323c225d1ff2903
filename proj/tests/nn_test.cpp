#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "rareunet/gradcheck.hpp"
#include "rareunet/nn.hpp"
#include "rareunet/ops.hpp"
#include "support/oracles.hpp"

using namespace rareunet;
using nn::ConvSpec;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

ConvSpec spec_of(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = {k, k, k};
    s.stride = {stride, stride, stride};
    s.padding = {pad, pad, pad};
    return s;
}

}  // namespace

TEST(Conv3d, OneVoxelScale) {
    auto x = Tensor::from_vector({1, 1, 1, 1, 1}, {2.0f});
    auto w = Tensor::from_vector({1, 1, 1, 1, 1}, {3.0f});
    auto b = Tensor::from_vector({1}, {0.5f});
    auto y = nn::conv3d(x, w, b, spec_of(1, 1, 1, 1, 0));
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
    EXPECT_FLOAT_EQ(y.item(), 6.5f);
}

TEST(Conv3d, DeltaKernelIsIdentity) {
    auto x = Tensor::uniform({1, 1, 3, 3, 3}, 5, -1, 1);
    auto w = Tensor::zeros({1, 1, 3, 3, 3});
    w.data()[13] = 1.0f;
    auto y = nn::conv3d(x, w, Tensor(), spec_of(1, 1, 3, 1, 1));
    EXPECT_EQ(values(y), values(x));
}

TEST(Conv3d, Errors) {
    auto x = Tensor::zeros({1, 2, 4, 4, 4});
    EXPECT_THROW(nn::conv3d(x, Tensor::zeros({1, 3, 3, 3, 3}), Tensor(), spec_of(3, 1, 3, 1, 1)), ShapeError);
    EXPECT_THROW(nn::conv3d(x, Tensor::zeros({1, 2, 5, 5, 5}), Tensor(), spec_of(2, 1, 5, 1, 0)), ShapeError);
    EXPECT_THROW(nn::conv3d(Tensor::zeros({2, 4, 4, 4}), Tensor::zeros({1, 2, 3, 3, 3}), Tensor(), spec_of(2, 1, 3, 1, 1)),
                 ShapeError);
}

TEST(Conv3d, OutputExtentFormula) {
    auto s = spec_of(1, 1, 3, 2, 1);
    EXPECT_EQ(s.output_extent({5, 6, 7}), (nn::Extent3{3, 3, 4}));
    EXPECT_THROW(spec_of(1, 1, 5, 1, 0).output_extent({4, 4, 4}), ShapeError);
}

TEST(Conv3d, MatchesDirectOracleOnSeededCase) {
    auto x = Tensor::uniform({1, 2, 5, 5, 5}, 11, -1, 1);
    auto w = Tensor::uniform({3, 2, 3, 3, 3}, 12, -1, 1);
    auto b = Tensor::uniform({3}, 13, -1, 1);
    auto y = nn::conv3d(x, w, b, spec_of(2, 3, 3, 1, 1));
    auto ref = oracle::conv3d(values(x), {1, 2, 5, 5, 5}, values(w), {3, 2, 3, 3, 3}, values(b), 1, 1, nullptr);
    ASSERT_EQ(ref.size(), static_cast<size_t>(y.numel()));
    for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
}

// Twenty shapes spanning batch, channels, kernel size, stride, padding and
// tile boundaries (the 41-wide case forces partial row tiles).
TEST(Conv3d, MatchesDirectOracleOnTwentyShapes) {
    std::mt19937_64 rng(2024);
    int checked = 0;
    for (int i = 0; i < 20; ++i) {
        const int64_t n = 1 + i % 2;
        const int64_t cin = 1 + static_cast<int64_t>(rng() % 3);
        const int64_t cout = 1 + static_cast<int64_t>(rng() % 4);
        const int64_t k = (i % 4 == 3) ? 1 : (i % 5 == 4 ? 2 : 3);
        const int64_t stride = (i % 3 == 2) ? 2 : 1;
        const int64_t pad = k == 3 ? static_cast<int64_t>(rng() % 2) : 0;
        const int64_t d = 3 + static_cast<int64_t>(rng() % 4), h = 3 + static_cast<int64_t>(rng() % 5);
        const int64_t w = i == 7 ? 41 : 3 + static_cast<int64_t>(rng() % 6);
        auto x = Tensor::uniform({n, cin, d, h, w}, 100 + i, -1, 1);
        auto wt = Tensor::uniform({cout, cin, k, k, k}, 200 + i, -1, 1);
        auto b = Tensor::uniform({cout}, 300 + i, -1, 1);
        auto y = nn::conv3d(x, wt, b, spec_of(cin, cout, k, stride, pad));
        oracle::Dims5 yd{};
        auto ref = oracle::conv3d(values(x), {n, cin, d, h, w}, values(wt), {cout, cin, k, k, k}, values(b), stride, pad, &yd);
        ASSERT_EQ(y.shape(), (Shape{yd.n, yd.c, yd.d, yd.h, yd.w})) << "case " << i;
        double worst = 0.0;
        for (size_t j = 0; j < ref.size(); ++j) worst = std::max(worst, std::abs(y.data()[j] - ref[j]));
        EXPECT_LE(worst, 1e-5) << "case " << i;
        ++checked;
    }
    EXPECT_EQ(checked, 20);
}

TEST(Conv3d, LargeVolumeCrossesTiles) {
    // 2 x 3 x 20 x 24 x 20 output voxels > one 4096-voxel tile.
    auto x = Tensor::uniform({1, 2, 20, 24, 20}, 7, -1, 1);
    auto w = Tensor::uniform({3, 2, 3, 3, 3}, 8, -1, 1);
    auto y = nn::conv3d(x, w, Tensor(), spec_of(2, 3, 3, 1, 1));
    auto ref = oracle::conv3d(values(x), {1, 2, 20, 24, 20}, values(w), {3, 2, 3, 3, 3}, {}, 1, 1, nullptr);
    for (size_t j = 0; j < ref.size(); ++j) ASSERT_NEAR(y.data()[j], ref[j], 1e-5);
}

TEST(MaxPool3d, Examples) {
    auto c = nn::max_pool3d(Tensor::full({1, 2, 4, 4, 4}, 3.0f));
    EXPECT_EQ(c.output.shape(), (Shape{1, 2, 2, 2, 2}));
    for (float v : c.output.data()) EXPECT_EQ(v, 3.0f);

    std::vector<float> window(8);
    std::iota(window.begin(), window.end(), 1.0f);
    auto m = nn::max_pool3d(Tensor::from_vector({1, 1, 2, 2, 2}, window));
    EXPECT_EQ(m.output.item(), 8.0f);
    EXPECT_EQ(m.argmax[0], 7);

    auto x = Tensor::uniform({1, 1, 4, 4, 4}, 3, -1, 1);
    EXPECT_EQ(values(nn::max_pool3d(x).output), oracle::max_pool2(values(x), {1, 1, 4, 4, 4}));
    EXPECT_THROW(nn::max_pool3d(Tensor::zeros({1, 1, 3, 4, 4})), ShapeError);
}

TEST(MaxPool3d, TieGoesToFirstIndex) {
    auto x = Tensor::full({1, 1, 2, 2, 2}, 1.0f).set_requires_grad(true);
    ops::sum(nn::max_pool3d(x).output).backward();
    EXPECT_EQ(x.grad()[0], 1.0f);
    for (int i = 1; i < 8; ++i) EXPECT_EQ(x.grad()[i], 0.0f);
}

TEST(MaxPool3d, HalvesConvOutput) {
    auto y = nn::conv3d(Tensor::uniform({1, 1, 8, 6, 4}, 1, -1, 1), Tensor::uniform({2, 1, 3, 3, 3}, 2, -1, 1), Tensor(),
                        spec_of(1, 2, 3, 1, 1));
    EXPECT_EQ(nn::max_pool3d(y).output.shape(), (Shape{1, 2, 4, 3, 2}));
}

TEST(ConvTranspose3d, DeltaInputFillsBlock) {
    auto y = nn::conv_transpose3d(Tensor::from_vector({1, 1, 1, 1, 1}, {2.5f}), Tensor::full({1, 1, 2, 2, 2}, 1.0f), Tensor());
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
    for (float v : y.data()) EXPECT_EQ(v, 2.5f);
    auto z = nn::conv_transpose3d(Tensor::zeros({1, 2, 2, 3, 2}), Tensor::uniform({2, 3, 2, 2, 2}, 1, -1, 1), Tensor());
    EXPECT_EQ(z.shape(), (Shape{1, 3, 4, 6, 4}));
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_THROW(nn::conv_transpose3d(Tensor::zeros({1, 2, 2, 2, 2}), Tensor::zeros({3, 1, 2, 2, 2}), Tensor()), ShapeError);
}

// <conv(x), y> == <x, conv_transpose(y)> when both share the weight buffer.
TEST(ConvTranspose3d, IsAdjointOfStrideTwoConv) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const int64_t ci = 2, co = 3;
        auto x = Tensor::uniform({2, ci, 4, 6, 4}, seed, -1, 1);
        auto w = Tensor::uniform({co, ci, 2, 2, 2}, seed + 10, -1, 1);
        auto y = Tensor::uniform({2, co, 2, 3, 2}, seed + 20, -1, 1);
        auto cx = nn::conv3d(x, w, Tensor(), spec_of(ci, co, 2, 2, 0));
        auto ty = nn::conv_transpose3d(y, w, Tensor());
        const double lhs = oracle::dot(values(cx), values(y));
        const double rhs = oracle::dot(values(x), values(ty));
        EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(lhs))) << "seed " << seed;
    }
}

// Forward of the transpose equals the data gradient of the matching conv.
TEST(ConvTranspose3d, EqualsConvBackwardData) {
    auto x = Tensor::uniform({1, 2, 4, 4, 4}, 1, -1, 1).set_requires_grad(true);
    auto w = Tensor::uniform({3, 2, 2, 2, 2}, 2, -1, 1);
    auto gy = Tensor::uniform({1, 3, 2, 2, 2}, 3, -1, 1);
    ops::sum(ops::mul(nn::conv3d(x, w, Tensor(), spec_of(2, 3, 2, 2, 0)), gy)).backward();
    auto t = nn::conv_transpose3d(gy, w, Tensor());
    for (int64_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(t.data()[i], x.grad()[i], 1e-5);
}

TEST(BatchNorm, IdentityRegime) {
    // Exactly zero-mean, unit-variance channel.
    std::vector<float> v{-1, 1, -1, 1, -1, 1, -1, 1};
    auto x = Tensor::from_vector({1, 1, 2, 2, 2}, v);
    const float eps = 1e-5f;
    auto y = nn::batch_norm(x, Tensor::full({1}, 1), Tensor::zeros({1}), eps, nn::NormMode::train, nullptr);
    const double bound = 1.0 - 1.0 / std::sqrt(1.0 + eps);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(y.data()[i], v[i], bound + 1e-7);
}

TEST(BatchNorm, ConstantChannelMapsToBeta) {
    auto x = Tensor::full({2, 1, 2, 2, 2}, 4.2f);
    auto y = nn::batch_norm(x, Tensor::full({1}, 3), Tensor::full({1}, 5), 1e-5f, nn::NormMode::train, nullptr);
    for (float f : y.data()) EXPECT_EQ(f, 5.0f);
}

TEST(BatchNorm, TrainMomentsAndRunningStats) {
    auto x = Tensor::uniform({2, 3, 4, 4, 4}, 77, -2, 5);
    auto stats = nn::RunningStats::identity(3);
    auto y = nn::batch_norm(x, Tensor::full({3}, 1), Tensor::zeros({3}), 1e-5f, nn::NormMode::train, &stats);
    const int64_t S = 64;
    for (int64_t c = 0; c < 3; ++c) {
        double m = 0, sq = 0, xm = 0;
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t s = 0; s < S; ++s) {
                m += y.data()[(n * 3 + c) * S + s];
                xm += x.data()[(n * 3 + c) * S + s];
            }
        m /= 2 * S;
        xm /= 2 * S;
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t s = 0; s < S; ++s) sq += std::pow(y.data()[(n * 3 + c) * S + s] - m, 2);
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(sq / (2 * S), 1.0, 1e-3);
        EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-5);
    }
    // Eval mode reads the stats without touching them.
    auto before = stats.mean;
    nn::batch_norm(x, Tensor::full({3}, 1), Tensor::zeros({3}), 1e-5f, nn::NormMode::eval, &stats);
    EXPECT_EQ(before, stats.mean);
    EXPECT_THROW(nn::batch_norm(x, Tensor::full({3}, 1), Tensor::zeros({3}), 0.0f, nn::NormMode::train, nullptr),
                 ContractError);
    EXPECT_THROW(nn::batch_norm(x, Tensor::full({2}, 1), Tensor::zeros({2}), 1e-5f, nn::NormMode::train, nullptr),
                 ShapeError);
}

TEST(InstanceNorm, PerSampleMoments) {
    auto x = Tensor::uniform({2, 2, 2, 4, 2}, 5, 0, 3);
    auto y = nn::instance_norm(x, Tensor::full({2}, 1), Tensor::zeros({2}), 1e-5f);
    for (int64_t g = 0; g < 4; ++g) {
        double m = 0;
        for (int64_t s = 0; s < 16; ++s) m += y.data()[g * 16 + s];
        EXPECT_NEAR(m / 16, 0.0, 1e-5);
    }
}

TEST(Softmax, Examples) {
    auto p = nn::softmax_channels(Tensor::from_vector({1, 2, 1}, {0.3f, 0.3f}));
    EXPECT_FLOAT_EQ(p.data()[0], 0.5f);
    EXPECT_FLOAT_EQ(p.data()[1], 0.5f);
    auto q = nn::softmax_channels(Tensor::from_vector({1, 2, 1}, {1000.0f, 0.0f}));
    EXPECT_EQ(q.data()[0], 1.0f);
    EXPECT_EQ(q.data()[1], 0.0f);
    auto r = nn::softmax_channels(Tensor::uniform({2, 4, 3, 3, 3}, 9, -10, 10));
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t s = 0; s < 27; ++s) {
            double sum = 0;
            for (int64_t c = 0; c < 4; ++c) {
                const float v = r.data()[(n * 4 + c) * 27 + s];
                EXPECT_GE(v, 0.0f);
                sum += v;
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    EXPECT_THROW(nn::softmax_channels(Tensor::zeros({1, 1, 4})), ShapeError);
}

TEST(Concat, JoinsChannels) {
    auto a = Tensor::full({1, 1, 1, 1, 2}, 1.0f);
    auto b = Tensor::full({1, 2, 1, 1, 2}, 2.0f);
    auto c = nn::concat_channels(a, b);
    EXPECT_EQ(c.shape(), (Shape{1, 3, 1, 1, 2}));
    EXPECT_EQ(values(c), (std::vector<float>{1, 1, 2, 2, 2, 2}));
    EXPECT_THROW(nn::concat_channels(a, Tensor::zeros({1, 1, 1, 2, 2})), ShapeError);
}

TEST(Argmax, LowestChannelWinsTies) {
    auto x = Tensor::from_vector({1, 3, 1, 1, 2}, {1, 5, 2, 5, 2, 0});
    auto l = nn::argmax_channels(x);
    EXPECT_EQ(l.shape, (Shape{1, 1, 1, 2}));
    EXPECT_EQ(l.values, (std::vector<uint8_t>{1, 0}));
}

class NnGradcheck : public ::testing::TestWithParam<uint64_t> {};

TEST_P(NnGradcheck, Conv3d) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    const int64_t stride = 1 + s % 2;
    auto report = finite_diff_check(
        [&](auto& in) { return proj(nn::conv3d(in[0], in[1], in[2], spec_of(2, 3, 3, stride, 1))); },
        {Tensor::uniform({1, 2, 4, 5, 4}, s, -1, 1), Tensor::uniform({3, 2, 3, 3, 3}, s + 1, -0.5f, 0.5f),
         Tensor::uniform({3}, s + 2, -1, 1)});
    EXPECT_TRUE(report.pass) << report.inputs[0].max_rel_error << " " << report.inputs[1].max_rel_error;
}

TEST_P(NnGradcheck, ConvTranspose3d) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    auto report = finite_diff_check([&](auto& in) { return proj(nn::conv_transpose3d(in[0], in[1], in[2])); },
                                    {Tensor::uniform({2, 3, 2, 3, 2}, s, -1, 1), Tensor::uniform({3, 2, 2, 2, 2}, s + 1, -1, 1),
                                     Tensor::uniform({2}, s + 2, -1, 1)});
    EXPECT_TRUE(report.pass);
}

TEST_P(NnGradcheck, MaxPool3d) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    std::vector<float> v(2 * 4 * 4 * 2);
    for (size_t i = 0; i < v.size(); ++i) v[i] = 0.05f * static_cast<float>(i);
    std::mt19937_64 rng(s);
    std::shuffle(v.begin(), v.end(), rng);
    auto report = finite_diff_check([&](auto& in) { return proj(nn::max_pool3d(in[0]).output); },
                                    {Tensor::from_vector({1, 2, 4, 4, 2}, v)});
    EXPECT_TRUE(report.pass);
}

TEST_P(NnGradcheck, BatchNormTrainAndEval) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    auto f = [&](auto& in) {
        return proj(nn::batch_norm(in[0], in[1], in[2], 1e-5f, nn::NormMode::train, nullptr));
    };
    auto report = finite_diff_check(f, {Tensor::uniform({2, 2, 2, 3, 2}, s, -1, 2), Tensor::uniform({2}, s + 1, 0.5f, 1.5f),
                                        Tensor::uniform({2}, s + 2, -1, 1)});
    EXPECT_TRUE(report.pass) << report.inputs[0].max_rel_error;

    auto stats = nn::RunningStats::identity(2);
    stats.mean = {0.3f, -0.2f};
    stats.var = {1.7f, 0.6f};
    CenteredProjection proj_eval(s);
    auto g = [&](auto& in) {
        return proj_eval(nn::batch_norm(in[0], in[1], in[2], 1e-5f, nn::NormMode::eval, &stats));
    };
    EXPECT_TRUE(finite_diff_check(g, {Tensor::uniform({2, 2, 2, 3, 2}, s, -1, 2), Tensor::uniform({2}, s + 1, 0.5f, 1.5f),
                                      Tensor::uniform({2}, s + 2, -1, 1)})
                    .pass);
}

TEST_P(NnGradcheck, InstanceNorm) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    auto report = finite_diff_check([&](auto& in) { return proj(nn::instance_norm(in[0], in[1], in[2], 1e-5f)); },
                                    {Tensor::uniform({2, 2, 2, 2, 3}, s, -1, 2), Tensor::uniform({2}, s + 1, 0.5f, 1.5f),
                                     Tensor::uniform({2}, s + 2, -1, 1)});
    EXPECT_TRUE(report.pass);
}

TEST_P(NnGradcheck, Softmax) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    auto report = finite_diff_check([&](auto& in) { return proj(nn::softmax_channels(in[0])); },
                                    {Tensor::uniform({2, 3, 2, 2, 2}, s, -3, 3)});
    EXPECT_TRUE(report.pass);
}

TEST_P(NnGradcheck, Concat) {
    const uint64_t s = GetParam();
    CenteredProjection proj(s);
    auto report = finite_diff_check([&](auto& in) { return proj(nn::concat_channels(in[0], in[1])); },
                                    {Tensor::uniform({2, 1, 2, 2, 2}, s, -1, 1), Tensor::uniform({2, 2, 2, 2, 2}, s + 1, -1, 1)});
    EXPECT_TRUE(report.pass);
}

TEST_P(NnGradcheck, ConvReluComposite) {
    // Draw inputs until no pre-activation sits within 0.05 of the ReLU kink.
    const uint64_t base = GetParam();
    const ConvSpec spec = spec_of(1, 2, 3, 1, 1);
    Tensor x, w;
    bool found = false;
    for (uint64_t s = base * 1000; s < base * 1000 + 200 && !found; ++s) {
        x = Tensor::uniform({1, 1, 2, 2, 2}, s, -1, 1);
        w = Tensor::uniform({2, 1, 3, 3, 3}, s + 1, -1, 1);
        double closest = 1e9;
        const Tensor pre = nn::conv3d(x, w, Tensor(), spec);
        for (float v : pre.data()) closest = std::min<double>(closest, std::abs(v));
        found = closest > 0.05;
    }
    ASSERT_TRUE(found);
    CenteredProjection proj(base);
    auto report = finite_diff_check([&](auto& in) { return proj(ops::relu(nn::conv3d(in[0], in[1], Tensor(), spec))); }, {x, w});
    EXPECT_TRUE(report.pass);
}

INSTANTIATE_TEST_SUITE_P(Seeds, NnGradcheck, ::testing::Values(1, 2, 3, 4, 5));
