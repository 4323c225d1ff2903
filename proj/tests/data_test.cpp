#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "rareunet/data.hpp"
#include "rareunet/error.hpp"

using namespace rareunet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("rareunet_data_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Tent-weight formulation: weight of input j is max(0, 1 - |src - j|) on the clamped source coordinate.
double tent_sample(const Tensor& v, int64_t n, const Extent3& in, const Extent3& out, int64_t z, int64_t y, int64_t x) {
    double src[3];
    const int64_t idx[3] = {z, y, x};
    for (int a = 0; a < 3; ++a) {
        src[a] = (idx[a] + 0.5) * static_cast<double>(in[a]) / static_cast<double>(out[a]) - 0.5;
        src[a] = std::min(std::max(src[a], 0.0), static_cast<double>(in[a] - 1));
    }
    double acc = 0.0;
    for (int64_t k = 0; k < in[0]; ++k) {
        const double wz = std::max(0.0, 1.0 - std::abs(src[0] - k));
        if (wz == 0) continue;
        for (int64_t j = 0; j < in[1]; ++j) {
            const double wy = std::max(0.0, 1.0 - std::abs(src[1] - j));
            if (wy == 0) continue;
            for (int64_t i = 0; i < in[2]; ++i) {
                const double wx = std::max(0.0, 1.0 - std::abs(src[2] - i));
                acc += wz * wy * wx * v.data()[((n * in[0] + k) * in[1] + j) * in[2] + i];
            }
        }
    }
    return acc;
}

Sample tiny_sample(uint64_t seed, int64_t channels) {
    Sample s;
    s.image = Tensor::uniform({channels, 3, 4, 5}, seed, -2, 2);
    s.labels = LabelVolume::zeros({3, 4, 5});
    for (size_t i = 0; i < s.labels.values.size(); ++i) s.labels.values[i] = static_cast<uint8_t>((i * 7 + seed) % 3);
    s.seed = seed;
    s.native_shape = {3, 4, 5};
    s.num_classes = 3;
    return s;
}

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

}  // namespace

TEST(Phantom, SameSeedIdentical) {
    auto spec = phantom_preset("hippocampus-like");
    Sample a = generate_phantom(5, spec), b = generate_phantom(5, spec);
    EXPECT_TRUE(same_bits(a.image, b.image));
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_FALSE(same_bits(a.image, generate_phantom(6, spec).image));
}

TEST(Phantom, NoiselessSingleStructurePiecewiseConstant) {
    PhantomSpec spec;
    spec.native_min = spec.native_max = {16, 16, 16};
    spec.num_classes = 2;
    spec.background = {0.25f};
    spec.noise_sigma = 0.0;
    StructureSpec s;
    s.label = 1;
    s.intensity = {0.75f};
    spec.structures = {s};
    Sample p = generate_phantom(1, spec);
    int64_t fg = 0;
    for (size_t i = 0; i < p.labels.values.size(); ++i) {
        const float v = p.image.data()[i];
        if (p.labels.values[i] == 1) {
            ++fg;
            EXPECT_EQ(v, 0.75f);
        } else {
            EXPECT_EQ(v, 0.25f);
        }
    }
    EXPECT_GT(fg, 0);
}

TEST(Phantom, LaterClassWinsOverlap) {
    PhantomSpec spec;
    spec.native_min = spec.native_max = {12, 12, 12};
    spec.num_classes = 3;
    spec.background = {0.0f};
    spec.noise_sigma = 0.0;
    StructureSpec a;
    a.label = 1;
    a.radius_min = a.radius_max = {5, 5, 5};
    a.center_lo = a.center_hi = {0.5, 0.5, 0.5};
    a.intensity = {1.0f};
    StructureSpec b = a;
    b.label = 2;
    b.radius_min = b.radius_max = {2, 2, 2};
    b.intensity = {2.0f};
    spec.structures = {a, b};
    Sample p = generate_phantom(0, spec);
    const int64_t centre = (5 * 12 + 5) * 12 + 5;  // centre (5.5) rounds to voxel 5
    EXPECT_EQ(p.labels.values[centre], 2);
    EXPECT_EQ(p.image.data()[centre], 2.0f);
}

TEST(Phantom, CensusEveryClassPresent) {
    for (const char* preset : {"hippocampus-like", "tumor-like"}) {
        auto spec = phantom_preset(preset);
        const int n = std::string(preset) == "tumor-like" ? 200 : 1000;
        std::vector<int> present(spec.num_classes, 0);
        for (int seed = 0; seed < n; ++seed) {
            Sample s = generate_phantom(static_cast<uint64_t>(seed), spec);
            std::set<uint8_t> seen(s.labels.values.begin(), s.labels.values.end());
            for (int c = 1; c < spec.num_classes; ++c) present[c] += seen.count(static_cast<uint8_t>(c)) ? 1 : 0;
            for (float v : s.image.data()) ASSERT_TRUE(std::isfinite(v));
        }
        for (int c = 1; c < spec.num_classes; ++c) EXPECT_GE(present[c], 0.95 * n) << preset << " class " << c;
    }
}

TEST(Phantom, PresetContracts) {
    auto hip = generate_phantom(3, phantom_preset("hippocampus-like"));
    EXPECT_EQ(hip.channels(), 1);
    EXPECT_EQ(hip.num_classes, 3);
    auto tum = generate_phantom(3, phantom_preset("tumor-like"));
    EXPECT_EQ(tum.channels(), 4);
    EXPECT_EQ(tum.num_classes, 4);
    EXPECT_THROW(phantom_preset("liver"), ConfigError);
}

TEST(Phantom, InfeasibleSpecRejected) {
    PhantomSpec spec;
    spec.native_min = spec.native_max = {8, 8, 8};
    spec.background = {0.0f};
    StructureSpec s;
    s.intensity = {1.0f};
    s.radius_min = {5, 5, 5};
    s.radius_max = {5, 5, 5};
    spec.structures = {s};
    EXPECT_THROW(generate_phantom(0, spec), ConfigError);
    spec.structures[0].radius_min = spec.structures[0].radius_max = {2, 2, 2};
    spec.num_classes = 1;
    EXPECT_THROW(generate_phantom(0, spec), ConfigError);
}

TEST(Normalize, ConstantMapsToZero) {
    std::vector<float> v(50, 3.0f);
    for (float x : normalize_intensity(v)) EXPECT_EQ(x, 0.0f);
}

TEST(Normalize, RampMonotoneFullRange) {
    std::vector<float> v(1000);
    for (int i = 0; i < 1000; ++i) v[i] = static_cast<float>(i);
    auto out = normalize_intensity(v);
    EXPECT_EQ(*std::min_element(out.begin(), out.end()), 0.0f);
    EXPECT_EQ(*std::max_element(out.begin(), out.end()), 1.0f);
    for (int i = 1; i < 1000; ++i) EXPECT_GE(out[i], out[i - 1]);
    // Nearest rank: p0.5 -> 5th smallest (4), p99.5 -> 995th smallest (994).
    EXPECT_EQ(out[4], 0.0f);
    EXPECT_GT(out[5], 0.0f);
    EXPECT_EQ(out[994], 1.0f);
    EXPECT_LT(out[993], 1.0f);
}

TEST(Normalize, RandomSaturationBounded) {
    std::mt19937_64 rng(9);
    std::normal_distribution<float> d(5.0f, 3.0f);
    std::vector<float> v(20000);
    for (auto& x : v) x = d(rng);
    auto out = normalize_intensity(v);
    int lo = 0, hi = 0;
    for (float x : out) {
        ASSERT_GE(x, 0.0f);
        ASSERT_LE(x, 1.0f);
        lo += x == 0.0f;
        hi += x == 1.0f;
    }
    EXPECT_LE(lo, 0.01 * v.size());
    EXPECT_LE(hi, 0.01 * v.size());
}

TEST(Normalize, IdempotentOnNormalizedRamp) {
    std::vector<float> v(1000);
    for (int i = 0; i < 1000; ++i) v[i] = static_cast<float>(i);
    auto once = normalize_intensity(v);
    auto twice = normalize_intensity(once);
    for (size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], once[i], 1e-6);
}

TEST(Normalize, NanRejected) {
    std::vector<float> v{1.0f, std::nanf(""), 2.0f};
    EXPECT_THROW(normalize_intensity(v), DataError);
}

TEST(Resample, ConstantPreserved) {
    auto v = Tensor::full({2, 8, 8, 16}, 0.7f);
    for (int64_t f : {2, 4, 8}) {
        auto d = downsample_image(v, f);
        EXPECT_EQ(d.shape(), (Shape{2, 8 / f, 8 / f, 16 / f}));
        for (float x : d.data()) EXPECT_FLOAT_EQ(x, 0.7f);
    }
    const Tensor up = resample_trilinear(Tensor::full({1, 2, 2, 2}, 0.7f), {8, 8, 8});
    for (float x : up.data()) EXPECT_FLOAT_EQ(x, 0.7f);
}

TEST(Resample, LinearRampReproduced) {
    std::vector<float> v(8 * 2 * 2);
    for (int z = 0; z < 8; ++z)
        for (int i = 0; i < 4; ++i) v[z * 4 + i] = static_cast<float>(z);
    auto d = downsample_image(Tensor::from_vector({1, 8, 2, 2}, v), 2);
    // Output cell i samples the midpoint 2i + 0.5 of its two source cells.
    for (int z = 0; z < 4; ++z) EXPECT_FLOAT_EQ(d.data()[z], 2.0f * z + 0.5f);
}

TEST(Resample, TrilinearMatchesTentOracle) {
    for (uint64_t s = 1; s <= 5; ++s) {
        const Extent3 in{8, 12, 16};
        auto v = Tensor::uniform({2, in[0], in[1], in[2]}, s, -1, 1);
        for (int64_t f : {2, 4}) {
            auto d = downsample_image(v, f);
            const Extent3 out{in[0] / f, in[1] / f, in[2] / f};
            for (int64_t n = 0; n < 2; ++n)
                for (int64_t z = 0; z < out[0]; ++z)
                    for (int64_t y = 0; y < out[1]; ++y)
                        for (int64_t x = 0; x < out[2]; ++x)
                            ASSERT_NEAR(d.data()[((n * out[0] + z) * out[1] + y) * out[2] + x],
                                        tent_sample(v, n, in, out, z, y, x), 1e-6);
        }
        // Upsampling uses the same rule with clamping at the borders.
        const Extent3 small{3, 4, 2}, big{6, 9, 5};
        auto u = Tensor::uniform({1, small[0], small[1], small[2]}, s + 50, -1, 1);
        auto up = resample_trilinear(u, big);
        for (int64_t z = 0; z < big[0]; ++z)
            for (int64_t y = 0; y < big[1]; ++y)
                for (int64_t x = 0; x < big[2]; ++x)
                    ASSERT_NEAR(up.data()[(z * big[1] + y) * big[2] + x], tent_sample(u, 0, small, big, z, y, x), 1e-6);
    }
}

TEST(Resample, IndivisibleRejected) {
    EXPECT_THROW(downsample_image(Tensor::zeros({1, 6, 8, 8}), 4), ShapeError);
    EXPECT_THROW(downsample_labels(LabelVolume::zeros({6, 8, 8}), 4), ShapeError);
    EXPECT_THROW(downsample_image(Tensor::zeros({1, 6, 6, 6}), 3), ContractError);
}

TEST(ResampleLabels, ConstantAndCheckerboard) {
    LabelVolume c = LabelVolume::zeros({4, 4, 4});
    std::fill(c.values.begin(), c.values.end(), 2);
    for (uint8_t v : downsample_labels(c, 2).values) EXPECT_EQ(v, 2);
    LabelVolume cb = LabelVolume::zeros({4, 4, 4});
    for (int i = 0; i < 64; ++i) cb.values[i] = static_cast<uint8_t>(((i / 16) + (i / 4) + i) % 2);
    for (uint8_t v : downsample_labels(cb, 2).values) EXPECT_TRUE(v == 0 || v == 1);
}

TEST(ResampleLabels, MatchesIndexOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        LabelVolume l = LabelVolume::zeros({2, 16, 8, 24});
        for (auto& v : l.values) v = static_cast<uint8_t>(rng() % 5);
        for (int64_t f : {2, 4, 8}) {
            auto d = downsample_labels(l, f);
            const int64_t oz = 16 / f, oy = 8 / f, ox = 24 / f;
            ASSERT_EQ(d.shape, (Shape{2, oz, oy, ox}));
            for (int64_t n = 0; n < 2; ++n)
                for (int64_t z = 0; z < oz; ++z)
                    for (int64_t y = 0; y < oy; ++y)
                        for (int64_t x = 0; x < ox; ++x) {
                            const auto src = [&](int64_t i) { return static_cast<int64_t>(std::floor((i + 0.5) * f)); };
                            ASSERT_EQ(d.values[((n * oz + z) * oy + y) * ox + x],
                                      l.values[((n * 16 + src(z)) * 8 + src(y)) * 24 + src(x)]);
                        }
        }
    }
}

TEST(PadOrCrop, PadCentersOriginal) {
    auto v = Tensor::full({1, 30, 60, 30}, 1.0f);
    auto p = pad_or_crop(v, {32, 64, 32});
    ASSERT_EQ(p.shape(), (Shape{1, 32, 64, 32}));
    auto at = [&](int z, int y, int x) { return p.data()[(z * 64 + y) * 32 + x]; };
    EXPECT_EQ(at(0, 10, 10), 0.0f);
    EXPECT_EQ(at(1, 2, 1), 1.0f);
    EXPECT_EQ(at(30, 61, 30), 1.0f);
    EXPECT_EQ(at(31, 61, 30), 0.0f);
    EXPECT_EQ(at(10, 1, 10), 0.0f);
    EXPECT_EQ(at(10, 62, 10), 0.0f);
}

TEST(PadOrCrop, OddExcessGoesHigh) {
    auto v = Tensor::from_vector({1, 1, 1, 2}, {5, 6});
    auto p = pad_or_crop(v, {1, 1, 5});
    EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()), (std::vector<float>{0, 5, 6, 0, 0}));
    auto c = pad_or_crop(Tensor::from_vector({1, 1, 1, 5}, {1, 2, 3, 4, 5}), {1, 1, 2});
    EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{2, 3}));
}

TEST(PadOrCrop, SymmetricCropAndIdentity) {
    auto v = Tensor::uniform({1, 34, 64, 32}, 2, 0, 1);
    auto c = pad_or_crop(v, {32, 64, 32});
    for (int64_t i = 0; i < c.numel(); ++i) ASSERT_EQ(c.data()[i], v.data()[i + 64 * 32]);
    EXPECT_TRUE(same_bits(pad_or_crop(v, {34, 64, 32}), v));
}

TEST(PadOrCrop, CropInvertsPad) {
    auto v = Tensor::uniform({2, 5, 6, 7}, 3, 0, 1);
    EXPECT_TRUE(same_bits(pad_or_crop(pad_or_crop(v, {8, 9, 12}), {5, 6, 7}), v));
    LabelVolume l = tiny_sample(1, 1).labels;
    EXPECT_EQ(pad_or_crop(pad_or_crop(l, {7, 8, 9}), {3, 4, 5}), l);
}

TEST(StandardizeShape, Examples) {
    EXPECT_EQ(standardize_shape({{28, 60, 28}, {28, 60, 28}}), (Extent3{32, 64, 32}));
    std::vector<Extent3> ramp;
    for (int64_t i = 1; i <= 100; ++i) ramp.push_back({i, 1, 64});
    EXPECT_EQ(standardize_shape(ramp), (Extent3{128, 1, 64}));
    EXPECT_THROW(standardize_shape({}), DataError);
}

TEST(StandardizeShape, HippocampusPresetGivesPipelineShape) {
    auto spec = phantom_preset("hippocampus-like");
    std::vector<Extent3> natives;
    for (uint64_t s = 0; s < 64; ++s) natives.push_back(generate_phantom(s, spec).native_shape);
    EXPECT_EQ(standardize_shape(natives), (Extent3{32, 64, 32}));
}

TEST(VolumeFile, RoundTripBitExact) {
    auto dir = temp_dir("roundtrip");
    for (int64_t c : {1, 4}) {
        Sample s = tiny_sample(7, c);
        save_volume(dir / "a.vvol", s);
        Sample r = load_volume(dir / "a.vvol");
        EXPECT_TRUE(same_bits(r.image, s.image));
        EXPECT_EQ(r.labels, s.labels);
        EXPECT_EQ(r.seed, s.seed);
        EXPECT_EQ(r.native_shape, s.native_shape);
        EXPECT_EQ(r.num_classes, s.num_classes);
    }
    Sample big_seed = tiny_sample(9, 1);
    big_seed.seed = ~uint64_t{0};
    save_volume(dir / "c.vvol", big_seed);
    EXPECT_EQ(load_volume(dir / "c.vvol").seed, ~uint64_t{0});
    Sample labels_only = tiny_sample(8, 1);
    labels_only.image = Tensor();
    save_volume(dir / "b.vvol", labels_only);
    Sample r = load_volume(dir / "b.vvol");
    EXPECT_FALSE(r.image.defined());
    EXPECT_EQ(r.labels, labels_only.labels);
}

TEST(VolumeFile, TruncatedAndInconsistentRejected) {
    auto dir = temp_dir("corrupt");
    save_volume(dir / "a.vvol", tiny_sample(1, 2));
    std::string bytes;
    {
        std::ifstream in(dir / "a.vvol", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(dir / "b.vvol", std::ios::binary | std::ios::trunc);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    write(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(load_volume(dir / "b.vvol"), FormatError);
    write(bytes + "x");
    EXPECT_THROW(load_volume(dir / "b.vvol"), FormatError);
    std::string bad = bytes;
    bad[4] = '9';
    write(bad);
    EXPECT_THROW(load_volume(dir / "b.vvol"), FormatError);
    std::string shape = bytes;
    shape.replace(shape.find("d=3"), 3, "d=4");
    write(shape);
    EXPECT_THROW(load_volume(dir / "b.vvol"), FormatError);
    write(bytes.substr(0, 10));
    EXPECT_THROW(load_volume(dir / "b.vvol"), FormatError);
}

TEST(Manifest, RoundTrip) {
    auto dir = temp_dir("manifest");
    std::vector<ManifestEntry> e{{"a.vvol", "train"}, {"b.vvol", "test"}};
    write_manifest(dir, e);
    EXPECT_EQ(read_manifest(dir), e);
}

TEST(Split, ArithmeticDeterminismPartition) {
    std::vector<int> items(10);
    for (int i = 0; i < 10; ++i) items[i] = i;
    auto [train, test] = split_dataset(items, 0.8, 4);
    EXPECT_EQ(train.size(), 8u);
    EXPECT_EQ(test.size(), 2u);
    auto again = split_dataset(items, 0.8, 4);
    EXPECT_EQ(again.first, train);
    EXPECT_EQ(again.second, test);
    std::set<int> all(train.begin(), train.end());
    for (int t : test) EXPECT_TRUE(all.insert(t).second);
    EXPECT_EQ(all.size(), 10u);
    EXPECT_THROW(split_dataset(std::vector<int>{1}, 0.8, 0), ContractError);
}
