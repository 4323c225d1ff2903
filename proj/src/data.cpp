#include "rareunet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "rareunet/error.hpp"
#include "rareunet/hash.hpp"
#include "rareunet/kv.hpp"

namespace rareunet {

namespace fs = std::filesystem;

namespace {

constexpr char kVolumeMagic[8] = {'V', 'V', 'O', 'L', '0', '0', '0', '1'};

int64_t volume_of(const Extent3& e) { return e[0] * e[1] * e[2]; }

Extent3 last3(const Shape& s) {
    if (s.size() < 3) throw ShapeError("expected at least three axes, got " + shape_string(s));
    const size_t r = s.size();
    return {s[r - 3], s[r - 2], s[r - 1]};
}

Shape with_last3(Shape s, const Extent3& e) {
    const size_t r = s.size();
    s[r - 3] = e[0];
    s[r - 2] = e[1];
    s[r - 1] = e[2];
    return s;
}

// Leading (batch/channel) element count for a shape whose last three axes are spatial.
int64_t lead_count(const Shape& s) { return shape_numel(s) / volume_of(last3(s)); }

void check_factor(const Extent3& e, int64_t factor) {
    if (factor != 2 && factor != 4 && factor != 8) throw ContractError("factor must be 2, 4 or 8");
    for (int64_t v : e) {
        if (v % factor != 0)
            throw ShapeError("extent " + std::to_string(v) + " not divisible by factor " + std::to_string(factor));
    }
}

// src = i + offset maps output index i to the input index.
int64_t center_offset(int64_t in, int64_t target) { return target >= in ? -((target - in) / 2) : (in - target) / 2; }

template <typename T>
std::vector<T> pad_or_crop_block(const std::vector<T>& src, int64_t lead, const Extent3& in, const Extent3& out, T fill) {
    std::vector<T> dst(static_cast<size_t>(lead * volume_of(out)), fill);
    const int64_t oz = center_offset(in[0], out[0]), oy = center_offset(in[1], out[1]), ox = center_offset(in[2], out[2]);
    for (int64_t n = 0; n < lead; ++n) {
        const T* s = src.data() + n * volume_of(in);
        T* d = dst.data() + n * volume_of(out);
        for (int64_t z = 0; z < out[0]; ++z) {
            const int64_t sz = z + oz;
            if (sz < 0 || sz >= in[0]) continue;
            for (int64_t y = 0; y < out[1]; ++y) {
                const int64_t sy = y + oy;
                if (sy < 0 || sy >= in[1]) continue;
                const int64_t x0 = std::max<int64_t>(0, -ox), x1 = std::min<int64_t>(out[2], in[2] - ox);
                if (x1 <= x0) continue;
                std::copy_n(s + (sz * in[1] + sy) * in[2] + x0 + ox, x1 - x0, d + (z * out[1] + y) * out[2] + x0);
            }
        }
    }
    return dst;
}

struct Axis {
    std::vector<int64_t> i0, i1;
    std::vector<double> w1;
};

Axis linear_axis(int64_t in, int64_t out) {
    Axis a;
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int64_t lo = static_cast<int64_t>(std::floor(src));
        a.i0.push_back(lo);
        a.i1.push_back(std::min(lo + 1, in - 1));
        a.w1.push_back(src - static_cast<double>(lo));
    }
    return a;
}

std::vector<int64_t> nearest_axis(int64_t in, int64_t out) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < out; ++i) {
        // Exact integer form of floor((i + 0.5) * in / out).
        idx.push_back(std::min(in - 1, ((2 * i + 1) * in) / (2 * out)));
    }
    return idx;
}

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    if (hi <= lo) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return uint32_t{p[0]} | (uint32_t{p[1]} << 8) | (uint32_t{p[2]} << 16) | (uint32_t{p[3]} << 24);
}

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

}  // namespace

void PhantomSpec::validate() const {
    if (num_classes < 2 || num_classes > 255) throw ConfigError("phantom num_classes must be within 2..255");
    if (channels < 1) throw ConfigError("phantom channels must be >= 1");
    if (static_cast<int64_t>(background.size()) != channels) throw ConfigError("background needs one value per channel");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    for (int a = 0; a < 3; ++a) {
        if (native_min[a] < 1 || native_max[a] < native_min[a]) throw ConfigError("invalid native shape range");
    }
    for (size_t i = 0; i < structures.size(); ++i) {
        const auto& s = structures[i];
        if (s.label < 0 || s.label >= num_classes) throw ConfigError("structure label outside class range");
        if (s.count_min < 0 || s.count_max < s.count_min) throw ConfigError("invalid structure count range");
        if (static_cast<int64_t>(s.intensity.size()) != channels) throw ConfigError("structure intensity needs one value per channel");
        if (s.parent >= static_cast<int64_t>(i)) throw ConfigError("structure parent must precede it");
        for (int a = 0; a < 3; ++a) {
            if (!(s.radius_min[a] > 0.0) || s.radius_max[a] < s.radius_min[a])
                throw ConfigError("invalid structure radius range");
            if (2.0 * s.radius_max[a] > static_cast<double>(native_min[a]))
                throw ConfigError("structure radius does not fit inside the grid");
            if (s.center_lo[a] < 0.0 || s.center_hi[a] > 1.0 || s.center_hi[a] < s.center_lo[a])
                throw ConfigError("structure centre range must lie within [0,1]");
        }
    }
}

PhantomSpec phantom_preset(const std::string& name) {
    PhantomSpec p;
    p.name = name;
    if (name == "hippocampus-like") {
        // Two same-intensity structures, told apart only by side (left/right along W),
        // embedded in a dimmer tissue ellipsoid.
        p.native_min = {26, 52, 26};
        p.native_max = {32, 64, 32};
        p.channels = 1;
        p.num_classes = 3;
        p.background = {0.0f};
        p.noise_sigma = 0.1;
        StructureSpec tissue;
        tissue.label = 0;
        tissue.radius_min = {10, 20, 10};
        tissue.radius_max = {12, 25, 12};
        tissue.center_lo = {0.45, 0.45, 0.45};
        tissue.center_hi = {0.55, 0.55, 0.55};
        tissue.intensity = {0.4f};
        StructureSpec left;
        left.label = 1;
        left.radius_min = {5, 10, 4};
        left.radius_max = {8, 15, 6};
        left.center_lo = {0.4, 0.35, 0.28};
        left.center_hi = {0.6, 0.65, 0.36};
        left.intensity = {1.0f};
        StructureSpec right = left;
        right.label = 2;
        right.center_lo = {0.4, 0.35, 0.64};
        right.center_hi = {0.6, 0.65, 0.72};
        p.structures = {tissue, left, right};
    } else if (name == "tumor-like") {
        p.native_min = {56, 56, 28};
        p.native_max = {64, 64, 32};
        p.channels = 4;
        p.num_classes = 4;
        p.background = {0.0f, 0.0f, 0.0f, 0.0f};
        p.noise_sigma = 0.1;
        StructureSpec brain;
        brain.label = 0;
        brain.radius_min = {22, 22, 11};
        brain.radius_max = {26, 26, 13};
        brain.center_lo = {0.45, 0.45, 0.45};
        brain.center_hi = {0.55, 0.55, 0.55};
        brain.intensity = {0.4f, 0.35f, 0.45f, 0.3f};
        StructureSpec edema;
        edema.label = 1;
        edema.radius_min = {8, 8, 5};
        edema.radius_max = {13, 13, 8};
        edema.center_lo = {0.35, 0.35, 0.4};
        edema.center_hi = {0.65, 0.65, 0.6};
        edema.intensity = {0.7f, 0.9f, 0.5f, 0.55f};
        StructureSpec core = edema;
        core.label = 2;
        core.parent = 1;
        core.radius_min = {3, 3, 2};
        core.radius_max = {6, 6, 4};
        core.intensity = {0.2f, 0.5f, 0.3f, 0.45f};
        StructureSpec enhancing = edema;
        enhancing.label = 3;
        enhancing.parent = 1;
        enhancing.radius_min = {2, 2, 2};
        enhancing.radius_max = {5, 5, 3};
        enhancing.intensity = {0.9f, 0.7f, 1.0f, 0.85f};
        p.structures = {brain, edema, core, enhancing};
    } else {
        throw ConfigError("unknown phantom preset '" + name + "' (expected hippocampus-like|tumor-like)");
    }
    return p;
}

Sample generate_phantom(uint64_t seed, const PhantomSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(seed);
    Extent3 e;
    for (int a = 0; a < 3; ++a)
        e[a] = std::uniform_int_distribution<int64_t>(spec.native_min[a], spec.native_max[a])(rng);
    const int64_t V = volume_of(e);
    const int64_t C = spec.channels;

    std::vector<uint8_t> labels(static_cast<size_t>(V), 0);
    std::vector<int32_t> owner(static_cast<size_t>(V), -1);  // structure index that painted the voxel

    struct Placed {
        std::array<double, 3> center, radius;
    };
    std::vector<std::vector<Placed>> placed(spec.structures.size());
    for (size_t si = 0; si < spec.structures.size(); ++si) {
        const auto& s = spec.structures[si];
        const int64_t count = std::uniform_int_distribution<int64_t>(s.count_min, s.count_max)(rng);
        for (int64_t k = 0; k < count; ++k) {
            Placed p;
            for (int a = 0; a < 3; ++a) p.radius[a] = uniform_in(rng, s.radius_min[a], s.radius_max[a]);
            if (s.parent >= 0 && !placed[s.parent].empty()) {
                const Placed& host = placed[s.parent].front();
                for (int a = 0; a < 3; ++a) {
                    p.center[a] = host.center[a] + uniform_in(rng, -0.3, 0.3) * host.radius[a];
                    p.radius[a] = std::min(p.radius[a], 0.7 * host.radius[a]);
                }
            } else {
                for (int a = 0; a < 3; ++a) {
                    const double lo = std::max(s.center_lo[a] * static_cast<double>(e[a] - 1), p.radius[a]);
                    const double hi = std::min(s.center_hi[a] * static_cast<double>(e[a] - 1),
                                               static_cast<double>(e[a] - 1) - p.radius[a]);
                    p.center[a] = uniform_in(rng, std::min(lo, hi), std::max(lo, hi));
                }
            }
            placed[si].push_back(p);
            std::array<int64_t, 3> lo, hi;
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p.center[a] - p.radius[a])));
                hi[a] = std::min<int64_t>(e[a] - 1, static_cast<int64_t>(std::ceil(p.center[a] + p.radius[a])));
            }
            for (int64_t z = lo[0]; z <= hi[0]; ++z) {
                const double dz = (static_cast<double>(z) - p.center[0]) / p.radius[0];
                for (int64_t y = lo[1]; y <= hi[1]; ++y) {
                    const double dy = (static_cast<double>(y) - p.center[1]) / p.radius[1];
                    for (int64_t x = lo[2]; x <= hi[2]; ++x) {
                        const double dx = (static_cast<double>(x) - p.center[2]) / p.radius[2];
                        if (dz * dz + dy * dy + dx * dx > 1.0) continue;
                        const int64_t i = (z * e[1] + y) * e[2] + x;
                        labels[i] = static_cast<uint8_t>(s.label);
                        owner[i] = static_cast<int32_t>(si);
                    }
                }
            }
        }
    }

    std::vector<float> image(static_cast<size_t>(C * V));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < V; ++i) {
            const float base = owner[i] < 0 ? spec.background[c] : spec.structures[owner[i]].intensity[c];
            const double n = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise(rng) : 0.0;
            image[c * V + i] = static_cast<float>(base + n);
        }
    }

    Sample out;
    out.image = Tensor::from_vector({C, e[0], e[1], e[2]}, std::move(image));
    out.labels = LabelVolume::from_vector({e[0], e[1], e[2]}, std::move(labels));
    out.seed = seed;
    out.native_shape = e;
    out.num_classes = spec.num_classes;
    return out;
}

float percentile_nearest_rank(std::span<const float> values, double p) {
    if (values.empty()) throw DataError("percentile of an empty volume");
    std::vector<float> sorted(values.begin(), values.end());
    const size_t n = sorted.size();
    size_t rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    rank = std::clamp<size_t>(rank, 1, n);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
    return sorted[rank - 1];
}

std::vector<float> normalize_intensity(std::span<const float> volume) {
    if (volume.empty()) throw DataError("normalize_intensity on an empty volume");
    for (float v : volume) {
        if (std::isnan(v)) throw DataError("normalize_intensity: NaN in volume");
    }
    const double lo = percentile_nearest_rank(volume, 0.5);
    const double hi = percentile_nearest_rank(volume, 99.5);
    std::vector<float> out(volume.size(), 0.0f);
    if (!(hi > lo)) return out;
    const double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < volume.size(); ++i) {
        const double v = std::clamp(static_cast<double>(volume[i]), lo, hi);
        out[i] = static_cast<float>((v - lo) * inv);
    }
    return out;
}

Tensor normalize_channels(const Tensor& image) {
    const int64_t V = volume_of(last3(image.shape()));
    const int64_t lead = image.numel() / V;
    std::vector<float> out(image.data().size());
    for (int64_t k = 0; k < lead; ++k) {
        auto norm = normalize_intensity(image.data().subspan(static_cast<size_t>(k * V), static_cast<size_t>(V)));
        std::copy(norm.begin(), norm.end(), out.begin() + k * V);
    }
    return Tensor::from_vector(image.shape(), std::move(out));
}

Tensor resample_trilinear(const Tensor& volume, const Extent3& out) {
    const Extent3 in = last3(volume.shape());
    for (int64_t v : out) {
        if (v < 1) throw ShapeError("resample target extents must be >= 1");
    }
    const int64_t lead = lead_count(volume.shape());
    const Axis az = linear_axis(in[0], out[0]), ay = linear_axis(in[1], out[1]), ax = linear_axis(in[2], out[2]);
    std::vector<float> dst(static_cast<size_t>(lead * volume_of(out)));
    const float* src = volume.data().data();
    for (int64_t n = 0; n < lead; ++n) {
        const float* s = src + n * volume_of(in);
        float* d = dst.data() + n * volume_of(out);
        auto at = [&](int64_t z, int64_t y, int64_t x) { return static_cast<double>(s[(z * in[1] + y) * in[2] + x]); };
        for (int64_t z = 0; z < out[0]; ++z) {
            const double wz = az.w1[z];
            for (int64_t y = 0; y < out[1]; ++y) {
                const double wy = ay.w1[y];
                for (int64_t x = 0; x < out[2]; ++x) {
                    const double wx = ax.w1[x];
                    const int64_t z0 = az.i0[z], z1 = az.i1[z], y0 = ay.i0[y], y1 = ay.i1[y], x0 = ax.i0[x], x1 = ax.i1[x];
                    const double c00 = at(z0, y0, x0) * (1 - wx) + at(z0, y0, x1) * wx;
                    const double c01 = at(z0, y1, x0) * (1 - wx) + at(z0, y1, x1) * wx;
                    const double c10 = at(z1, y0, x0) * (1 - wx) + at(z1, y0, x1) * wx;
                    const double c11 = at(z1, y1, x0) * (1 - wx) + at(z1, y1, x1) * wx;
                    const double c0 = c00 * (1 - wy) + c01 * wy;
                    const double c1 = c10 * (1 - wy) + c11 * wy;
                    d[(z * out[1] + y) * out[2] + x] = static_cast<float>(c0 * (1 - wz) + c1 * wz);
                }
            }
        }
    }
    return Tensor::from_vector(with_last3(volume.shape(), out), std::move(dst));
}

Tensor downsample_image(const Tensor& volume, int64_t factor) {
    const Extent3 in = last3(volume.shape());
    check_factor(in, factor);
    return resample_trilinear(volume, {in[0] / factor, in[1] / factor, in[2] / factor});
}

LabelVolume resample_nearest(const LabelVolume& labels, const Extent3& out) {
    const Extent3 in = last3(labels.shape);
    for (int64_t v : out) {
        if (v < 1) throw ShapeError("resample target extents must be >= 1");
    }
    const int64_t lead = lead_count(labels.shape);
    const auto iz = nearest_axis(in[0], out[0]), iy = nearest_axis(in[1], out[1]), ix = nearest_axis(in[2], out[2]);
    LabelVolume dst = LabelVolume::zeros(with_last3(labels.shape, out));
    for (int64_t n = 0; n < lead; ++n) {
        const uint8_t* s = labels.values.data() + n * volume_of(in);
        uint8_t* d = dst.values.data() + n * volume_of(out);
        for (int64_t z = 0; z < out[0]; ++z)
            for (int64_t y = 0; y < out[1]; ++y)
                for (int64_t x = 0; x < out[2]; ++x) d[(z * out[1] + y) * out[2] + x] = s[(iz[z] * in[1] + iy[y]) * in[2] + ix[x]];
    }
    return dst;
}

LabelVolume downsample_labels(const LabelVolume& labels, int64_t factor) {
    const Extent3 in = last3(labels.shape);
    check_factor(in, factor);
    return resample_nearest(labels, {in[0] / factor, in[1] / factor, in[2] / factor});
}

Tensor pad_or_crop(const Tensor& volume, const Extent3& target, float fill) {
    for (int64_t v : target) {
        if (v < 1) throw ShapeError("pad_or_crop target extents must be >= 1");
    }
    const Extent3 in = last3(volume.shape());
    std::vector<float> src(volume.data().begin(), volume.data().end());
    return Tensor::from_vector(with_last3(volume.shape(), target),
                               pad_or_crop_block(src, lead_count(volume.shape()), in, target, fill));
}

LabelVolume pad_or_crop(const LabelVolume& labels, const Extent3& target, uint8_t fill) {
    for (int64_t v : target) {
        if (v < 1) throw ShapeError("pad_or_crop target extents must be >= 1");
    }
    const Extent3 in = last3(labels.shape);
    return LabelVolume::from_vector(with_last3(labels.shape, target),
                                    pad_or_crop_block(labels.values, lead_count(labels.shape), in, target, fill));
}

Extent3 standardize_shape(const std::vector<Extent3>& shapes) {
    if (shapes.empty()) throw DataError("standardize_shape needs at least one shape");
    Extent3 out;
    for (int a = 0; a < 3; ++a) {
        std::vector<float> axis;
        for (const auto& s : shapes) axis.push_back(static_cast<float>(s[a]));
        const auto p90 = static_cast<uint64_t>(percentile_nearest_rank(axis, 90.0));
        out[a] = static_cast<int64_t>(std::bit_ceil(std::max<uint64_t>(p90, 1)));
    }
    return out;
}

Sample prepare_sample(const Sample& raw, const Extent3& target) {
    Sample s = raw;
    s.image = pad_or_crop(normalize_channels(raw.image), target);
    s.labels = pad_or_crop(raw.labels, target);
    return s;
}

void save_volume(const fs::path& path, const Sample& sample) {
    const Extent3 e = sample.extent();
    const int64_t C = sample.channels();
    if (sample.image.defined() && (sample.image.dim() != 4 || last3(sample.image.shape()) != e))
        throw ShapeError("image " + shape_string(sample.image.shape()) + " does not match labels " + shape_string(sample.labels.shape));
    KeyValues header{{"channels", std::to_string(C)},
                     {"d", std::to_string(e[0])},
                     {"h", std::to_string(e[1])},
                     {"w", std::to_string(e[2])},
                     {"num_classes", std::to_string(sample.num_classes)},
                     {"seed", std::to_string(sample.seed)},
                     {"native_d", std::to_string(sample.native_shape[0])},
                     {"native_h", std::to_string(sample.native_shape[1])},
                     {"native_w", std::to_string(sample.native_shape[2])}};
    const std::string text = format_key_values(header);
    std::string bytes(kVolumeMagic, sizeof(kVolumeMagic));
    put_u32(bytes, static_cast<uint32_t>(text.size()));
    bytes += text;
    if (C > 0) bytes.append(reinterpret_cast<const char*>(sample.image.data().data()), sample.image.data().size_bytes());
    bytes.append(reinterpret_cast<const char*>(sample.labels.values.data()), sample.labels.values.size());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Sample load_volume(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12 || std::memcmp(p, kVolumeMagic, 8) != 0)
        throw FormatError("'" + path.string() + "' is not a VVOL0001 volume");
    const uint32_t hlen = get_u32(p + 8);
    if (bytes.size() < 12 + static_cast<size_t>(hlen)) throw FormatError("truncated volume header");
    KeyValues kv;
    int64_t C, D, H, W;
    Sample s;
    try {
        kv = parse_key_values(bytes.substr(12, hlen));
        C = kv_int(kv, "channels", -1);
        D = kv_int(kv, "d", -1);
        H = kv_int(kv, "h", -1);
        W = kv_int(kv, "w", -1);
        s.num_classes = kv_int(kv, "num_classes", 0);
        s.seed = kv_u64(kv, "seed", 0);
        s.native_shape = {kv_int(kv, "native_d", D), kv_int(kv, "native_h", H), kv_int(kv, "native_w", W)};
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad volume header: ") + e.what());
    }
    if (C < 0 || D < 1 || H < 1 || W < 1) throw FormatError("volume header lacks a valid shape");
    const size_t V = static_cast<size_t>(D * H * W);
    const size_t expected = 12 + hlen + static_cast<size_t>(C) * V * sizeof(float) + V;
    if (bytes.size() != expected)
        throw FormatError("volume payload is " + std::to_string(bytes.size()) + " bytes, header implies " +
                          std::to_string(expected));
    const char* payload = bytes.data() + 12 + hlen;
    if (C > 0) {
        std::vector<float> image(static_cast<size_t>(C) * V);
        std::memcpy(image.data(), payload, image.size() * sizeof(float));
        s.image = Tensor::from_vector({C, D, H, W}, std::move(image));
        payload = bytes.data() + 12 + hlen + static_cast<size_t>(C) * V * sizeof(float);
    }
    std::vector<uint8_t> labels(V);
    std::memcpy(labels.data(), payload, V);
    s.labels = LabelVolume::from_vector({D, H, W}, std::move(labels));
    return s;
}

void write_manifest(const fs::path& dir, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(dir / "manifest.csv", std::ios::trunc);
    if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
    out << "file,split\n";
    for (const auto& e : entries) out << e.file << "," << e.split << "\n";
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.csv");
    if (!in) throw DataError("no manifest.csv in '" + dir.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "file,split") throw FormatError("manifest header must be 'file,split'");
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("manifest line without split: '" + line + "'");
        ManifestEntry e{line.substr(0, comma), line.substr(comma + 1)};
        if (e.split != "train" && e.split != "test") throw FormatError("manifest split must be train or test");
        entries.push_back(e);
    }
    return entries;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double ratio, uint64_t split_seed) {
    if (n < 2) throw ContractError("split_dataset needs at least two items");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split ratio must be within (0,1)");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(split_seed);
    for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    const size_t first = std::clamp<size_t>(static_cast<size_t>(std::llround(ratio * static_cast<double>(n))), 1, n - 1);
    return {std::vector<size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first)),
            std::vector<size_t>(order.begin() + static_cast<std::ptrdiff_t>(first), order.end())};
}

std::vector<Sample> GeneratedDataset::part(const std::string& name) const {
    std::vector<Sample> out;
    for (size_t i = 0; i < volumes.size(); ++i)
        if (split[i] == name) out.push_back(volumes[i]);
    return out;
}

GeneratedDataset generate_dataset(const std::string& preset, int64_t count, uint64_t seed) {
    if (count < 1) throw ConfigError("dataset count must be >= 1");
    const PhantomSpec spec = phantom_preset(preset);
    std::vector<Sample> raw;
    std::vector<Extent3> shapes;
    for (int64_t i = 0; i < count; ++i) {
        raw.push_back(generate_phantom(hash_combine(seed, static_cast<uint64_t>(i)), spec));
        shapes.push_back(raw.back().extent());
    }
    GeneratedDataset out;
    out.shape = standardize_shape(shapes);
    out.split.assign(static_cast<size_t>(count), "train");
    if (count >= 2)
        for (size_t i : split_indices(static_cast<size_t>(count), 0.8, hash_combine(seed, hash_string("split"))).second)
            out.split[i] = "test";
    for (const auto& r : raw) out.volumes.push_back(prepare_sample(r, out.shape));
    return out;
}

void write_dataset(const fs::path& dir, const GeneratedDataset& data) {
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (size_t i = 0; i < data.volumes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "vol_%04zu.vvol", i);
        save_volume(dir / name, data.volumes[i]);
        entries.push_back({name, data.split[i]});
    }
    write_manifest(dir, entries);
}

}  // namespace rareunet
