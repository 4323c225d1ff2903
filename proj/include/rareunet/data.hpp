#ifndef RAREUNET_DATA_HPP
#define RAREUNET_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rareunet/labels.hpp"
#include "rareunet/nn.hpp"
#include "rareunet/tensor.hpp"

namespace rareunet {

using nn::Extent3;

struct Sample {
    Tensor image;         // C,D,H,W; undefined for label-only volumes
    LabelVolume labels;   // D,H,W
    uint64_t seed = 0;
    Extent3 native_shape{0, 0, 0};
    int64_t num_classes = 0;

    int64_t channels() const { return image.defined() ? image.size(0) : 0; }
    Extent3 extent() const { return {labels.shape[0], labels.shape[1], labels.shape[2]}; }
};

// One kind of ellipsoid. Structures are painted in list order; list them by
// ascending label so a higher class wins overlaps.
struct StructureSpec {
    int64_t label = 1;
    int64_t count_min = 1;
    int64_t count_max = 1;
    std::array<double, 3> radius_min{4, 4, 4};  // voxels, per axis
    std::array<double, 3> radius_max{6, 6, 6};
    std::array<double, 3> center_lo{0.3, 0.3, 0.3};  // fraction of the native grid
    std::array<double, 3> center_hi{0.7, 0.7, 0.7};
    std::vector<float> intensity;  // per channel
    // When >= 0, each instance is placed inside the first instance of the
    // structure at this index in the list (centre jitter within 30% of its
    // radii, radii capped at 70% of its radii).
    int64_t parent = -1;
};

struct PhantomSpec {
    std::string name;
    Extent3 native_min{32, 64, 32};
    Extent3 native_max{32, 64, 32};
    int64_t channels = 1;
    int64_t num_classes = 3;
    std::vector<float> background;  // per channel
    std::vector<StructureSpec> structures;
    double noise_sigma = 0.1;

    // ConfigError when the spec cannot be realised.
    void validate() const;
};

PhantomSpec phantom_preset(const std::string& name);  // "hippocampus-like" | "tumor-like"

// Random native shape in [native_min, native_max], ellipsoids, additive Gaussian noise.
Sample generate_phantom(uint64_t seed, const PhantomSpec& spec);

// Nearest-rank percentile (p in [0,100]) of the values.
float percentile_nearest_rank(std::span<const float> values, double p);
// Clip to [p0.5, p99.5] and map that range onto [0,1]; a constant input maps to 0.
std::vector<float> normalize_intensity(std::span<const float> volume);
// normalize_intensity applied per channel of a C,D,H,W (or N,C,D,H,W) tensor.
Tensor normalize_channels(const Tensor& image);

// Trilinear resampling of the last three axes with cell-centre alignment
// (src = (i + 0.5) * in / out - 0.5, clamped to the volume).
Tensor resample_trilinear(const Tensor& volume, const Extent3& out);
// Factor in {2, 4, 8}; extents must be divisible.
Tensor downsample_image(const Tensor& volume, int64_t factor);
// Nearest-neighbour resampling of the last three axes, src = floor((i + 0.5) * in / out).
LabelVolume resample_nearest(const LabelVolume& labels, const Extent3& out);
LabelVolume downsample_labels(const LabelVolume& labels, int64_t factor);

// Centre pad (with fill) or crop of the last three axes; odd excess goes to the high side.
Tensor pad_or_crop(const Tensor& volume, const Extent3& target, float fill = 0.0f);
LabelVolume pad_or_crop(const LabelVolume& labels, const Extent3& target, uint8_t fill = 0);

// Per axis: nearest-rank 90th percentile, rounded up to a power of two.
Extent3 standardize_shape(const std::vector<Extent3>& shapes);

// Normalize intensities and pad/crop image and labels to `target`.
Sample prepare_sample(const Sample& raw, const Extent3& target);

// .vvol: "VVOL0001", u32 LE header length, key=value header, f32 LE image, u8 labels.
void save_volume(const std::filesystem::path& path, const Sample& sample);
Sample load_volume(const std::filesystem::path& path);

struct ManifestEntry {
    std::string file;
    std::string split;  // "train" | "test"
    bool operator==(const ManifestEntry&) const = default;
};

// manifest.csv with header "file,split".
void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

// Seeded shuffle of 0..n-1; the first round(ratio * n) indices form the first part.
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double ratio, uint64_t split_seed);

struct GeneratedDataset {
    std::vector<Sample> volumes;     // prepared to `shape`
    std::vector<std::string> split;  // "train" | "test" per volume
    Extent3 shape{0, 0, 0};

    std::vector<Sample> part(const std::string& name) const;
};

// `count` phantoms with seeds hash_combine(seed, i), standardized to the
// preset's common grid, 80/20 train/test split (a single volume is train).
GeneratedDataset generate_dataset(const std::string& preset, int64_t count, uint64_t seed);
// vol_NNNN.vvol files plus manifest.csv.
void write_dataset(const std::filesystem::path& dir, const GeneratedDataset& data);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items, double ratio, uint64_t split_seed) {
    auto [a, b] = split_indices(items.size(), ratio, split_seed);
    std::pair<std::vector<T>, std::vector<T>> out;
    for (size_t i : a) out.first.push_back(items[i]);
    for (size_t i : b) out.second.push_back(items[i]);
    return out;
}

}  // namespace rareunet

#endif  // RAREUNET_DATA_HPP
