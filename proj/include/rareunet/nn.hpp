#ifndef RAREUNET_NN_HPP
#define RAREUNET_NN_HPP

#include <array>
#include <vector>

#include "rareunet/labels.hpp"
#include "rareunet/tensor.hpp"

namespace rareunet::nn {

using Extent3 = std::array<int64_t, 3>;

struct ConvSpec {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    Extent3 kernel{3, 3, 3};
    Extent3 stride{1, 1, 1};
    Extent3 padding{1, 1, 1};

    // floor((in + 2 pad - k) / stride) + 1 per axis; ShapeError when < 1.
    Extent3 output_extent(const Extent3& in) const;
    int64_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

// x: N,Cin,D,H,W  w: Cout,Cin,kd,kh,kw  b: Cout (may be undefined).
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec);

struct MaxPoolResult {
    Tensor output;
    // Linear input index of each output's maximum (first maximum on ties).
    std::vector<int64_t> argmax;
};

// 2x2x2 window, stride 2. Every spatial extent must be even.
MaxPoolResult max_pool3d(const Tensor& x);

// Stride-2, 2x2x2 transposed convolution. w: Cin,Cout,2,2,2  b: Cout (may be undefined).
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b);

enum class NormMode { train, eval };

struct RunningStats {
    std::vector<float> mean;
    std::vector<float> var;
    float momentum = 0.1f;

    static RunningStats identity(int64_t channels);
};

// Per-channel normalization over (N, D, H, W). Train mode uses batch moments
// and updates `stats` when given; eval mode reads `stats`. A channel whose
// values are all equal normalizes to 0 before the affine transform.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, NormMode mode,
                  RunningStats* stats);

// Per-(sample, channel) normalization over (D, H, W); no running statistics.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

// Softmax over axis 1 of N,C,... with max subtraction.
Tensor softmax_channels(const Tensor& x);

// Concatenates along axis 1.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Channel argmax of N,C,D,H,W (lowest channel wins ties) -> N,D,H,W labels.
LabelVolume argmax_channels(const Tensor& x);

}  // namespace rareunet::nn

#endif  // RAREUNET_NN_HPP
