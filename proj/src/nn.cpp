#include "rareunet/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace rareunet::nn {

namespace {

using detail::grad_sink;
using detail::make_result;
using detail::TensorImpl;

using ColMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMap = Eigen::Map<ColMat>;
using ConstColMap = Eigen::Map<const ColMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using StridedColMap = Eigen::Map<ColMat, 0, Eigen::OuterStride<>>;
using ConstStridedColMap = Eigen::Map<const ColMat, 0, Eigen::OuterStride<>>;

// Output voxels per im2col tile. Fixed, so the per-element reduction order
// never depends on anything but the problem shape.
constexpr int64_t kTileVoxels = 4096;

void require_rank5(const Tensor& t, const char* what) {
    if (t.dim() != 5) throw ShapeError(std::string(what) + " must be N,C,D,H,W; got " + shape_string(t.shape()));
}

Extent3 spatial_of(const Tensor& t) { return {t.size(2), t.size(3), t.size(4)}; }

struct ConvGeometry {
    int64_t n, cin, cout;
    Extent3 in, out, k, s, p;
    int64_t in_vol() const { return in[0] * in[1] * in[2]; }
    int64_t out_vol() const { return out[0] * out[1] * out[2]; }
    int64_t kdim() const { return cin * k[0] * k[1] * k[2]; }
};

// Fills col[K][T] for output rows [r0, r1) (row = od * Ho + oh) of sample `x`.
void im2col(const ConvGeometry& g, const float* x, int64_t r0, int64_t r1, float* col) {
    const int64_t wo_n = g.out[2];
    const int64_t t_n = (r1 - r0) * wo_n;
    const int64_t plane = g.in[1] * g.in[2];
    int64_t k = 0;
    for (int64_t ci = 0; ci < g.cin; ++ci) {
        const float* xc = x + ci * g.in_vol();
        for (int64_t a = 0; a < g.k[0]; ++a) {
            for (int64_t b = 0; b < g.k[1]; ++b) {
                for (int64_t c = 0; c < g.k[2]; ++c, ++k) {
                    float* dst = col + k * t_n;
                    for (int64_t r = r0; r < r1; ++r) {
                        float* drow = dst + (r - r0) * wo_n;
                        const int64_t id = (r / g.out[1]) * g.s[0] - g.p[0] + a;
                        const int64_t ih = (r % g.out[1]) * g.s[1] - g.p[1] + b;
                        if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) {
                            std::fill(drow, drow + wo_n, 0.0f);
                            continue;
                        }
                        const float* src = xc + id * plane + ih * g.in[2];
                        if (g.s[2] == 1) {
                            const int64_t lo = std::clamp<int64_t>(g.p[2] - c, 0, wo_n);
                            const int64_t hi = std::clamp<int64_t>(g.in[2] + g.p[2] - c, lo, wo_n);
                            std::fill(drow, drow + lo, 0.0f);
                            std::memcpy(drow + lo, src + lo - g.p[2] + c, sizeof(float) * (hi - lo));
                            std::fill(drow + hi, drow + wo_n, 0.0f);
                        } else {
                            for (int64_t ow = 0; ow < wo_n; ++ow) {
                                const int64_t iw = ow * g.s[2] - g.p[2] + c;
                                drow[ow] = (iw >= 0 && iw < g.in[2]) ? src[iw] : 0.0f;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Scatter-adds col[K][T] back into dx (adjoint of im2col).
void col2im(const ConvGeometry& g, const float* col, int64_t r0, int64_t r1, float* dx) {
    const int64_t wo_n = g.out[2];
    const int64_t t_n = (r1 - r0) * wo_n;
    const int64_t plane = g.in[1] * g.in[2];
    int64_t k = 0;
    for (int64_t ci = 0; ci < g.cin; ++ci) {
        float* xc = dx + ci * g.in_vol();
        for (int64_t a = 0; a < g.k[0]; ++a) {
            for (int64_t b = 0; b < g.k[1]; ++b) {
                for (int64_t c = 0; c < g.k[2]; ++c, ++k) {
                    const float* srcrow = col + k * t_n;
                    for (int64_t r = r0; r < r1; ++r) {
                        const float* crow = srcrow + (r - r0) * wo_n;
                        const int64_t id = (r / g.out[1]) * g.s[0] - g.p[0] + a;
                        const int64_t ih = (r % g.out[1]) * g.s[1] - g.p[1] + b;
                        if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) continue;
                        float* dst = xc + id * plane + ih * g.in[2];
                        for (int64_t ow = 0; ow < wo_n; ++ow) {
                            const int64_t iw = ow * g.s[2] - g.p[2] + c;
                            if (iw >= 0 && iw < g.in[2]) dst[iw] += crow[ow];
                        }
                    }
                }
            }
        }
    }
}

int64_t tile_rows(const ConvGeometry& g) { return std::max<int64_t>(1, kTileVoxels / g.out[2]); }

}  // namespace

Extent3 ConvSpec::output_extent(const Extent3& in) const {
    Extent3 out{};
    for (int i = 0; i < 3; ++i) {
        if (stride[i] < 1 || kernel[i] < 1 || padding[i] < 0) throw ShapeError("invalid convolution spec");
        const int64_t span = in[i] + 2 * padding[i] - kernel[i];
        if (span < 0) throw ShapeError("convolution output extent < 1");
        out[i] = span / stride[i] + 1;
    }
    return out;
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
    require_rank5(x, "conv3d input");
    require_rank5(w, "conv3d weight");
    if (x.size(1) != spec.in_channels || w.size(1) != spec.in_channels || w.size(0) != spec.out_channels ||
        w.size(2) != spec.kernel[0] || w.size(3) != spec.kernel[1] || w.size(4) != spec.kernel[2]) {
        throw ShapeError("conv3d channel/kernel mismatch: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()));
    }
    if (b.defined() && (b.dim() != 1 || b.size(0) != spec.out_channels)) {
        throw ShapeError("conv3d bias must have out_channels elements");
    }
    ConvGeometry g{x.size(0), spec.in_channels, spec.out_channels, spatial_of(x), {}, spec.kernel,
                   spec.stride,  spec.padding};
    g.out = spec.output_extent(g.in);

    const int64_t P = g.out_vol();
    const int64_t K = g.kdim();
    const int64_t rows = g.out[0] * g.out[1];
    const int64_t tr = tile_rows(g);
    std::vector<float> out(static_cast<size_t>(g.n * g.cout * P));
    std::vector<float> col(static_cast<size_t>(K * std::min(tr, rows) * g.out[2]));
    ConstRowMap wm(w.data().data(), g.cout, K);
    const float* xd = x.data().data();
    for (int64_t n = 0; n < g.n; ++n) {
        for (int64_t r0 = 0; r0 < rows; r0 += tr) {
            const int64_t r1 = std::min(rows, r0 + tr);
            const int64_t T = (r1 - r0) * g.out[2];
            im2col(g, xd + n * g.cin * g.in_vol(), r0, r1, col.data());
            ConstColMap colT(col.data(), T, K);
            StridedColMap yt(out.data() + n * g.cout * P + r0 * g.out[2], T, g.cout, Eigen::OuterStride<>(P));
            yt.noalias() = colT * wm.transpose();
        }
        if (b.defined()) {
            const auto bv = b.data();
            for (int64_t co = 0; co < g.cout; ++co) {
                float* y = out.data() + (n * g.cout + co) * P;
                for (int64_t p = 0; p < P; ++p) y[p] += bv[co];
            }
        }
    }

    Shape out_shape{g.n, g.cout, g.out[0], g.out[1], g.out[2]};
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    return make_result(std::move(out_shape), std::move(out), {x, w, b}, "conv3d", [xi, wi, bi, g](const TensorImpl& o) {
        const int64_t P = g.out_vol();
        const int64_t K = g.kdim();
        const int64_t rows = g.out[0] * g.out[1];
        const int64_t tr = tile_rows(g);
        auto gx = grad_sink(*xi);
        auto gw = grad_sink(*wi);
        std::span<float> gb = bi ? grad_sink(*bi) : std::span<float>{};
        std::vector<float> col(static_cast<size_t>(K * std::min(tr, rows) * g.out[2]));
        ConstRowMap wm(wi->data.data(), g.cout, K);
        for (int64_t n = 0; n < g.n; ++n) {
            const float* gy_n = o.grad.data() + n * g.cout * P;
            for (int64_t r0 = 0; r0 < rows; r0 += tr) {
                const int64_t r1 = std::min(rows, r0 + tr);
                const int64_t T = (r1 - r0) * g.out[2];
                ConstStridedColMap gyt(gy_n + r0 * g.out[2], T, g.cout, Eigen::OuterStride<>(P));
                if (!gw.empty()) {
                    im2col(g, xi->data.data() + n * g.cin * g.in_vol(), r0, r1, col.data());
                    ConstColMap colT(col.data(), T, K);
                    ColMap gwt(gw.data(), K, g.cout);
                    gwt.noalias() += colT.transpose() * gyt;
                }
                if (!gx.empty()) {
                    ColMap dcol(col.data(), T, K);
                    dcol.noalias() = gyt * wm;
                    col2im(g, col.data(), r0, r1, gx.data() + n * g.cin * g.in_vol());
                }
            }
            if (!gb.empty()) {
                for (int64_t co = 0; co < g.cout; ++co) {
                    const float* gy = gy_n + co * P;
                    double acc = 0.0;
                    for (int64_t p = 0; p < P; ++p) acc += gy[p];
                    gb[co] += static_cast<float>(acc);
                }
            }
        }
    });
}

MaxPoolResult max_pool3d(const Tensor& x) {
    require_rank5(x, "max_pool3d input");
    const int64_t N = x.size(0), C = x.size(1), D = x.size(2), H = x.size(3), W = x.size(4);
    if (D % 2 || H % 2 || W % 2) throw ShapeError("max_pool3d needs even spatial extents, got " + shape_string(x.shape()));
    const int64_t Do = D / 2, Ho = H / 2, Wo = W / 2;
    const int64_t out_n = N * C * Do * Ho * Wo;
    std::vector<float> out(static_cast<size_t>(out_n));
    std::vector<int64_t> argmax(static_cast<size_t>(out_n));
    const float* xd = x.data().data();
    int64_t o = 0;
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const int64_t base = nc * D * H * W;
        for (int64_t d = 0; d < Do; ++d) {
            for (int64_t h = 0; h < Ho; ++h) {
                for (int64_t w = 0; w < Wo; ++w, ++o) {
                    int64_t best = -1;
                    for (int64_t a = 0; a < 2; ++a) {
                        for (int64_t b = 0; b < 2; ++b) {
                            const int64_t row = base + ((2 * d + a) * H + 2 * h + b) * W + 2 * w;
                            for (int64_t c = 0; c < 2; ++c) {
                                if (best < 0 || xd[row + c] > xd[best] || std::isnan(xd[row + c])) best = row + c;
                            }
                        }
                    }
                    argmax[o] = best;
                    out[o] = xd[best];
                }
            }
        }
    }
    auto xi = x.impl();
    MaxPoolResult result;
    result.argmax = argmax;
    result.output = make_result({N, C, Do, Ho, Wo}, std::move(out), {x}, "max_pool3d",
                                [xi, argmax = std::move(argmax)](const TensorImpl& out_impl) {
                                    auto g = grad_sink(*xi);
                                    for (size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += out_impl.grad[i];
                                });
    return result;
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank5(x, "conv_transpose3d input");
    require_rank5(w, "conv_transpose3d weight");
    const int64_t N = x.size(0), Cin = x.size(1), D = x.size(2), H = x.size(3), W = x.size(4);
    if (w.size(0) != Cin || w.size(2) != 2 || w.size(3) != 2 || w.size(4) != 2) {
        throw ShapeError("conv_transpose3d weight must be Cin,Cout,2,2,2 matching input; got " + shape_string(w.shape()));
    }
    const int64_t Cout = w.size(1);
    if (b.defined() && (b.dim() != 1 || b.size(0) != Cout)) throw ShapeError("conv_transpose3d bias must have Cout elements");
    const int64_t P = D * H * W;
    const int64_t J = Cout * 8;
    const int64_t Pout = P * 8;
    std::vector<float> out(static_cast<size_t>(N * Cout * Pout));
    std::vector<float> z(static_cast<size_t>(P * J));
    ConstRowMap wall(w.data().data(), Cin, J);

    // Flattened output position for input voxel p and kernel offset `off`.
    auto target = [D, H, W](int64_t p, int64_t off) {
        const int64_t d = p / (H * W), h = (p / W) % H, ww = p % W;
        const int64_t a = off >> 2, bb = (off >> 1) & 1, c = off & 1;
        return ((2 * d + a) * (2 * H) + 2 * h + bb) * (2 * W) + 2 * ww + c;
    };
    std::vector<int64_t> scatter(static_cast<size_t>(P * 8));
    for (int64_t off = 0; off < 8; ++off) {
        for (int64_t p = 0; p < P; ++p) scatter[off * P + p] = target(p, off);
    }
    (void)D;

    for (int64_t n = 0; n < N; ++n) {
        ConstColMap xt(x.data().data() + n * Cin * P, P, Cin);
        ColMap zm(z.data(), P, J);
        zm.noalias() = xt * wall;
        for (int64_t co = 0; co < Cout; ++co) {
            float* y = out.data() + (n * Cout + co) * Pout;
            const float bias = b.defined() ? b.data()[co] : 0.0f;
            for (int64_t off = 0; off < 8; ++off) {
                const float* zc = z.data() + (co * 8 + off) * P;
                const int64_t* sc = scatter.data() + off * P;
                for (int64_t p = 0; p < P; ++p) y[sc[p]] = zc[p] + bias;
            }
        }
    }

    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    return make_result({N, Cout, 2 * D, 2 * H, 2 * W}, std::move(out), {x, w, b}, "conv_transpose3d",
                       [xi, wi, bi, N, Cin, Cout, P, J, Pout, scatter = std::move(scatter)](const TensorImpl& o) {
                           auto gx = grad_sink(*xi);
                           auto gw = grad_sink(*wi);
                           std::span<float> gb = bi ? grad_sink(*bi) : std::span<float>{};
                           std::vector<float> dz(static_cast<size_t>(P * J));
                           ConstRowMap wall(wi->data.data(), Cin, J);
                           for (int64_t n = 0; n < N; ++n) {
                               for (int64_t co = 0; co < Cout; ++co) {
                                   const float* gy = o.grad.data() + (n * Cout + co) * Pout;
                                   for (int64_t off = 0; off < 8; ++off) {
                                       float* dzc = dz.data() + (co * 8 + off) * P;
                                       const int64_t* sc = scatter.data() + off * P;
                                       for (int64_t p = 0; p < P; ++p) dzc[p] = gy[sc[p]];
                                   }
                                   if (!gb.empty()) {
                                       double acc = 0.0;
                                       for (int64_t q = 0; q < Pout; ++q) acc += gy[q];
                                       gb[co] += static_cast<float>(acc);
                                   }
                               }
                               ConstColMap dzm(dz.data(), P, J);
                               if (!gx.empty()) {
                                   ColMap gxt(gx.data() + n * Cin * P, P, Cin);
                                   gxt.noalias() += dzm * wall.transpose();
                               }
                               if (!gw.empty()) {
                                   ConstRowMap xm(xi->data.data() + n * Cin * P, Cin, P);
                                   RowMap gwm(gw.data(), Cin, J);
                                   gwm.noalias() += xm * dzm;
                               }
                           }
                       });
}

RunningStats RunningStats::identity(int64_t channels) {
    RunningStats s;
    s.mean.assign(static_cast<size_t>(channels), 0.0f);
    s.var.assign(static_cast<size_t>(channels), 1.0f);
    return s;
}

namespace {

// Shared normalization kernel. A group is a set of `blocks` contiguous runs of
// `run` values; group g uses affine parameters of channel g % C.
Tensor normalize_groups(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, bool per_sample,
                        NormMode mode, RunningStats* stats, const char* op) {
    if (x.dim() < 3) throw ShapeError(std::string(op) + " input must be N,C,spatial...");
    if (!(eps > 0.0f)) throw ContractError(std::string(op) + " requires eps > 0");
    const int64_t N = x.size(0), C = x.size(1);
    const int64_t S = x.numel() / (N * C);
    if (gamma.numel() != C || beta.numel() != C) throw ShapeError(std::string(op) + ": gamma/beta length must equal channel count");
    const bool use_running = mode == NormMode::eval;
    if (use_running && (!stats || static_cast<int64_t>(stats->mean.size()) != C)) {
        throw ContractError(std::string(op) + " eval mode needs running statistics for every channel");
    }

    const int64_t groups = per_sample ? N * C : C;
    const int64_t blocks = per_sample ? 1 : N;
    auto block_offset = [=](int64_t grp, int64_t blk) {
        return per_sample ? grp * S : (blk * C + grp) * S;
    };
    const float* xd = x.data().data();
    std::vector<double> mean(static_cast<size_t>(groups));
    std::vector<double> inv_std(static_cast<size_t>(groups));
    for (int64_t grp = 0; grp < groups; ++grp) {
        const int64_t c = grp % C;
        if (use_running) {
            mean[grp] = stats->mean[c];
            inv_std[grp] = 1.0 / std::sqrt(static_cast<double>(stats->var[c]) + eps);
            continue;
        }
        double acc = 0.0;
        float lo = xd[block_offset(grp, 0)], hi = lo;
        for (int64_t blk = 0; blk < blocks; ++blk) {
            const float* v = xd + block_offset(grp, blk);
            for (int64_t i = 0; i < S; ++i) {
                acc += v[i];
                lo = std::min(lo, v[i]);
                hi = std::max(hi, v[i]);
            }
        }
        const double count = static_cast<double>(S * blocks);
        const double mu = acc / count;
        double sq = 0.0;
        for (int64_t blk = 0; blk < blocks; ++blk) {
            const float* v = xd + block_offset(grp, blk);
            for (int64_t i = 0; i < S; ++i) sq += (v[i] - mu) * (v[i] - mu);
        }
        const double var = sq / count;
        mean[grp] = mu;
        inv_std[grp] = lo == hi ? 0.0 : 1.0 / std::sqrt(var + eps);
        if (stats && !per_sample) {
            const double unbiased = count > 1 ? sq / (count - 1) : 0.0;
            stats->mean[c] = static_cast<float>((1.0 - stats->momentum) * stats->mean[c] + stats->momentum * mu);
            stats->var[c] = static_cast<float>((1.0 - stats->momentum) * stats->var[c] + stats->momentum * unbiased);
        }
    }

    std::vector<float> xhat(x.data().size());
    std::vector<float> out(x.data().size());
    const float* gm = gamma.data().data();
    const float* bt = beta.data().data();
    for (int64_t grp = 0; grp < groups; ++grp) {
        const int64_t c = grp % C;
        for (int64_t blk = 0; blk < blocks; ++blk) {
            const int64_t off = block_offset(grp, blk);
            for (int64_t i = 0; i < S; ++i) {
                const double h = (xd[off + i] - mean[grp]) * inv_std[grp];
                xhat[off + i] = static_cast<float>(h);
                out[off + i] = static_cast<float>(gm[c] * h + bt[c]);
            }
        }
    }

    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, op,
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
                           auto gx = grad_sink(*xi);
                           auto gg = grad_sink(*gi);
                           auto gb = grad_sink(*bi);
                           const double count = static_cast<double>(S * blocks);
                           for (int64_t grp = 0; grp < groups; ++grp) {
                               const int64_t c = grp % C;
                               double sum_dy = 0.0, sum_dy_xhat = 0.0;
                               for (int64_t blk = 0; blk < blocks; ++blk) {
                                   const int64_t off = block_offset(grp, blk);
                                   for (int64_t i = 0; i < S; ++i) {
                                       sum_dy += o.grad[off + i];
                                       sum_dy_xhat += static_cast<double>(o.grad[off + i]) * xhat[off + i];
                                   }
                               }
                               if (!gg.empty()) gg[c] += static_cast<float>(sum_dy_xhat);
                               if (!gb.empty()) gb[c] += static_cast<float>(sum_dy);
                               if (gx.empty()) continue;
                               const float scale = static_cast<float>(gi->data[c] * inv_std[grp]);
                               if (use_running) {
                                   for (int64_t blk = 0; blk < blocks; ++blk) {
                                       const int64_t off = block_offset(grp, blk);
                                       for (int64_t i = 0; i < S; ++i) gx[off + i] += scale * o.grad[off + i];
                                   }
                                   continue;
                               }
                               const float mean_dy = static_cast<float>(sum_dy / count);
                               const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
                               for (int64_t blk = 0; blk < blocks; ++blk) {
                                   const int64_t off = block_offset(grp, blk);
                                   for (int64_t i = 0; i < S; ++i) {
                                       gx[off + i] += scale * (o.grad[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
                                   }
                               }
                           }
                       });
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, NormMode mode,
                  RunningStats* stats) {
    return normalize_groups(x, gamma, beta, eps, false, mode, stats, "batch_norm");
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    return normalize_groups(x, gamma, beta, eps, true, NormMode::train, nullptr, "instance_norm");
}

Tensor softmax_channels(const Tensor& x) {
    if (x.dim() < 2 || x.size(1) < 2) throw ShapeError("softmax_channels needs N,C,... with C >= 2");
    const int64_t N = x.size(0), C = x.size(1);
    const int64_t S = x.numel() / (N * C);
    const float* xd = x.data().data();
    std::vector<float> out(x.data().size());
    for (int64_t n = 0; n < N; ++n) {
        const float* xn = xd + n * C * S;
        float* yn = out.data() + n * C * S;
        for (int64_t s = 0; s < S; ++s) {
            float m = xn[s];
            for (int64_t c = 1; c < C; ++c) m = std::max(m, xn[c * S + s]);
            double z = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const float e = std::exp(xn[c * S + s] - m);
                yn[c * S + s] = e;
                z += e;
            }
            const float inv = static_cast<float>(1.0 / z);
            for (int64_t c = 0; c < C; ++c) yn[c * S + s] *= inv;
        }
    }
    auto xi = x.impl();
    return make_result(x.shape(), std::move(out), {x}, "softmax_channels", [xi, N, C, S](const TensorImpl& o) {
        auto gx = grad_sink(*xi);
        for (int64_t n = 0; n < N; ++n) {
            const float* p = o.data.data() + n * C * S;
            const float* gy = o.grad.data() + n * C * S;
            float* g = gx.data() + n * C * S;
            for (int64_t s = 0; s < S; ++s) {
                double dot = 0.0;
                for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(p[c * S + s]) * gy[c * S + s];
                for (int64_t c = 0; c < C; ++c) {
                    g[c * S + s] += p[c * S + s] * (gy[c * S + s] - static_cast<float>(dot));
                }
            }
        }
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim() < 2 || a.dim() != b.dim() || a.size(0) != b.size(0)) throw ShapeError("concat_channels rank/batch mismatch");
    for (int64_t i = 2; i < a.dim(); ++i) {
        if (a.size(i) != b.size(i)) {
            throw ShapeError("concat_channels spatial mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
        }
    }
    const int64_t N = a.size(0);
    const int64_t sa = a.numel() / N, sb = b.numel() / N;
    std::vector<float> out(static_cast<size_t>(a.numel() + b.numel()));
    for (int64_t n = 0; n < N; ++n) {
        std::copy_n(a.data().data() + n * sa, sa, out.data() + n * (sa + sb));
        std::copy_n(b.data().data() + n * sb, sb, out.data() + n * (sa + sb) + sa);
    }
    Shape shape = a.shape();
    shape[1] += b.size(1);
    auto ai = a.impl();
    auto bi = b.impl();
    return make_result(std::move(shape), std::move(out), {a, b}, "concat_channels", [ai, bi, N, sa, sb](const TensorImpl& o) {
        auto ga = grad_sink(*ai);
        auto gb = grad_sink(*bi);
        for (int64_t n = 0; n < N; ++n) {
            const float* g = o.grad.data() + n * (sa + sb);
            if (!ga.empty()) {
                for (int64_t i = 0; i < sa; ++i) ga[n * sa + i] += g[i];
            }
            if (!gb.empty()) {
                for (int64_t i = 0; i < sb; ++i) gb[n * sb + i] += g[sa + i];
            }
        }
    });
}

LabelVolume argmax_channels(const Tensor& x) {
    require_rank5(x, "argmax_channels input");
    const int64_t N = x.size(0), C = x.size(1);
    const int64_t S = x.numel() / (N * C);
    if (C > 256) throw ShapeError("argmax_channels supports at most 256 classes");
    LabelVolume labels = LabelVolume::zeros({N, x.size(2), x.size(3), x.size(4)});
    const float* xd = x.data().data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t s = 0; s < S; ++s) {
            int64_t best = 0;
            for (int64_t c = 1; c < C; ++c) {
                if (xd[(n * C + c) * S + s] > xd[(n * C + best) * S + s]) best = c;
            }
            labels.values[n * S + s] = static_cast<uint8_t>(best);
        }
    }
    return labels;
}

}  // namespace rareunet::nn
