#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spcv/sparse.hpp"
#include "spcv/tensor.hpp"

namespace spcv {

/// Kernel implementation tier. Scalar is always available; Vector uses
/// compiler vector extensions where the toolchain provides them. Auto picks
/// Vector when available. Setting the environment variable SPCV_FORCE_SCALAR
/// (to anything but "0") forces Scalar regardless of the request.
enum class Tier : std::uint8_t { Scalar, Vector, Auto };

bool vector_tier_available();
Tier resolve_tier(Tier requested);
const char* tier_name(Tier t);
Tier parse_tier(const std::string& s);  // "scalar" | "vector" | "auto"

/// Selects the microkernel variant. Variants are named "MxN": M spatial
/// locations and N output channels per inner iteration. m = 0 picks the
/// tier default (16 on the vector tier, 8 on the scalar tier).
struct MicrokernelConfig {
    int m = 0;             // strip width, one of {4, 8, 16} (or 0 = default)
    int n = 1;             // out_block, must match the matrix block height
    bool prefetch = true;  // hint only; never affects results
    Tier tier = Tier::Auto;
};

int default_strip_width(Tier resolved);
std::string variant_name(int m, int n);
std::pair<int, int> parse_variant(const std::string& s);  // "16x2" -> {16, 2}

/// Sparse-weight x dense-activation product over a CHW tensor:
///   out[c, s] = fused(bias[c] + sum of value * act[col, s] over c's blocks)
/// Outer loop walks spatial strips of M locations; inner loop walks block
/// rows, broadcasting each stored weight against the strip. Strip remainders
/// use narrower tail paths (M/2, ..., 1). With cfg.prefetch the next strip
/// is prefetched while the current one is processed.
void spmm_into(const BcsrMatrix& w, const Tensor& act, std::span<const float> bias,
               const Activation& fused, Tensor& out, const MicrokernelConfig& cfg = {});
Tensor spmm(const BcsrMatrix& w, const Tensor& act, std::span<const float> bias,
            const Activation& fused = {}, const MicrokernelConfig& cfg = {});

/// Sparse 1x1 convolution is spmm with S = H*W; spatial dims pass through.
inline Tensor spconv_1x1(const BcsrMatrix& w, const Tensor& act,
                         std::span<const float> bias, const Activation& fused = {},
                         const MicrokernelConfig& cfg = {}) {
    return spmm(w, act, bias, fused, cfg);
}

/// Per-channel 3x3 filters for the depthwise convolution, [c][ky][kx].
struct DepthwiseWeights {
    int channels = 0;
    std::vector<float> data;

    DepthwiseWeights() = default;
    explicit DepthwiseWeights(int c)
        : channels(c), data(static_cast<std::size_t>(c) * 9, 0.0f) {}

    float at(int c, int ky, int kx) const { return data[(static_cast<std::size_t>(c) * 3 + ky) * 3 + kx]; }
    float& at(int c, int ky, int kx) { return data[(static_cast<std::size_t>(c) * 3 + ky) * 3 + kx]; }
};

/// Depthwise 3x3 convolution in CHW, SAME padding, stride 1 or 2.
Tensor depthwise_conv_chw(const Tensor& act, const DepthwiseWeights& w, int stride,
                          std::span<const float> bias, const Activation& fused = {});

/// Dense 3x3 entry convolution: HWC image in, CHW feature map out. Weights
/// arrive in the usual [cout][cin][ky][kx] order and are repacked internally
/// so the inner loop reads contiguous HWC pixels.
Tensor entry_conv_hwc_to_chw(const Tensor& img, const ConvWeights& w, int stride,
                             std::span<const float> bias, const Activation& fused = {});

/// Mean over the spatial extent of each channel.
std::vector<float> global_avg_pool_chw(const Tensor& act);

/// Dense GEMM over CHW activations with the same strip scheme as spmm, used
/// as the in-repo speed baseline so comparisons stay at one optimization tier.
void dense_gemm_into(const DenseMatrix& w, const Tensor& act, std::span<const float> bias,
                     const Activation& fused, Tensor& out, const MicrokernelConfig& cfg = {});
Tensor dense_gemm_baseline(const DenseMatrix& w, const Tensor& act,
                           std::span<const float> bias, const Activation& fused = {},
                           const MicrokernelConfig& cfg = {});

}  // namespace spcv
