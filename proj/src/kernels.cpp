#include "spcv/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string_view>

namespace spcv {

namespace {

// ---------------------------------------------------------------- scalar tier

template <int M, int N>
void spmm_strip_scalar(const BcsrMatrix& m, const float* act, int S, int s0,
                       const float* bias, const Activation& fn, float* out, int /*pf*/) {
    const int brows = m.block_rows();
    for (int br = 0; br < brows; ++br) {
        float acc[N][M];
        for (int n = 0; n < N; ++n) {
            const float b = bias != nullptr ? bias[br * N + n] : 0.0f;
            for (int j = 0; j < M; ++j) acc[n][j] = b;
        }
        const std::uint32_t end = m.row_ptr[br + 1];
        for (std::uint32_t blk = m.row_ptr[br]; blk < end; ++blk) {
            const float* src = act + static_cast<std::size_t>(m.col_idx[blk]) * S + s0;
            const float* w = m.values.data() + static_cast<std::size_t>(blk) * N;
            for (int n = 0; n < N; ++n) {
                const float wv = w[n];
                for (int j = 0; j < M; ++j) acc[n][j] += wv * src[j];
            }
        }
        const bool clamp = fn.kind == Activation::Kind::Clamp;
        for (int n = 0; n < N; ++n) {
            float* dst = out + static_cast<std::size_t>(br * N + n) * S + s0;
            for (int j = 0; j < M; ++j) {
                float v = acc[n][j];
                if (clamp) v = v < fn.lo ? fn.lo : (v > fn.hi ? fn.hi : v);
                dst[j] = v;
            }
        }
    }
}

template <int M, int R>
void dense_rows_scalar(const float* w, int r0, int cols, const float* act, int S, int s0,
                       const float* bias, const Activation& fn, float* out) {
    float acc[R][M];
    for (int i = 0; i < R; ++i) {
        const float b = bias != nullptr ? bias[r0 + i] : 0.0f;
        for (int j = 0; j < M; ++j) acc[i][j] = b;
    }
    for (int k = 0; k < cols; ++k) {
        const float* src = act + static_cast<std::size_t>(k) * S + s0;
        for (int i = 0; i < R; ++i) {
            const float wv = w[static_cast<std::size_t>(r0 + i) * cols + k];
            for (int j = 0; j < M; ++j) acc[i][j] += wv * src[j];
        }
    }
    const bool clamp = fn.kind == Activation::Kind::Clamp;
    for (int i = 0; i < R; ++i) {
        float* dst = out + static_cast<std::size_t>(r0 + i) * S + s0;
        for (int j = 0; j < M; ++j) {
            float v = acc[i][j];
            if (clamp) v = v < fn.lo ? fn.lo : (v > fn.hi ? fn.hi : v);
            dst[j] = v;
        }
    }
}

template <int M>
void dense_strip_scalar(const float* w, int rows, int cols, const float* act, int S, int s0,
                        const float* bias, const Activation& fn, float* out, int /*pf*/) {
    int r = 0;
    for (; r + 4 <= rows; r += 4) dense_rows_scalar<M, 4>(w, r, cols, act, S, s0, bias, fn, out);
    for (; r < rows; ++r) dense_rows_scalar<M, 1>(w, r, cols, act, S, s0, bias, fn, out);
}

// ---------------------------------------------------------------- vector tier

#if defined(__GNUC__) || defined(__clang__)
#define SPCV_HAVE_VECTOR_TIER 1

typedef float f32x4 __attribute__((vector_size(16)));

inline f32x4 vload(const float* p) {
    f32x4 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}
inline void vstore(float* p, f32x4 v) { std::memcpy(p, &v, sizeof(v)); }
inline f32x4 vsplat(float x) { return f32x4{x, x, x, x}; }
inline f32x4 vclamp(f32x4 v, float lo, float hi) {
    for (int i = 0; i < 4; ++i) {
        const float x = v[i];
        v[i] = x < lo ? lo : (x > hi ? hi : x);
    }
    return v;
}

template <int M, int N>
void spmm_strip_vector(const BcsrMatrix& m, const float* act, int S, int s0,
                       const float* bias, const Activation& fn, float* out, int pf) {
    static_assert(M % 4 == 0);
    constexpr int V = M / 4;
    const int brows = m.block_rows();
    for (int br = 0; br < brows; ++br) {
        f32x4 acc[N][V];
        for (int n = 0; n < N; ++n) {
            const f32x4 b = vsplat(bias != nullptr ? bias[br * N + n] : 0.0f);
            for (int v = 0; v < V; ++v) acc[n][v] = b;
        }
        const std::uint32_t end = m.row_ptr[br + 1];
        for (std::uint32_t blk = m.row_ptr[br]; blk < end; ++blk) {
            const float* src = act + static_cast<std::size_t>(m.col_idx[blk]) * S + s0;
            if (pf > 0) __builtin_prefetch(src + pf);
            const float* w = m.values.data() + static_cast<std::size_t>(blk) * N;
            for (int n = 0; n < N; ++n) {
                const f32x4 wv = vsplat(w[n]);
                for (int v = 0; v < V; ++v) acc[n][v] += wv * vload(src + 4 * v);
            }
        }
        const bool clamp = fn.kind == Activation::Kind::Clamp;
        for (int n = 0; n < N; ++n) {
            float* dst = out + static_cast<std::size_t>(br * N + n) * S + s0;
            for (int v = 0; v < V; ++v)
                vstore(dst + 4 * v, clamp ? vclamp(acc[n][v], fn.lo, fn.hi) : acc[n][v]);
        }
    }
}

template <int M, int R>
void dense_rows_vector(const float* w, int r0, int cols, const float* act, int S, int s0,
                       const float* bias, const Activation& fn, float* out, int pf) {
    static_assert(M % 4 == 0);
    constexpr int V = M / 4;
    f32x4 acc[R][V];
    for (int i = 0; i < R; ++i) {
        const f32x4 b = vsplat(bias != nullptr ? bias[r0 + i] : 0.0f);
        for (int v = 0; v < V; ++v) acc[i][v] = b;
    }
    for (int k = 0; k < cols; ++k) {
        const float* src = act + static_cast<std::size_t>(k) * S + s0;
        if (pf > 0) __builtin_prefetch(src + pf);
        for (int i = 0; i < R; ++i) {
            const f32x4 wv = vsplat(w[static_cast<std::size_t>(r0 + i) * cols + k]);
            for (int v = 0; v < V; ++v) acc[i][v] += wv * vload(src + 4 * v);
        }
    }
    const bool clamp = fn.kind == Activation::Kind::Clamp;
    for (int i = 0; i < R; ++i) {
        float* dst = out + static_cast<std::size_t>(r0 + i) * S + s0;
        for (int v = 0; v < V; ++v)
            vstore(dst + 4 * v, clamp ? vclamp(acc[i][v], fn.lo, fn.hi) : acc[i][v]);
    }
}

template <int M>
void dense_strip_vector(const float* w, int rows, int cols, const float* act, int S, int s0,
                        const float* bias, const Activation& fn, float* out, int pf) {
    int r = 0;
    for (; r + 4 <= rows; r += 4) dense_rows_vector<M, 4>(w, r, cols, act, S, s0, bias, fn, out, pf);
    for (; r < rows; ++r) dense_rows_vector<M, 1>(w, r, cols, act, S, s0, bias, fn, out, pf);
}
#endif  // vector tier

// ------------------------------------------------------------------ dispatch

using SpmmStripFn = void (*)(const BcsrMatrix&, const float*, int, int, const float*,
                             const Activation&, float*, int);
using DenseStripFn = void (*)(const float*, int, int, const float*, int, int, const float*,
                              const Activation&, float*, int);

template <int N>
SpmmStripFn scalar_spmm_for(int width) {
    switch (width) {
        case 16: return spmm_strip_scalar<16, N>;
        case 8: return spmm_strip_scalar<8, N>;
        case 4: return spmm_strip_scalar<4, N>;
        case 2: return spmm_strip_scalar<2, N>;
        default: return spmm_strip_scalar<1, N>;
    }
}

#if defined(SPCV_HAVE_VECTOR_TIER)
template <int N>
SpmmStripFn vector_spmm_for(int width) {
    switch (width) {
        case 16: return spmm_strip_vector<16, N>;
        case 8: return spmm_strip_vector<8, N>;
        default: return spmm_strip_vector<4, N>;
    }
}
#endif

SpmmStripFn pick_spmm(Tier tier, int width, int n) {
#if defined(SPCV_HAVE_VECTOR_TIER)
    if (tier == Tier::Vector && width % 4 == 0) {
        switch (n) {
            case 2: return vector_spmm_for<2>(width);
            case 4: return vector_spmm_for<4>(width);
            default: return vector_spmm_for<1>(width);
        }
    }
#else
    (void)tier;
#endif
    switch (n) {
        case 2: return scalar_spmm_for<2>(width);
        case 4: return scalar_spmm_for<4>(width);
        default: return scalar_spmm_for<1>(width);
    }
}

DenseStripFn pick_dense(Tier tier, int width) {
#if defined(SPCV_HAVE_VECTOR_TIER)
    if (tier == Tier::Vector && width % 4 == 0) {
        switch (width) {
            case 16: return dense_strip_vector<16>;
            case 8: return dense_strip_vector<8>;
            default: return dense_strip_vector<4>;
        }
    }
#else
    (void)tier;
#endif
    switch (width) {
        case 16: return dense_strip_scalar<16>;
        case 8: return dense_strip_scalar<8>;
        case 4: return dense_strip_scalar<4>;
        case 2: return dense_strip_scalar<2>;
        default: return dense_strip_scalar<1>;
    }
}

}  // namespace

// -------------------------------------------------------------- tier plumbing

bool vector_tier_available() {
#if defined(SPCV_HAVE_VECTOR_TIER)
    return true;
#else
    return false;
#endif
}

Tier resolve_tier(Tier requested) {
    if (const char* env = std::getenv("SPCV_FORCE_SCALAR");
        env != nullptr && *env != '\0' && std::string_view(env) != "0")
        return Tier::Scalar;
    if (requested == Tier::Auto)
        requested = vector_tier_available() ? Tier::Vector : Tier::Scalar;
    if (requested == Tier::Vector && !vector_tier_available()) requested = Tier::Scalar;
    return requested;
}

const char* tier_name(Tier t) {
    switch (t) {
        case Tier::Scalar: return "scalar";
        case Tier::Vector: return "vector";
        default: return "auto";
    }
}

Tier parse_tier(const std::string& s) {
    if (s == "scalar") return Tier::Scalar;
    if (s == "vector") return Tier::Vector;
    if (s == "auto") return Tier::Auto;
    throw std::invalid_argument("unknown tier '" + s + "' (expected scalar|vector|auto)");
}

int default_strip_width(Tier resolved) {
    return resolve_tier(resolved) == Tier::Vector ? 16 : 8;
}

std::string variant_name(int m, int n) {
    return std::to_string(m) + "x" + std::to_string(n);
}

std::pair<int, int> parse_variant(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw std::invalid_argument("bad variant '" + s + "' (expected MxN, e.g. 16x2)");
    int m = 0, n = 0;
    try {
        std::size_t used = 0;
        m = std::stoi(s.substr(0, x), &used);
        if (used != x) throw std::invalid_argument("");
        n = std::stoi(s.substr(x + 1), &used);
        if (used != s.size() - x - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw std::invalid_argument("bad variant '" + s + "' (expected MxN, e.g. 16x2)");
    }
    if (m != 4 && m != 8 && m != 16)
        throw std::invalid_argument("variant strip width must be 4, 8 or 16 (got " + s + ")");
    if (n != 1 && n != 2 && n != 4)
        throw std::invalid_argument("variant out_block must be 1, 2 or 4 (got " + s + ")");
    return {m, n};
}

// --------------------------------------------------------------------- spmm

void spmm_into(const BcsrMatrix& m, const Tensor& act, std::span<const float> bias,
               const Activation& fused, Tensor& out, const MicrokernelConfig& cfg) {
    if (act.layout != Layout::CHW) throw LayoutError("spmm: activation must be CHW");
    if (m.cols != act.channels)
        throw ShapeError("spmm: weight cols " + std::to_string(m.cols) +
                         " != activation channels " + std::to_string(act.channels));
    if (cfg.n != m.block_h)
        throw FormatError("spmm: cfg out_block " + std::to_string(cfg.n) +
                          " != matrix block height " + std::to_string(m.block_h));
    if (!bias.empty() && static_cast<int>(bias.size()) != m.rows)
        throw ShapeError("spmm: bias length != rows");
    if (out.layout != Layout::CHW || out.channels != m.rows || out.height != act.height ||
        out.width != act.width)
        throw ShapeError("spmm: output tensor shape/layout mismatch");

    const Tier tier = resolve_tier(cfg.tier);
    const int M = cfg.m != 0 ? cfg.m : default_strip_width(tier);
    if (M != 4 && M != 8 && M != 16)
        throw std::invalid_argument("spmm: strip width must be 4, 8 or 16");

    const int S = act.spatial();
    const int pf = cfg.prefetch ? M : 0;  // one strip ahead
    const float* bptr = bias.empty() ? nullptr : bias.data();
    int s = 0;
    while (s < S) {
        int w = M;
        while (w > S - s) w >>= 1;
        pick_spmm(tier, w, m.block_h)(m, act.data.data(), S, s, bptr, fused, out.data.data(), pf);
        s += w;
    }
}

Tensor spmm(const BcsrMatrix& w, const Tensor& act, std::span<const float> bias,
            const Activation& fused, const MicrokernelConfig& cfg) {
    Tensor out(w.rows, act.height, act.width, Layout::CHW);
    spmm_into(w, act, bias, fused, out, cfg);
    return out;
}

// --------------------------------------------------------------- dense gemm

void dense_gemm_into(const DenseMatrix& w, const Tensor& act, std::span<const float> bias,
                     const Activation& fused, Tensor& out, const MicrokernelConfig& cfg) {
    if (act.layout != Layout::CHW) throw LayoutError("dense_gemm: activation must be CHW");
    if (w.cols != act.channels)
        throw ShapeError("dense_gemm: weight cols " + std::to_string(w.cols) +
                         " != activation channels " + std::to_string(act.channels));
    if (!bias.empty() && static_cast<int>(bias.size()) != w.rows)
        throw ShapeError("dense_gemm: bias length != rows");
    if (out.layout != Layout::CHW || out.channels != w.rows || out.height != act.height ||
        out.width != act.width)
        throw ShapeError("dense_gemm: output tensor shape/layout mismatch");

    const Tier tier = resolve_tier(cfg.tier);
    const int M = cfg.m != 0 ? cfg.m : default_strip_width(tier);
    if (M != 4 && M != 8 && M != 16)
        throw std::invalid_argument("dense_gemm: strip width must be 4, 8 or 16");

    const int S = act.spatial();
    const int pf = cfg.prefetch ? M : 0;
    const float* bptr = bias.empty() ? nullptr : bias.data();
    int s = 0;
    while (s < S) {
        int width = M;
        while (width > S - s) width >>= 1;
        pick_dense(tier, width)(w.data.data(), w.rows, w.cols, act.data.data(), S, s, bptr,
                                fused, out.data.data(), pf);
        s += width;
    }
}

Tensor dense_gemm_baseline(const DenseMatrix& w, const Tensor& act,
                           std::span<const float> bias, const Activation& fused,
                           const MicrokernelConfig& cfg) {
    Tensor out(w.rows, act.height, act.width, Layout::CHW);
    dense_gemm_into(w, act, bias, fused, out, cfg);
    return out;
}

// --------------------------------------------------------- supporting kernels

Tensor depthwise_conv_chw(const Tensor& act, const DepthwiseWeights& w, int stride,
                          std::span<const float> bias, const Activation& fused) {
    if (act.layout != Layout::CHW) throw LayoutError("depthwise_conv_chw: activation must be CHW");
    if (w.channels != act.channels)
        throw ShapeError("depthwise_conv_chw: weight channels != activation channels");
    if (stride != 1 && stride != 2) throw ShapeError("depthwise_conv_chw: stride must be 1 or 2");
    if (!bias.empty() && static_cast<int>(bias.size()) != act.channels)
        throw ShapeError("depthwise_conv_chw: bias length != channels");

    const SamePad ph = same_pad(act.height, 3, stride);
    const SamePad pw = same_pad(act.width, 3, stride);
    Tensor out(act.channels, ph.out, pw.out, Layout::CHW);
    for (int c = 0; c < act.channels; ++c) {
        const float* in = act.data.data() + static_cast<std::size_t>(c) * act.spatial();
        float* dst = out.data.data() + static_cast<std::size_t>(c) * out.spatial();
        const float* k = w.data.data() + static_cast<std::size_t>(c) * 9;
        const float b = bias.empty() ? 0.0f : bias[c];
        for (int oy = 0; oy < ph.out; ++oy) {
            const int iy0 = oy * stride - ph.before;
            for (int ox = 0; ox < pw.out; ++ox) {
                const int ix0 = ox * stride - pw.before;
                float acc = b;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = iy0 + ky;
                    if (static_cast<unsigned>(iy) >= static_cast<unsigned>(act.height)) continue;
                    const float* row = in + static_cast<std::size_t>(iy) * act.width;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = ix0 + kx;
                        if (static_cast<unsigned>(ix) >= static_cast<unsigned>(act.width)) continue;
                        acc += k[ky * 3 + kx] * row[ix];
                    }
                }
                dst[static_cast<std::size_t>(oy) * pw.out + ox] = fused.apply(acc);
            }
        }
    }
    return out;
}

Tensor entry_conv_hwc_to_chw(const Tensor& img, const ConvWeights& w, int stride,
                             std::span<const float> bias, const Activation& fused) {
    if (img.layout != Layout::HWC) throw LayoutError("entry_conv: image must be HWC");
    if (w.cin != img.channels)
        throw ShapeError("entry_conv: weight cin != image channels");
    if (stride < 1) throw ShapeError("entry_conv: stride must be >= 1");
    if (!bias.empty() && static_cast<int>(bias.size()) != w.cout)
        throw ShapeError("entry_conv: bias length != cout");

    // Repack [cout][cin][ky][kx] -> [cout][ky][kx][cin] so every tap reads a
    // contiguous HWC pixel.
    const int C = img.channels;
    std::vector<float> wp(static_cast<std::size_t>(w.cout) * w.kh * w.kw * C);
    for (int co = 0; co < w.cout; ++co)
        for (int ky = 0; ky < w.kh; ++ky)
            for (int kx = 0; kx < w.kw; ++kx)
                for (int ci = 0; ci < C; ++ci)
                    wp[((static_cast<std::size_t>(co) * w.kh + ky) * w.kw + kx) * C + ci] =
                        w.at(co, ci, ky, kx);

    const SamePad ph = same_pad(img.height, w.kh, stride);
    const SamePad pw = same_pad(img.width, w.kw, stride);
    Tensor out(w.cout, ph.out, pw.out, Layout::CHW);
    for (int co = 0; co < w.cout; ++co) {
        const float* kbase = wp.data() + static_cast<std::size_t>(co) * w.kh * w.kw * C;
        float* dst = out.data.data() + static_cast<std::size_t>(co) * out.spatial();
        const float b = bias.empty() ? 0.0f : bias[co];
        for (int oy = 0; oy < ph.out; ++oy) {
            const int iy0 = oy * stride - ph.before;
            for (int ox = 0; ox < pw.out; ++ox) {
                const int ix0 = ox * stride - pw.before;
                float acc = b;
                for (int ky = 0; ky < w.kh; ++ky) {
                    const int iy = iy0 + ky;
                    if (static_cast<unsigned>(iy) >= static_cast<unsigned>(img.height)) continue;
                    const float* row = img.data.data() +
                                       (static_cast<std::size_t>(iy) * img.width) * C;
                    const float* krow = kbase + static_cast<std::size_t>(ky) * w.kw * C;
                    for (int kx = 0; kx < w.kw; ++kx) {
                        const int ix = ix0 + kx;
                        if (static_cast<unsigned>(ix) >= static_cast<unsigned>(img.width)) continue;
                        const float* px = row + static_cast<std::size_t>(ix) * C;
                        const float* kk = krow + static_cast<std::size_t>(kx) * C;
                        for (int ci = 0; ci < C; ++ci) acc += kk[ci] * px[ci];
                    }
                }
                dst[static_cast<std::size_t>(oy) * pw.out + ox] = fused.apply(acc);
            }
        }
    }
    return out;
}

std::vector<float> global_avg_pool_chw(const Tensor& act) {
    if (act.layout != Layout::CHW) throw LayoutError("global_avg_pool_chw: input must be CHW");
    const int S = act.spatial();
    std::vector<float> out(static_cast<std::size_t>(act.channels));
    for (int c = 0; c < act.channels; ++c) {
        const float* src = act.data.data() + static_cast<std::size_t>(c) * S;
        float sum = 0.0f;
        for (int s = 0; s < S; ++s) sum += src[s];
        out[static_cast<std::size_t>(c)] = sum / static_cast<float>(S);
    }
    return out;
}

}  // namespace spcv
