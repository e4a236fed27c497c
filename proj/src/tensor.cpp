#include "spcv/tensor.hpp"

#include <string>

namespace spcv {

SamePad same_pad(int in, int kernel, int stride) {
    if (in < 1 || kernel < 1 || stride < 1)
        throw ShapeError("same_pad: in/kernel/stride must be >= 1");
    SamePad p;
    p.out = (in + stride - 1) / stride;
    int total = (p.out - 1) * stride + kernel - in;
    if (total < 0) total = 0;
    p.before = total / 2;  // odd excess lands after
    return p;
}

Tensor hwc_to_chw(const Tensor& t) {
    if (t.layout != Layout::HWC) throw LayoutError("hwc_to_chw: input is not HWC");
    Tensor out(t.channels, t.height, t.width, Layout::CHW);
    for (int c = 0; c < t.channels; ++c)
        for (int h = 0; h < t.height; ++h)
            for (int w = 0; w < t.width; ++w)
                out.at(c, h, w) = t.at(c, h, w);
    return out;
}

Tensor chw_to_hwc(const Tensor& t) {
    if (t.layout != Layout::CHW) throw LayoutError("chw_to_hwc: input is not CHW");
    Tensor out(t.channels, t.height, t.width, Layout::HWC);
    for (int c = 0; c < t.channels; ++c)
        for (int h = 0; h < t.height; ++h)
            for (int w = 0; w < t.width; ++w)
                out.at(c, h, w) = t.at(c, h, w);
    return out;
}

Tensor matmul_reference(const DenseMatrix& w, const Tensor& act,
                        std::span<const float> bias, const Activation& fused) {
    if (act.layout != Layout::CHW) throw LayoutError("matmul_reference: activation must be CHW");
    if (w.cols != act.channels)
        throw ShapeError("matmul_reference: w.cols " + std::to_string(w.cols) +
                         " != activation channels " + std::to_string(act.channels));
    if (!bias.empty() && static_cast<int>(bias.size()) != w.rows)
        throw ShapeError("matmul_reference: bias length != w.rows");

    const int s_count = act.spatial();
    Tensor out(w.rows, act.height, act.width, Layout::CHW);
    for (int c = 0; c < w.rows; ++c) {
        float* dst = out.data.data() + static_cast<std::size_t>(c) * s_count;
        const float b = bias.empty() ? 0.0f : bias[c];
        for (int s = 0; s < s_count; ++s) dst[s] = b;
        for (int k = 0; k < w.cols; ++k) {
            const float wv = w(c, k);
            const float* src = act.data.data() + static_cast<std::size_t>(k) * s_count;
            for (int s = 0; s < s_count; ++s) dst[s] += wv * src[s];
        }
        if (fused.kind != Activation::Kind::None)
            for (int s = 0; s < s_count; ++s) dst[s] = fused.apply(dst[s]);
    }
    return out;
}

Tensor conv2d_reference(const Tensor& input, const ConvWeights& w, int stride,
                        std::span<const float> bias, const Activation& fused) {
    if (w.cin != input.channels)
        throw ShapeError("conv2d_reference: weight cin " + std::to_string(w.cin) +
                         " != input channels " + std::to_string(input.channels));
    if (!bias.empty() && static_cast<int>(bias.size()) != w.cout)
        throw ShapeError("conv2d_reference: bias length != cout");
    if (stride < 1) throw ShapeError("conv2d_reference: stride must be >= 1");

    const SamePad ph = same_pad(input.height, w.kh, stride);
    const SamePad pw = same_pad(input.width, w.kw, stride);
    Tensor out(w.cout, ph.out, pw.out, Layout::CHW);

    for (int co = 0; co < w.cout; ++co) {
        for (int oy = 0; oy < ph.out; ++oy) {
            for (int ox = 0; ox < pw.out; ++ox) {
                float acc = bias.empty() ? 0.0f : bias[co];
                for (int ci = 0; ci < w.cin; ++ci) {
                    for (int ky = 0; ky < w.kh; ++ky) {
                        const int iy = oy * stride - ph.before + ky;
                        if (iy < 0 || iy >= input.height) continue;
                        for (int kx = 0; kx < w.kw; ++kx) {
                            const int ix = ox * stride - pw.before + kx;
                            if (ix < 0 || ix >= input.width) continue;
                            acc += w.at(co, ci, ky, kx) * input.at(ci, iy, ix);
                        }
                    }
                }
                out.at(co, oy, ox) = fused.apply(acc);
            }
        }
    }
    return out;
}

}  // namespace spcv
