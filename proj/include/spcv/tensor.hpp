#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace spcv {

/// Dimension or size mismatch between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Operand has the wrong memory layout for the operation.
class LayoutError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Layout : std::uint8_t {
    CHW,  // all spatial values of one channel contiguous
    HWC,  // all channels of one pixel contiguous
};

/// Dense activation tensor with an explicit memory layout. Batch size is
/// always 1; the tensor owns its storage.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    Layout layout = Layout::CHW;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, int h, int w, Layout l)
        : channels(c), height(h), width(w), layout(l),
          data(static_cast<std::size_t>(c) * h * w, 0.0f) {
        if (c < 1 || h < 1 || w < 1) throw ShapeError("tensor dims must be >= 1");
    }

    int spatial() const { return height * width; }
    std::size_t size() const { return data.size(); }

    std::size_t index(int c, int h, int w) const {
        return layout == Layout::CHW
                   ? static_cast<std::size_t>(c) * height * width + static_cast<std::size_t>(h) * width + w
                   : (static_cast<std::size_t>(h) * width + w) * channels + c;
    }
    float at(int c, int h, int w) const { return data[index(c, h, w)]; }
    float& at(int c, int h, int w) { return data[index(c, h, w)]; }
};

/// Row-major dense matrix of 32-bit reals (weight matrices).
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    DenseMatrix() = default;
    DenseMatrix(int r, int c)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {
        if (r < 0 || c < 0) throw ShapeError("matrix dims must be >= 0");
    }

    float operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    float& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// Activation fused into a kernel's output write. Clamp(0, 6) is the ReLU6
/// used throughout the MobileNet family.
struct Activation {
    enum class Kind : std::uint8_t { None, Clamp } kind = Kind::None;
    float lo = 0.0f;
    float hi = 0.0f;

    static Activation none() { return {}; }
    static Activation clamp(float lo, float hi) {
        if (!(lo < hi)) throw std::invalid_argument("clamp requires lo < hi");
        Activation a;
        a.kind = Kind::Clamp;
        a.lo = lo;
        a.hi = hi;
        return a;
    }
    static Activation relu6() { return clamp(0.0f, 6.0f); }

    float apply(float x) const {
        if (kind == Kind::Clamp) {
            if (x < lo) return lo;
            if (x > hi) return hi;
        }
        return x;
    }
};

/// 4-D convolution weights in [cout][cin][kh][kw] order.
struct ConvWeights {
    int cout = 0;
    int cin = 0;
    int kh = 0;
    int kw = 0;
    std::vector<float> data;

    ConvWeights() = default;
    ConvWeights(int co, int ci, int h, int w)
        : cout(co), cin(ci), kh(h), kw(w),
          data(static_cast<std::size_t>(co) * ci * h * w, 0.0f) {}

    std::size_t index(int co, int ci, int y, int x) const {
        return ((static_cast<std::size_t>(co) * cin + ci) * kh + y) * kw + x;
    }
    float at(int co, int ci, int y, int x) const { return data[index(co, ci, y, x)]; }
    float& at(int co, int ci, int y, int x) { return data[index(co, ci, y, x)]; }
};

/// SAME padding bookkeeping. Output extent is ceil(in / stride); when the
/// total padding is odd the excess goes to the bottom/right side.
struct SamePad {
    int out = 0;
    int before = 0;
};
SamePad same_pad(int in, int kernel, int stride);

/// Layout conversions. Bit-exact; only the element order changes.
Tensor hwc_to_chw(const Tensor& t);
Tensor chw_to_hwc(const Tensor& t);

/// Reference pointwise op: out[c, s] = act(bias[c] + sum_k w(c, k) * in[k, s]),
/// terms accumulated in ascending k. The slow oracle for the sparse kernels.
Tensor matmul_reference(const DenseMatrix& w, const Tensor& act,
                        std::span<const float> bias, const Activation& fused = {});

/// Reference direct convolution, SAME padding, output in CHW. Accepts either
/// input layout. Accumulation order per output element: ascending (ci, ky, kx),
/// so a 1x1 kernel reproduces matmul_reference bit-exactly.
Tensor conv2d_reference(const Tensor& input, const ConvWeights& w, int stride,
                        std::span<const float> bias, const Activation& fused = {});

}  // namespace spcv
