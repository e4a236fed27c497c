#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>

#include "doctest.h"
#include "spcv/kernels.hpp"

using namespace spcv;

namespace {

DenseMatrix random_matrix(int rows, int cols, std::mt19937& rng) {
    DenseMatrix m(rows, cols);
    for (float& v : m.data) v = static_cast<float>(rng() % 2000) / 999.0f - 1.0f;
    return m;
}

Tensor random_chw(int c, int h, int w, std::mt19937& rng) {
    Tensor t(c, h, w, Layout::CHW);
    for (float& v : t.data) v = static_cast<float>(rng() % 1000) / 999.0f;
    return t;
}

std::vector<float> random_bias(int n, std::mt19937& rng) {
    std::vector<float> b(static_cast<std::size_t>(n));
    for (float& v : b) v = static_cast<float>(rng() % 200) / 99.0f - 1.0f;
    return b;
}

double max_dev(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double dev = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        dev = std::max(dev, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return dev;
}

struct MaskedCase {
    DenseMatrix dense;
    BcsrMatrix bcsr;
};

MaskedCase masked_case(int rows, int cols, double sparsity, int block_h, std::mt19937& rng) {
    MaskedCase c;
    c.dense = random_matrix(rows, cols, rng);
    const SparsityMask mask = generate_mask(rows, cols, sparsity, BlockConfig(block_h, 1), rng());
    apply_mask(c.dense, mask);
    c.bcsr = encode_bcsr(c.dense, block_h);
    return c;
}

}  // namespace

TEST_CASE("spmm with an identity weight matrix returns the input") {
    DenseMatrix eye(8, 8);
    for (int i = 0; i < 8; ++i) eye(i, i) = 1.0f;
    std::mt19937 rng(3);
    const Tensor act = random_chw(8, 5, 7, rng);
    const std::vector<float> bias(8, 0.0f);
    for (int block_h : {1, 2, 4}) {
        const BcsrMatrix m = encode_bcsr(eye, block_h);
        MicrokernelConfig cfg;
        cfg.n = block_h;
        const Tensor out = spmm(m, act, bias, Activation::none(), cfg);
        CHECK(out.data == act.data);
    }
}

TEST_CASE("spmm hand case: one block, bias and clamp") {
    // Two output channels in one 2x1 block at input channel 1.
    DenseMatrix w(2, 3);
    w(0, 1) = 2.0f;
    w(1, 1) = -3.0f;
    const BcsrMatrix m = encode_bcsr(w, 2);
    REQUIRE(m.nnz_blocks() == 1);

    Tensor act(3, 1, 2, Layout::CHW);
    act.data = {9.0f, 9.0f,   // channel 0, ignored
                1.0f, 4.0f,   // channel 1
                9.0f, 9.0f};  // channel 2, ignored
    const std::vector<float> bias = {1.0f, -1.0f};

    MicrokernelConfig cfg;
    cfg.n = 2;
    const Tensor out = spmm(m, act, bias, Activation::relu6(), cfg);
    // Channel 0: clamp(1 + 2*{1,4}) = {3, 6(from 9)}; channel 1: clamp(-1 - 3*{1,4}) = {0, 0}.
    CHECK(out.data == std::vector<float>{3.0f, 6.0f, 0.0f, 0.0f});
}

TEST_CASE("every variant matches the dense reference on masked weights") {
    std::mt19937 rng(17);
    for (int m_width : {4, 8, 16}) {
        for (int block_h : {1, 2, 4}) {
            const MaskedCase c = masked_case(64, 64, 0.9, block_h, rng);
            const Tensor act = random_chw(64, 14, 14, rng);
            const std::vector<float> bias = random_bias(64, rng);
            const Tensor want = matmul_reference(c.dense, act, bias, Activation::relu6());
            for (Tier tier : {Tier::Scalar, Tier::Auto}) {
                MicrokernelConfig cfg;
                cfg.m = m_width;
                cfg.n = block_h;
                cfg.tier = tier;
                const Tensor got = spmm(c.bcsr, act, bias, Activation::relu6(), cfg);
                REQUIRE(max_dev(got.data, want.data) <= 1e-5);
            }
        }
    }
}

TEST_CASE("strip remainders: spatial extents that are not multiples of any strip width") {
    std::mt19937 rng(19);
    for (int spatial : {1, 3, 5, 7, 13, 197}) {
        const MaskedCase c = masked_case(16, 12, 0.7, 2, rng);
        const Tensor act = random_chw(12, 1, spatial, rng);
        const std::vector<float> bias = random_bias(16, rng);
        const Tensor want = matmul_reference(c.dense, act, bias);
        for (int m_width : {4, 8, 16}) {
            MicrokernelConfig cfg;
            cfg.m = m_width;
            cfg.n = 2;
            const Tensor got = spmm(c.bcsr, act, bias, Activation::none(), cfg);
            CHECK(got.data == want.data);
        }
    }
}

TEST_CASE("all variants and tiers agree bit-for-bit") {
    std::mt19937 rng(23);
    const MaskedCase c = masked_case(32, 24, 0.8, 4, rng);
    const Tensor act = random_chw(24, 3, 13, rng);
    const std::vector<float> bias = random_bias(32, rng);

    std::vector<float> first;
    for (Tier tier : {Tier::Scalar, Tier::Vector, Tier::Auto}) {
        if (tier == Tier::Vector && !vector_tier_available()) continue;
        for (int m_width : {4, 8, 16}) {
            MicrokernelConfig cfg;
            cfg.m = m_width;
            cfg.n = 4;
            cfg.tier = tier;
            const Tensor out = spmm(c.bcsr, act, bias, Activation::relu6(), cfg);
            if (first.empty())
                first = out.data;
            else
                CHECK(out.data == first);
        }
    }
}

TEST_CASE("prefetch toggle never changes results") {
    std::mt19937 rng(29);
    const MaskedCase c = masked_case(24, 32, 0.75, 2, rng);
    const Tensor act = random_chw(32, 9, 9, rng);
    const std::vector<float> bias = random_bias(24, rng);
    MicrokernelConfig on;
    on.n = 2;
    on.prefetch = true;
    MicrokernelConfig off = on;
    off.prefetch = false;
    CHECK(spmm(c.bcsr, act, bias, Activation::none(), on).data ==
          spmm(c.bcsr, act, bias, Activation::none(), off).data);
}

TEST_CASE("fused clamp equals unfused then clamped") {
    std::mt19937 rng(31);
    const MaskedCase c = masked_case(16, 16, 0.6, 1, rng);
    const Tensor act = random_chw(16, 4, 5, rng);
    const std::vector<float> bias = random_bias(16, rng);
    MicrokernelConfig cfg;
    const Tensor fused = spmm(c.bcsr, act, bias, Activation::relu6(), cfg);
    Tensor plain = spmm(c.bcsr, act, bias, Activation::none(), cfg);
    for (float& v : plain.data) v = Activation::relu6().apply(v);
    CHECK(fused.data == plain.data);
}

TEST_CASE("spmm validates its inputs") {
    std::mt19937 rng(37);
    const MaskedCase c = masked_case(8, 8, 0.5, 2, rng);
    const Tensor act = random_chw(8, 2, 2, rng);
    const std::vector<float> bias(8, 0.0f);

    SUBCASE("cfg.n must match the matrix block height") {
        MicrokernelConfig cfg;
        cfg.n = 4;
        CHECK_THROWS_AS((void)spmm(c.bcsr, act, bias, Activation::none(), cfg), FormatError);
    }
    SUBCASE("channel mismatch") {
        const Tensor bad = random_chw(9, 2, 2, rng);
        MicrokernelConfig cfg;
        cfg.n = 2;
        CHECK_THROWS_AS((void)spmm(c.bcsr, bad, bias, Activation::none(), cfg), ShapeError);
    }
    SUBCASE("HWC activations are rejected") {
        Tensor hwc(8, 2, 2, Layout::HWC);
        MicrokernelConfig cfg;
        cfg.n = 2;
        CHECK_THROWS_AS((void)spmm(c.bcsr, hwc, bias, Activation::none(), cfg), LayoutError);
    }
    SUBCASE("strip width must be 4, 8 or 16") {
        MicrokernelConfig cfg;
        cfg.m = 5;
        cfg.n = 2;
        CHECK_THROWS_AS((void)spmm(c.bcsr, act, bias, Activation::none(), cfg),
                        std::invalid_argument);
    }
    SUBCASE("bias length") {
        const std::vector<float> short_bias(3, 0.0f);
        MicrokernelConfig cfg;
        cfg.n = 2;
        CHECK_THROWS_AS((void)spmm(c.bcsr, act, short_bias, Activation::none(), cfg),
                        ShapeError);
    }
}

TEST_CASE("dense_gemm_baseline matches matmul_reference bit-exactly") {
    std::mt19937 rng(41);
    for (int spatial : {4, 31, 196}) {
        const DenseMatrix w = random_matrix(24, 16, rng);
        const Tensor act = random_chw(16, 1, spatial, rng);
        const std::vector<float> bias = random_bias(24, rng);
        const Tensor want = matmul_reference(w, act, bias, Activation::relu6());
        for (Tier tier : {Tier::Scalar, Tier::Auto}) {
            MicrokernelConfig cfg;
            cfg.tier = tier;
            const Tensor got = dense_gemm_baseline(w, act, bias, Activation::relu6(), cfg);
            CHECK(got.data == want.data);
        }
    }
}

TEST_CASE("a fully dense matrix through spmm equals the dense baseline") {
    std::mt19937 rng(43);
    const DenseMatrix w = random_matrix(16, 16, rng);
    const BcsrMatrix m = encode_bcsr(w, 1);
    const Tensor act = random_chw(16, 6, 6, rng);
    const std::vector<float> bias = random_bias(16, rng);
    CHECK(spmm(m, act, bias).data == dense_gemm_baseline(w, act, bias).data);
}

TEST_CASE("depthwise identity and zero filters") {
    std::mt19937 rng(47);
    const Tensor act = random_chw(6, 9, 11, rng);
    std::vector<float> zero_bias(6, 0.0f);

    DepthwiseWeights id(6);
    for (int c = 0; c < 6; ++c) id.at(c, 1, 1) = 1.0f;  // center tap
    CHECK(depthwise_conv_chw(act, id, 1, zero_bias).data == act.data);

    DepthwiseWeights zero(6);
    std::vector<float> bias = random_bias(6, rng);
    const Tensor out = depthwise_conv_chw(act, zero, 1, bias);
    for (int c = 0; c < 6; ++c)
        for (int s = 0; s < out.spatial(); ++s)
            CHECK(out.data[static_cast<std::size_t>(c) * out.spatial() + s] ==
                  bias[static_cast<std::size_t>(c)]);
}

TEST_CASE("depthwise matches the per-channel reference convolution") {
    std::mt19937 rng(53);
    for (int stride : {1, 2}) {
        for (auto [h, w] : {std::pair{8, 8}, std::pair{7, 9}, std::pair{1, 5}}) {
            const int channels = 5;
            const Tensor act = random_chw(channels, h, w, rng);
            DepthwiseWeights dw(channels);
            for (float& v : dw.data) v = static_cast<float>(rng() % 1000) / 999.0f - 0.5f;
            const std::vector<float> bias = random_bias(channels, rng);

            const Tensor got = depthwise_conv_chw(act, dw, stride, bias, Activation::relu6());

            // Channel-by-channel 3x3 reference.
            for (int c = 0; c < channels; ++c) {
                Tensor one(1, h, w, Layout::CHW);
                std::copy_n(act.data.begin() + static_cast<std::ptrdiff_t>(c) * act.spatial(),
                            act.spatial(), one.data.begin());
                ConvWeights cw(1, 1, 3, 3);
                std::copy_n(dw.data.begin() + static_cast<std::ptrdiff_t>(c) * 9, 9,
                            cw.data.begin());
                const std::vector<float> cb = {bias[static_cast<std::size_t>(c)]};
                const Tensor want = conv2d_reference(one, cw, stride, cb, Activation::relu6());
                for (int s = 0; s < want.spatial(); ++s)
                    REQUIRE(got.data[static_cast<std::size_t>(c) * want.spatial() + s] ==
                            want.data[static_cast<std::size_t>(s)]);
            }
        }
    }
}

TEST_CASE("entry conv zero weights yield the bias; center tap reads the strided input") {
    std::mt19937 rng(59);
    Tensor img(3, 4, 4, Layout::HWC);
    for (float& v : img.data) v = static_cast<float>(rng() % 100);

    ConvWeights zero(2, 3, 3, 3);
    const std::vector<float> bias = {0.5f, -1.5f};
    const Tensor b = entry_conv_hwc_to_chw(img, zero, 2, bias);
    CHECK(b.layout == Layout::CHW);
    for (int s = 0; s < b.spatial(); ++s) {
        CHECK(b.data[static_cast<std::size_t>(s)] == 0.5f);
        CHECK(b.data[static_cast<std::size_t>(b.spatial() + s)] == -1.5f);
    }

    ConvWeights center(3, 3, 3, 3);
    for (int c = 0; c < 3; ++c) center.at(c, c, 1, 1) = 1.0f;
    const std::vector<float> zb(3, 0.0f);
    const Tensor out = entry_conv_hwc_to_chw(img, center, 2, zb);
    // SAME pad on 4->2 at stride 2 puts the center tap at input (2y+1, 2x+1).
    for (int c = 0; c < 3; ++c)
        for (int oy = 0; oy < 2; ++oy)
            for (int ox = 0; ox < 2; ++ox)
                CHECK(out.at(c, oy, ox) == img.at(c, 2 * oy + 1, 2 * ox + 1));
}

TEST_CASE("entry conv matches the reference on an image-sized input") {
    std::mt19937 rng(61);
    Tensor img(3, 112, 112, Layout::HWC);
    for (float& v : img.data) v = static_cast<float>(rng() % 1000) / 999.0f;
    ConvWeights w(16, 3, 3, 3);
    for (float& v : w.data) v = static_cast<float>(rng() % 1000) / 999.0f - 0.5f;
    const std::vector<float> bias = random_bias(16, rng);

    const Tensor got = entry_conv_hwc_to_chw(img, w, 2, bias, Activation::relu6());
    const Tensor want = conv2d_reference(img, w, 2, bias, Activation::relu6());
    REQUIRE(max_dev(got.data, want.data) <= 1e-4);
}

TEST_CASE("global average pool") {
    SUBCASE("constant channels pool to the constant") {
        Tensor t(3, 6, 6, Layout::CHW);
        for (int c = 0; c < 3; ++c)
            for (int s = 0; s < 36; ++s)
                t.data[static_cast<std::size_t>(c) * 36 + s] = static_cast<float>(c) + 1.0f;
        const std::vector<float> mean = global_avg_pool_chw(t);
        CHECK(mean == std::vector<float>{1.0f, 2.0f, 3.0f});
    }
    SUBCASE("single pixel passes through") {
        Tensor t(4, 1, 1, Layout::CHW);
        t.data = {1.0f, -2.0f, 3.5f, 0.0f};
        CHECK(global_avg_pool_chw(t) == t.data);
    }
    SUBCASE("random input against a double-precision oracle") {
        std::mt19937 rng(67);
        Tensor t(5, 13, 7, Layout::CHW);
        for (float& v : t.data) v = static_cast<float>(rng() % 1000) / 999.0f - 0.5f;
        const std::vector<float> got = global_avg_pool_chw(t);
        for (int c = 0; c < 5; ++c) {
            double sum = 0.0;
            for (int s = 0; s < t.spatial(); ++s)
                sum += t.data[static_cast<std::size_t>(c) * t.spatial() + s];
            CHECK(std::abs(got[static_cast<std::size_t>(c)] - sum / t.spatial()) <= 1e-6);
        }
    }
}

TEST_CASE("variant and tier name parsing") {
    CHECK(parse_variant("16x2") == std::pair{16, 2});
    CHECK(parse_variant("4x1") == std::pair{4, 1});
    CHECK(variant_name(8, 4) == "8x4");
    for (const char* bad : {"", "16", "x2", "16x", "16x3", "5x2", "16x2x1", "a.b"})
        CHECK_THROWS_AS((void)parse_variant(bad), std::invalid_argument);

    CHECK(parse_tier("scalar") == Tier::Scalar);
    CHECK(parse_tier("vector") == Tier::Vector);
    CHECK(parse_tier("auto") == Tier::Auto);
    CHECK_THROWS_AS((void)parse_tier("turbo"), std::invalid_argument);
}

TEST_CASE("tier resolution honors the environment override") {
    const Tier base = resolve_tier(Tier::Auto);
    if (vector_tier_available()) CHECK(base == Tier::Vector);

    setenv("SPCV_FORCE_SCALAR", "1", 1);
    CHECK(resolve_tier(Tier::Auto) == Tier::Scalar);
    CHECK(resolve_tier(Tier::Vector) == Tier::Scalar);
    setenv("SPCV_FORCE_SCALAR", "0", 1);
    CHECK(resolve_tier(Tier::Auto) == base);
    unsetenv("SPCV_FORCE_SCALAR");

    CHECK(default_strip_width(Tier::Scalar) == 8);
    if (vector_tier_available()) CHECK(default_strip_width(Tier::Vector) == 16);
}
