#include "spcv/netdef.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

namespace spcv {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::EntryConv: return "entry_conv";
        case LayerKind::Pointwise: return "pointwise";
        case LayerKind::Depthwise: return "depthwise";
        case LayerKind::GlobalPool: return "global_pool";
        case LayerKind::FullyConnected: return "fully_connected";
    }
    return "?";
}

int round_channels(int base, double width) {
    const int c = static_cast<int>(std::llround(base * width / 8.0)) * 8;
    return c < 8 ? 8 : c;
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    if (layers.front().kind != LayerKind::EntryConv)
        throw ShapeError("network must start with the entry convolution");
    if (layers.back().kind != LayerKind::FullyConnected)
        throw ShapeError("network must end with the classifier");
    if (layers.size() < 3 || layers[layers.size() - 2].kind != LayerKind::GlobalPool)
        throw ShapeError("classifier must follow global pooling");

    int c = input_c, h = input_h, w = input_w;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& L = layers[i];
        if (L.cin != c || L.in_h != h || L.in_w != w)
            throw ShapeError("layer " + L.name + ": input " + std::to_string(L.cin) + "x" +
                             std::to_string(L.in_h) + "x" + std::to_string(L.in_w) +
                             " does not chain from previous output");
        if (L.kind == LayerKind::Depthwise && L.cout != L.cin)
            throw ShapeError("layer " + L.name + ": depthwise must preserve channels");
        if (L.kind == LayerKind::GlobalPool &&
            (L.cout != L.cin || L.out_h != 1 || L.out_w != 1))
            throw ShapeError("layer " + L.name + ": pooling must emit cin x 1 x 1");
        if (L.sparse && !(L.sparsity > 0.0 && L.sparsity < 1.0))
            throw ShapeError("layer " + L.name + ": sparse layer needs sparsity in (0, 1)");
        if (!L.sparse && L.sparsity != 0.0)
            throw ShapeError("layer " + L.name + ": dense layer must have sparsity 0");
        if (L.block_h != 1 && L.block_h != 2 && L.block_h != 4)
            throw ShapeError("layer " + L.name + ": block height must be 1, 2 or 4");
        if (L.residual_src >= 0) {
            if (static_cast<std::size_t>(L.residual_src) >= i)
                throw ShapeError("layer " + L.name + ": residual source must come earlier");
            const LayerSpec& src = layers[static_cast<std::size_t>(L.residual_src)];
            if (src.cout != L.cout || src.out_h != L.out_h || src.out_w != L.out_w)
                throw ShapeError("layer " + L.name + ": residual source shape mismatch");
        }
        c = L.cout;
        h = L.out_h;
        w = L.out_w;
    }
    if (layers.back().cout != num_classes)
        throw ShapeError("classifier output does not match num_classes");
}

namespace {

// Incremental layer-chain builder shared by the architecture functions.
struct Chain {
    NetworkSpec net;
    int c = 0, h = 0, w = 0;
    int pw_index = 0;  // 1-based numbering of 1x1 layers for the plan

    explicit Chain(std::string name, double width) {
        net.name = std::move(name);
        net.width_multiplier = width;
        c = net.input_c;
        h = net.input_h;
        w = net.input_w;
    }

    void entry(int cout, int stride) {
        LayerSpec L;
        L.kind = LayerKind::EntryConv;
        L.name = "entry";
        L.cin = c;
        L.cout = cout;
        L.stride = stride;
        L.in_h = h;
        L.in_w = w;
        L.out_h = same_pad(h, 3, stride).out;
        L.out_w = same_pad(w, 3, stride).out;
        L.act = Activation::relu6();
        net.layers.push_back(std::move(L));
        c = cout;
        h = net.layers.back().out_h;
        w = net.layers.back().out_w;
    }

    void depthwise(const std::string& name, int stride) {
        LayerSpec L;
        L.kind = LayerKind::Depthwise;
        L.name = name;
        L.cin = L.cout = c;
        L.stride = stride;
        L.in_h = h;
        L.in_w = w;
        L.out_h = same_pad(h, 3, stride).out;
        L.out_w = same_pad(w, 3, stride).out;
        L.act = Activation::relu6();
        net.layers.push_back(std::move(L));
        h = net.layers.back().out_h;
        w = net.layers.back().out_w;
    }

    int pointwise(const std::string& name, int cout, const Activation& act,
                  const SparsityPlan& plan) {
        ++pw_index;
        LayerSpec L;
        L.kind = LayerKind::Pointwise;
        L.name = name;
        L.cin = c;
        L.cout = cout;
        L.in_h = L.out_h = h;
        L.in_w = L.out_w = w;
        L.act = act;
        if (plan.sparsity > 0.0) {
            L.sparse = true;
            L.sparsity = plan.sparsity;
            L.block_h = pw_index >= plan.block_start_layer ? plan.block_h_after : 1;
        }
        net.layers.push_back(std::move(L));
        c = cout;
        return static_cast<int>(net.layers.size()) - 1;
    }

    void pool() {
        LayerSpec L;
        L.kind = LayerKind::GlobalPool;
        L.name = "pool";
        L.cin = L.cout = c;
        L.in_h = h;
        L.in_w = w;
        L.out_h = L.out_w = 1;
        net.layers.push_back(std::move(L));
        h = w = 1;
    }

    void classifier(int classes) {
        LayerSpec L;
        L.kind = LayerKind::FullyConnected;
        L.name = "fc";
        L.cin = c;
        L.cout = classes;
        L.in_h = L.in_w = L.out_h = L.out_w = 1;
        net.layers.push_back(std::move(L));
        c = classes;
    }
};

struct StageDef {
    int t, c, n, s;  // expansion factor, output channels, repeats, first stride
};

NetworkSpec build_mbv2_like(const std::string& name, double width, int entry_base,
                            const std::vector<StageDef>& stages, int head_base,
                            bool head_scales, const SparsityPlan& plan) {
    Chain chain(name, width);
    chain.entry(round_channels(entry_base, width), 2);
    int bneck = 0;
    for (const StageDef& st : stages) {
        const int cout = round_channels(st.c, width);
        for (int i = 0; i < st.n; ++i) {
            ++bneck;
            const int stride = i == 0 ? st.s : 1;
            const int cin = chain.c;
            const int expanded = cin * st.t;
            const int input_layer = static_cast<int>(chain.net.layers.size()) - 1;
            const std::string tag = "b" + std::to_string(bneck);
            if (st.t != 1)
                chain.pointwise(tag + "_expand", expanded, Activation::relu6(), plan);
            chain.depthwise(tag + "_dw", stride);
            const int proj = chain.pointwise(tag + "_project", cout, Activation::none(), plan);
            if (stride == 1 && cin == cout)
                chain.net.layers[static_cast<std::size_t>(proj)].residual_src = input_layer;
        }
    }
    const int head = (width <= 1.0 || !head_scales) ? head_base : round_channels(head_base, width);
    chain.pointwise("head", head, Activation::relu6(), plan);
    chain.pool();
    chain.classifier(chain.net.num_classes);
    chain.net.plan = plan;
    chain.net.validate();
    return chain.net;
}

}  // namespace

NetworkSpec build_mbv1(double width, const SparsityPlan& plan) {
    Chain chain("mbv1", width);
    chain.entry(round_channels(32, width), 2);
    static constexpr int kBase[13] = {64, 128, 128, 256, 256, 512, 512,
                                      512, 512, 512, 512, 1024, 1024};
    for (int i = 1; i <= 13; ++i) {
        const bool strided = i == 2 || i == 4 || i == 6 || i == 12;
        chain.depthwise("dw" + std::to_string(i), strided ? 2 : 1);
        chain.pointwise("pw" + std::to_string(i), round_channels(kBase[i - 1], width),
                        Activation::relu6(), plan);
    }
    chain.pool();
    chain.classifier(chain.net.num_classes);
    chain.net.plan = plan;
    chain.net.validate();
    return chain.net;
}

NetworkSpec build_mbv2(double width, const SparsityPlan& plan) {
    const std::vector<StageDef> stages = {{1, 16, 1, 1},  {6, 24, 2, 2}, {6, 32, 3, 2},
                                          {6, 64, 4, 2},  {6, 96, 3, 1}, {6, 160, 3, 2},
                                          {6, 320, 1, 1}};
    return build_mbv2_like("mbv2", width, 32, stages, 1280, true, plan);
}

NetworkSpec build_cache_aware_mbv2(const SparsityPlan& plan) {
    const std::vector<StageDef> stages = {{1, 16, 1, 1},  {8, 24, 2, 2}, {8, 32, 4, 2},
                                          {4, 64, 6, 2},  {3, 96, 6, 1}, {2, 160, 6, 2},
                                          {2, 320, 1, 1}};
    return build_mbv2_like("ca-mbv2", 1.0, 16, stages, 1280, false, plan);
}

NetworkSpec build_network(const std::string& arch, double width, const SparsityPlan& plan) {
    if (arch == "mbv1") return build_mbv1(width, plan);
    if (arch == "mbv2") return build_mbv2(width, plan);
    if (arch == "ca-mbv2") return build_cache_aware_mbv2(plan);
    throw std::invalid_argument("unknown architecture '" + arch +
                                "' (expected mbv1|mbv2|ca-mbv2)");
}

SparsityPlan default_plan(const std::string& arch, double sparsity) {
    SparsityPlan p;
    p.sparsity = sparsity;
    if (arch == "mbv1") {
        p.block_start_layer = 12;
        p.block_h_after = 4;
    } else if (arch == "mbv2") {
        p.block_start_layer = 11;
        p.block_h_after = 2;
    } else if (arch == "ca-mbv2") {
        p.block_start_layer = 1;
        p.block_h_after = 1;
    } else {
        throw std::invalid_argument("unknown architecture '" + arch +
                                    "' (expected mbv1|mbv2|ca-mbv2)");
    }
    return p;
}

// ------------------------------------------------------------------ counting

namespace {

std::int64_t dense_layer_flops(const LayerSpec& L) {
    const std::int64_t S = static_cast<std::int64_t>(L.out_h) * L.out_w;
    switch (L.kind) {
        case LayerKind::EntryConv:
            return 2 * S * L.cout * 9 * L.cin;
        case LayerKind::Pointwise:
            return 2 * S * static_cast<std::int64_t>(L.cin) * L.cout;
        case LayerKind::Depthwise:
            // One FLOP per tap: depthwise taps count as fused
            // multiply-accumulates, matching the customary totals reported
            // for this model family.
            return S * static_cast<std::int64_t>(L.cout) * 9;
        case LayerKind::GlobalPool:
            // Adds only, one per pooled input element.
            return static_cast<std::int64_t>(L.cin) * L.in_h * L.in_w;
        case LayerKind::FullyConnected:
            return 2 * static_cast<std::int64_t>(L.cin) * L.cout;
    }
    return 0;
}

}  // namespace

CountResult count_flops(const NetworkSpec& net) {
    CountResult r;
    for (const LayerSpec& L : net.layers) {
        const std::int64_t d = dense_layer_flops(L);
        r.dense += d;
        r.sparse += L.sparse ? std::llround(static_cast<double>(d) * (1.0 - L.sparsity)) : d;
    }
    return r;
}

CountResult count_params(const NetworkSpec& net) {
    CountResult r;
    for (const LayerSpec& L : net.layers) {
        std::int64_t weights = 0;
        switch (L.kind) {
            case LayerKind::EntryConv: weights = 9LL * L.cin * L.cout; break;
            case LayerKind::Pointwise: weights = static_cast<std::int64_t>(L.cin) * L.cout; break;
            case LayerKind::Depthwise: weights = 9LL * L.cout; break;
            case LayerKind::GlobalPool: continue;
            case LayerKind::FullyConnected:
                weights = static_cast<std::int64_t>(L.cin) * L.cout;
                break;
        }
        r.dense += weights + L.cout;
        if (L.sparse)
            r.sparse += std::llround(static_cast<double>(weights) * (1.0 - L.sparsity)) +
                        bitmask_overhead_params(L.cout, L.cin) + L.cout;
        else
            r.sparse += weights + L.cout;
    }
    return r;
}

double depthwise_flop_share(const NetworkSpec& net) {
    std::int64_t dw = 0, total = 0;
    for (const LayerSpec& L : net.layers) {
        const std::int64_t d = dense_layer_flops(L);
        total += d;
        if (L.kind == LayerKind::Depthwise) dw += d;
    }
    return total == 0 ? 0.0 : static_cast<double>(dw) / static_cast<double>(total);
}

// ------------------------------------------------------------------- weights

namespace {

// Portable uniform draw in [0, 1): fixed 24-bit mantissa path so results
// are identical across standard libraries.
double unit_draw(std::mt19937& rng) {
    return static_cast<double>(rng() >> 8) * (1.0 / 16777216.0);
}

float sym_draw(std::mt19937& rng, double limit) {
    return static_cast<float>((2.0 * unit_draw(rng) - 1.0) * limit);
}

void fill_he_uniform(std::vector<float>& v, std::mt19937& rng, int fan_in) {
    const double limit = std::sqrt(6.0 / fan_in);
    for (float& x : v) x = sym_draw(rng, limit);
}

void fill_bias(std::vector<float>& b, std::mt19937& rng) {
    for (float& x : b) x = sym_draw(rng, 0.1);
}

}  // namespace

WeightSet instantiate_weights(const NetworkSpec& net, std::uint32_t seed) {
    net.validate();
    std::mt19937 rng(seed);
    WeightSet ws;
    ws.layers.reserve(net.layers.size());
    for (const LayerSpec& L : net.layers) {
        LayerWeights w;
        switch (L.kind) {
            case LayerKind::EntryConv:
                w.conv = ConvWeights(L.cout, L.cin, 3, 3);
                fill_he_uniform(w.conv.data, rng, L.cin * 9);
                w.bias.resize(static_cast<std::size_t>(L.cout));
                fill_bias(w.bias, rng);
                break;
            case LayerKind::Depthwise:
                w.dw = DepthwiseWeights(L.cout);
                fill_he_uniform(w.dw.data, rng, 9);
                w.bias.resize(static_cast<std::size_t>(L.cout));
                fill_bias(w.bias, rng);
                break;
            case LayerKind::GlobalPool:
                break;
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected: {
                DenseMatrix d(L.cout, L.cin);
                fill_he_uniform(d.data, rng, L.cin);
                w.bias.resize(static_cast<std::size_t>(L.cout));
                fill_bias(w.bias, rng);
                if (L.sparse) {
                    // Pad rows up to the block height; pad rows stay zero.
                    const int rows_p = (L.cout + L.block_h - 1) / L.block_h * L.block_h;
                    DenseMatrix p(rows_p, L.cin);
                    std::copy(d.data.begin(), d.data.end(), p.data.begin());
                    const std::uint32_t mask_seed = rng();
                    SparsityMask mask = generate_mask(rows_p, L.cin, L.sparsity,
                                                      BlockConfig(L.block_h, 1), mask_seed);
                    apply_mask(p, mask);
                    w.sparse = encode_bcsr(p, L.block_h);
                    w.is_sparse = true;
                } else {
                    w.dense = std::move(d);
                }
                break;
            }
        }
        ws.layers.push_back(std::move(w));
    }
    return ws;
}

DenseMatrix dense_weights_of(const LayerSpec& spec, const LayerWeights& w) {
    if (!w.is_sparse) return w.dense;
    DenseMatrix full = decode_bcsr(w.sparse);
    if (full.rows == spec.cout) return full;
    DenseMatrix out(spec.cout, full.cols);
    std::copy(full.data.begin(),
              full.data.begin() + static_cast<std::ptrdiff_t>(out.data.size()),
              out.data.begin());
    return out;
}

WeightSet densify(const NetworkSpec& net, const WeightSet& ws) {
    if (ws.layers.size() != net.layers.size())
        throw ShapeError("densify: weight set does not match network");
    WeightSet out;
    out.layers.reserve(ws.layers.size());
    for (std::size_t i = 0; i < ws.layers.size(); ++i) {
        LayerWeights w = ws.layers[i];
        if (w.is_sparse) {
            w.dense = dense_weights_of(net.layers[i], w);
            w.sparse = BcsrMatrix{};
            w.is_sparse = false;
        }
        out.layers.push_back(std::move(w));
    }
    return out;
}

// ----------------------------------------------------------------- execution

namespace {

void check_run_inputs(const NetworkSpec& net, const WeightSet& ws, const Tensor& input) {
    net.validate();
    if (ws.layers.size() != net.layers.size())
        throw ShapeError("run: weight set does not match network");
    if (input.layout != Layout::HWC || input.channels != net.input_c ||
        input.height != net.input_h || input.width != net.input_w)
        throw ShapeError("run: input must be HWC " + std::to_string(net.input_h) + "x" +
                         std::to_string(net.input_w) + "x" + std::to_string(net.input_c));
}

void add_residual(Tensor& out, const Tensor& res, const LayerSpec& L) {
    if (res.channels != out.channels || res.height != out.height || res.width != out.width)
        throw ShapeError("residual shape mismatch at layer " + L.name);
    for (std::size_t j = 0; j < out.data.size(); ++j) out.data[j] += res.data[j];
}

}  // namespace

std::vector<float> run_network(const NetworkSpec& net, const WeightSet& ws, const Tensor& input,
                               const ExecOptions& opt, ExecStats* stats) {
    check_run_inputs(net, ws, input);
    const std::size_t n = net.layers.size();
    std::vector<char> save(n, 0);
    for (const LayerSpec& L : net.layers)
        if (L.residual_src >= 0) save[static_cast<std::size_t>(L.residual_src)] = 1;
    std::vector<Tensor> saved(n);
    if (stats) {
        stats->layer_ns.assign(n, 0.0);
        stats->total_ns = 0.0;
    }

    Tensor cur = input;
    for (std::size_t i = 0; i < n; ++i) {
        const LayerSpec& L = net.layers[i];
        const LayerWeights& w = ws.layers[i];
        const auto t0 = std::chrono::steady_clock::now();
        Tensor out;
        switch (L.kind) {
            case LayerKind::EntryConv:
                out = entry_conv_hwc_to_chw(cur, w.conv, L.stride, w.bias, L.act);
                break;
            case LayerKind::Depthwise:
                out = depthwise_conv_chw(cur, w.dw, L.stride, w.bias, L.act);
                break;
            case LayerKind::GlobalPool: {
                std::vector<float> pooled = global_avg_pool_chw(cur);
                out = Tensor(L.cout, 1, 1, Layout::CHW);
                std::copy(pooled.begin(), pooled.end(), out.data.begin());
                break;
            }
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected: {
                MicrokernelConfig cfg;
                cfg.m = opt.strip_width;
                cfg.tier = opt.tier;
                cfg.prefetch = opt.prefetch;
                if (w.is_sparse) {
                    cfg.n = w.sparse.block_h;
                    if (w.sparse.rows == L.cout) {
                        out = spmm(w.sparse, cur, w.bias, L.act, cfg);
                    } else {
                        // Padded rows: run wide, then keep the logical prefix.
                        std::vector<float> pb(static_cast<std::size_t>(w.sparse.rows), 0.0f);
                        std::copy(w.bias.begin(), w.bias.end(), pb.begin());
                        out = spmm(w.sparse, cur, pb, L.act, cfg);
                        out.data.resize(static_cast<std::size_t>(L.cout) * out.spatial());
                        out.channels = L.cout;
                    }
                } else {
                    out = dense_gemm_baseline(w.dense, cur, w.bias, L.act, cfg);
                }
                break;
            }
        }
        if (L.residual_src >= 0) add_residual(out, saved[static_cast<std::size_t>(L.residual_src)], L);
        if (stats) {
            const double ns = std::chrono::duration<double, std::nano>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            stats->layer_ns[i] = ns;
            stats->total_ns += ns;
        }
        if (save[i]) saved[i] = out;
        cur = std::move(out);
    }
    return cur.data;
}

std::vector<float> run_network_reference(const NetworkSpec& net, const WeightSet& ws,
                                         const Tensor& input) {
    check_run_inputs(net, ws, input);
    const std::size_t n = net.layers.size();
    std::vector<char> save(n, 0);
    for (const LayerSpec& L : net.layers)
        if (L.residual_src >= 0) save[static_cast<std::size_t>(L.residual_src)] = 1;
    std::vector<Tensor> saved(n);

    Tensor cur = input;
    for (std::size_t i = 0; i < n; ++i) {
        const LayerSpec& L = net.layers[i];
        const LayerWeights& w = ws.layers[i];
        Tensor out;
        switch (L.kind) {
            case LayerKind::EntryConv:
                out = conv2d_reference(cur, w.conv, L.stride, w.bias, L.act);
                break;
            case LayerKind::Depthwise: {
                // Channel-at-a-time through the full reference convolution.
                const SamePad ph = same_pad(L.in_h, 3, L.stride);
                const SamePad pw = same_pad(L.in_w, 3, L.stride);
                out = Tensor(L.cout, ph.out, pw.out, Layout::CHW);
                for (int c = 0; c < L.cout; ++c) {
                    Tensor one(1, L.in_h, L.in_w, Layout::CHW);
                    std::copy(cur.data.begin() + static_cast<std::ptrdiff_t>(c) * cur.spatial(),
                              cur.data.begin() + static_cast<std::ptrdiff_t>(c + 1) * cur.spatial(),
                              one.data.begin());
                    ConvWeights k(1, 1, 3, 3);
                    for (int t = 0; t < 9; ++t)
                        k.data[static_cast<std::size_t>(t)] = w.dw.at(c, t / 3, t % 3);
                    const float b[1] = {w.bias[static_cast<std::size_t>(c)]};
                    Tensor oc = conv2d_reference(one, k, L.stride, b, L.act);
                    std::copy(oc.data.begin(), oc.data.end(),
                              out.data.begin() + static_cast<std::ptrdiff_t>(c) * out.spatial());
                }
                break;
            }
            case LayerKind::GlobalPool: {
                out = Tensor(L.cout, 1, 1, Layout::CHW);
                const int S = cur.spatial();
                for (int c = 0; c < L.cout; ++c) {
                    double sum = 0.0;
                    const float* src = cur.data.data() + static_cast<std::size_t>(c) * S;
                    for (int s = 0; s < S; ++s) sum += src[s];
                    out.data[static_cast<std::size_t>(c)] =
                        static_cast<float>(sum / static_cast<double>(S));
                }
                break;
            }
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected: {
                const DenseMatrix d = dense_weights_of(L, w);
                out = matmul_reference(d, cur, w.bias, L.act);
                break;
            }
        }
        if (L.residual_src >= 0) add_residual(out, saved[static_cast<std::size_t>(L.residual_src)], L);
        if (save[i]) saved[i] = out;
        cur = std::move(out);
    }
    return cur.data;
}

}  // namespace spcv
