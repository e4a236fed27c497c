#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spcv/kernels.hpp"
#include "spcv/sparse.hpp"
#include "spcv/tensor.hpp"

namespace spcv {

enum class LayerKind : std::uint8_t {
    EntryConv,       // dense 3x3, HWC image in, CHW out
    Pointwise,       // 1x1 convolution, the sparse-eligible kind
    Depthwise,       // per-channel 3x3
    GlobalPool,      // spatial mean per channel
    FullyConnected,  // classifier head
};
const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::Pointwise;
    std::string name;
    int cin = 0;
    int cout = 0;
    int stride = 1;
    int in_h = 0, in_w = 0;    // spatial extent consumed
    int out_h = 0, out_w = 0;  // spatial extent produced
    bool sparse = false;
    double sparsity = 0.0;  // fraction of zeroed weights when sparse
    int block_h = 1;        // output-channel block of the sparse encoding
    Activation act;
    int residual_src = -1;  // index of the layer whose output is added to ours
};

/// Uniform sparsity applied to every 1x1 convolution. 1x1 layers are
/// numbered 1, 2, ... in network order; those at or beyond
/// block_start_layer use block_h_after, earlier ones stay unstructured.
/// The entry convolution and the classifier are never pruned.
struct SparsityPlan {
    double sparsity = 0.0;  // 0 = dense build
    int block_start_layer = 1;
    int block_h_after = 1;

    static SparsityPlan dense() { return {}; }
};

struct NetworkSpec {
    std::string name;
    double width_multiplier = 1.0;
    int input_h = 224, input_w = 224, input_c = 3;
    int num_classes = 1000;
    SparsityPlan plan;
    std::vector<LayerSpec> layers;

    /// Throws on broken chaining, bad first/last layers, or invalid
    /// sparsity/residual fields.
    void validate() const;
};

/// Width-scaled channel count: nearest multiple of 8, minimum 8.
int round_channels(int base, double width);

NetworkSpec build_mbv1(double width, const SparsityPlan& plan);
NetworkSpec build_mbv2(double width, const SparsityPlan& plan);
NetworkSpec build_cache_aware_mbv2(const SparsityPlan& plan);

/// "mbv1" | "mbv2" | "ca-mbv2"; ca-mbv2 ignores the width multiplier.
NetworkSpec build_network(const std::string& arch, double width, const SparsityPlan& plan);

/// The Table-style sparsity plan each architecture ships with.
SparsityPlan default_plan(const std::string& arch, double sparsity);

struct CountResult {
    std::int64_t dense = 0;
    std::int64_t sparse = 0;
};

/// FLOP totals. Dense contractions (entry conv, 1x1, classifier) count two
/// FLOPs per multiply-accumulate; depthwise taps count one (fused); global
/// pooling counts one add per input element; residual adds are free. Sparse
/// layers scale their contraction by the kept fraction.
CountResult count_flops(const NetworkSpec& net);

/// Parameter totals: weights + biases. Sparse layers count their expected
/// nonzeros plus one parameter per 32 bits of position bitmask.
CountResult count_params(const NetworkSpec& net);

/// Depthwise fraction of the dense FLOP total.
double depthwise_flop_share(const NetworkSpec& net);

/// Per-layer weight storage. Exactly the members for the layer's kind are
/// populated; sparse 1x1/classifier layers hold BCSR (possibly with rows
/// padded up to the block height), dense ones a row-major matrix.
struct LayerWeights {
    bool is_sparse = false;
    DenseMatrix dense;
    BcsrMatrix sparse;
    ConvWeights conv;
    DepthwiseWeights dw;
    std::vector<float> bias;  // logical cout entries (GlobalPool: empty)
};

struct WeightSet {
    std::vector<LayerWeights> layers;
};

/// Seeded He-uniform random weights; sparse layers are masked via
/// generate_mask and encoded. Deterministic per seed.
WeightSet instantiate_weights(const NetworkSpec& net, std::uint32_t seed);

/// Dense (logical-row) weight matrix of a 1x1/classifier layer, decoding
/// and un-padding sparse storage as needed.
DenseMatrix dense_weights_of(const LayerSpec& spec, const LayerWeights& w);

/// Copy of `ws` with every sparse layer decoded to dense storage, for
/// dense-baseline runs of the same network.
WeightSet densify(const NetworkSpec& net, const WeightSet& ws);

struct ExecOptions {
    Tier tier = Tier::Auto;
    int strip_width = 0;  // 0 = tier default
    bool prefetch = true;
};

struct ExecStats {
    std::vector<double> layer_ns;  // one entry per layer
    double total_ns = 0.0;
};

/// Runs the network with the fast kernels: entry conv HWC->CHW, then the
/// CHW chain, residual adds, pooling, classifier. Input is an HWC image
/// matching the network's input dims. Returns num_classes logits.
std::vector<float> run_network(const NetworkSpec& net, const WeightSet& ws, const Tensor& input,
                               const ExecOptions& opt = {}, ExecStats* stats = nullptr);

/// Same chain through the naive reference ops on decoded dense weights.
std::vector<float> run_network_reference(const NetworkSpec& net, const WeightSet& ws,
                                         const Tensor& input);

}  // namespace spcv
