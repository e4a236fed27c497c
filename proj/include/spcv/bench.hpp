#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spcv/kernels.hpp"
#include "spcv/netdef.hpp"

namespace spcv {

/// One timed kernel invocation on one layer shape. achieved credits the
/// multiplies actually executed, effective credits the dense-equivalent
/// work; both in GFLOP/s. Dense baseline rows use variant "dense".
struct BenchRecord {
    int layer_index = 0;
    std::string kind;
    int cout = 0;
    int cin = 0;
    int spatial = 0;
    double sparsity = 0.0;
    int block_h = 1;
    std::string variant;
    double median_ns = 0.0;
    double achieved_gflops = 0.0;
    double effective_gflops = 0.0;

    bool operator==(const BenchRecord&) const = default;
};

/// The pre-bench self-check found a kernel/oracle mismatch.
class SelfCheckError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Test hook: when on, one weight of the first oracle case is flipped so
/// verification and the bench gate fail by construction.
void set_fault_injection(bool on);
bool fault_injection();

/// Median of `runs` timed calls (odd, >= 3) after `warmups` untimed ones.
double median_time_ns(const std::function<void()>& fn, int runs, int warmups);

struct BenchOptions {
    int runs = 9;
    int warmups = 3;
    std::uint32_t seed = 42;
    Tier tier = Tier::Auto;
    std::vector<std::string> variants;  // empty = all nine MxN variants
};

/// All nine "MxN" variant names in canonical order.
std::vector<std::string> all_variants();

/// Times every sparse 1x1 layer of the network under each selected variant
/// with freshly generated weights, plus a dense baseline row per layer.
/// Runs the oracle self-check first and refuses to measure if it fails.
std::vector<BenchRecord> bench_layers(const NetworkSpec& net, const BenchOptions& opt);

struct LayerTimeRow {
    std::string name;
    std::string kind;
    double sparse_ns = 0.0;
    double dense_ns = 0.0;
};

struct ModelBenchReport {
    double sparse_median_ns = 0.0;
    double dense_median_ns = 0.0;
    double speedup = 0.0;  // dense / sparse
    std::vector<LayerTimeRow> layers;
};

/// End-to-end median latency of the network against its densified twin,
/// with a per-layer breakdown. Same self-check gate as bench_layers.
ModelBenchReport bench_model(const NetworkSpec& net, const WeightSet& ws,
                             const BenchOptions& opt);

/// Three quick spmm-vs-reference cases; throws SelfCheckError on mismatch.
void require_selfcheck(Tier tier, std::uint32_t seed);

// ----------------------------------------------------------------- verify

struct VerifyCase {
    std::string name;
    double max_dev = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct VerifyReport {
    std::vector<VerifyCase> cases;
    bool all_pass = true;
};

struct ArchCase {
    std::string arch;
    double width = 1.0;
    double sparsity = 0.0;
};

struct VerifyConfig {
    std::uint32_t seed = 42;
    int shapes_per_case = 4;  // random layer shapes per (variant, sparsity)
    std::vector<std::string> variants;
    std::vector<double> sparsities;
    std::vector<ArchCase> architectures;
    double kernel_tolerance = 1e-5;
    double executor_tolerance = 1e-4;
    Tier tier = Tier::Auto;
};

/// The built-in suite: all variants, four sparsities, three architectures.
VerifyConfig default_verify_config();

/// Parses a JSON config; unspecified fields take the defaults. An empty
/// JSON object selects nothing and is rejected.
VerifyConfig parse_verify_config(const std::string& json_text);

/// Runs kernel-oracle and executor-equivalence cases, reporting the max
/// elementwise deviation of each.
VerifyReport run_verify(const VerifyConfig& cfg);

// ----------------------------------------------------------------- export

std::string records_to_csv(const std::vector<BenchRecord>& records);
std::string records_to_json(const std::vector<BenchRecord>& records);
std::vector<BenchRecord> records_from_csv(const std::string& text);
std::vector<BenchRecord> records_from_json(const std::string& text);

}  // namespace spcv
