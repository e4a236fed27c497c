#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spcv/bench.hpp"
#include "spcv/model_io.hpp"
#include "spcv/netdef.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

struct ArchFlags {
    std::string arch;
    double width = 1.0;
    double sparsity = 0.0;
    int block_start = 0;  // 0 = architecture default
    int block = 0;        // 0 = architecture default
};

void add_arch_flags(CLI::App* cmd, ArchFlags& f, bool arch_required = true) {
    cmd->add_option("--arch", f.arch, "Architecture")
        ->required(arch_required)
        ->check(CLI::IsMember({"mbv1", "mbv2", "ca-mbv2"}));
    cmd->add_option("--width", f.width, "Width multiplier (ignored by ca-mbv2)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--sparsity", f.sparsity, "Uniform 1x1 sparsity; 0 builds dense")
        ->check(CLI::Range(0.0, 0.999));
    cmd->add_option("--block-start", f.block_start,
                    "First 1x1 layer (1-based) built with output-channel blocks");
    cmd->add_option("--block", f.block, "Output-channel block height past --block-start")
        ->check(CLI::IsMember({0, 1, 2, 4}));
}

spcv::NetworkSpec net_of(const ArchFlags& f) {
    spcv::SparsityPlan plan = spcv::SparsityPlan::dense();
    if (f.sparsity > 0.0) {
        plan = spcv::default_plan(f.arch, f.sparsity);
        if (f.block_start > 0) plan.block_start_layer = f.block_start;
        if (f.block > 0) plan.block_h_after = f.block;
    }
    return spcv::build_network(f.arch, f.width, plan);
}

struct BenchFlags {
    int runs = 9;
    int warmups = 3;
    std::uint32_t seed = 42;
    std::vector<std::string> variants;
};

void add_bench_flags(CLI::App* cmd, BenchFlags& f) {
    cmd->add_option("--runs", f.runs, "Timed runs per measurement (odd)")->check(CLI::Range(3, 1001));
    cmd->add_option("--warmups", f.warmups, "Untimed runs before measuring")
        ->check(CLI::Range(0, 1000));
    cmd->add_option("--seed", f.seed, "RNG seed for weights and activations");
    cmd->add_option("--variants", f.variants, "Comma-separated MxN kernel variants")
        ->delimiter(',');
}

spcv::BenchOptions bench_options(const BenchFlags& f, spcv::Tier tier) {
    spcv::BenchOptions opt;
    opt.runs = f.runs;
    opt.warmups = f.warmups;
    opt.seed = f.seed;
    opt.tier = tier;
    opt.variants = f.variants;
    return opt;
}

std::string manifest_arch(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::string head, value;
    while (in >> head) {
        if (head == "arch" && in >> value) return value;
        std::string rest;
        std::getline(in, rest);
    }
    throw std::runtime_error("manifest '" + path + "' has no 'arch' line");
}

int run_verify_cmd(const std::string& config_path, spcv::Tier tier) {
    spcv::VerifyConfig cfg;
    if (config_path.empty()) {
        cfg = spcv::default_verify_config();
        cfg.tier = tier;
    } else {
        cfg = spcv::parse_verify_config(read_file(config_path));
        if (tier != spcv::Tier::Auto) cfg.tier = tier;
    }
    const spcv::VerifyReport rep = spcv::run_verify(cfg);
    int failed = 0;
    for (const spcv::VerifyCase& c : rep.cases) {
        std::printf("%s %s (max dev %.3g, tol %.3g)\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.max_dev, c.tolerance);
        if (!c.pass) ++failed;
    }
    std::printf("verify: %zu cases, %d failed\n", rep.cases.size(), failed);
    return rep.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse MobileNet inference engine"};
    app.require_subcommand(1);

    std::string tier_s = "auto";
    app.add_option("--tier", tier_s, "Kernel tier")
        ->check(CLI::IsMember({"scalar", "vector", "auto"}));
    bool inject_fault = false;
    app.add_flag("--inject-fault", inject_fault)->group("");  // test hook

    auto* verify = app.add_subcommand("verify", "Check kernels and executors against oracles");
    verify->fallthrough();
    std::string config_path;
    verify->add_option("--config", config_path, "JSON verification config");

    ArchFlags bl_arch;
    BenchFlags bl_bench;
    auto* bench_layers =
        app.add_subcommand("bench-layers", "Time spmm on each sparse 1x1 layer");
    bench_layers->fallthrough();
    add_arch_flags(bench_layers, bl_arch);
    add_bench_flags(bench_layers, bl_bench);

    ArchFlags bm_arch;
    BenchFlags bm_bench;
    auto* bench_model = app.add_subcommand("bench-model", "Time the network end to end");
    bench_model->fallthrough();
    add_arch_flags(bench_model, bm_arch);
    add_bench_flags(bench_model, bm_bench);

    ArchFlags ct_arch;
    bool ct_json = false;
    auto* count = app.add_subcommand("count", "Print FLOP and parameter totals");
    count->fallthrough();
    add_arch_flags(count, ct_arch);
    count->add_flag("--json", ct_json, "Machine-readable output");

    ArchFlags ex_arch;
    BenchFlags ex_bench;
    std::string ex_format, ex_out, ex_in;
    auto* exp = app.add_subcommand("export", "Write benchmark records to a file");
    exp->fallthrough();
    exp->add_option("--format", ex_format, "Output format")
        ->required()
        ->check(CLI::IsMember({"csv", "json"}));
    exp->add_option("--out", ex_out, "Output path")->required();
    exp->add_option("--in", ex_in, "Existing records file to convert (.csv or .json)");
    // --in converts an existing file; otherwise a fresh bench-layers run is exported.
    add_arch_flags(exp, ex_arch, /*arch_required=*/false);
    add_bench_flags(exp, ex_bench);

    std::string cv_dump, cv_manifest, cv_out;
    double cv_prune = -1.0;
    auto* convert = app.add_subcommand("convert", "Turn a dense weight dump into a model file");
    convert->fallthrough();
    convert->add_option("--dump", cv_dump, "Flat f32 weight dump")->required();
    convert->add_option("--manifest", cv_manifest, "Tensor manifest for the dump")->required();
    convert->add_option("--out", cv_out, "Model file to write")->required();
    convert->add_option("--prune", cv_prune, "Magnitude-prune to this sparsity")
        ->check(CLI::Range(0.0, 0.999));

    CLI11_PARSE(app, argc, argv);

    spcv::set_fault_injection(inject_fault);
    const spcv::Tier tier = spcv::parse_tier(tier_s);

    try {
        if (verify->parsed()) return run_verify_cmd(config_path, tier);

        if (bench_layers->parsed()) {
            const spcv::NetworkSpec net = net_of(bl_arch);
            const auto records = spcv::bench_layers(net, bench_options(bl_bench, tier));
            if (records.empty())
                throw std::runtime_error(
                    "network has no sparse 1x1 layers to benchmark; pass --sparsity > 0");
            std::fputs(spcv::records_to_csv(records).c_str(), stdout);
            return 0;
        }

        if (bench_model->parsed()) {
            const spcv::NetworkSpec net = net_of(bm_arch);
            const spcv::WeightSet ws = spcv::instantiate_weights(net, bm_bench.seed);
            const spcv::ModelBenchReport rep =
                spcv::bench_model(net, ws, bench_options(bm_bench, tier));
            std::printf("%-14s %-15s %12s %12s\n", "layer", "kind", "sparse_ms", "dense_ms");
            for (const spcv::LayerTimeRow& row : rep.layers)
                std::printf("%-14s %-15s %12.4f %12.4f\n", row.name.c_str(), row.kind.c_str(),
                            row.sparse_ns / 1e6, row.dense_ns / 1e6);
            std::printf("end-to-end median: sparse %.3f ms, dense %.3f ms, speedup %.2fx\n",
                        rep.sparse_median_ns / 1e6, rep.dense_median_ns / 1e6, rep.speedup);
            return 0;
        }

        if (count->parsed()) {
            const spcv::NetworkSpec net = net_of(ct_arch);
            const spcv::CountResult flops = spcv::count_flops(net);
            const spcv::CountResult params = spcv::count_params(net);
            const double dw_share = spcv::depthwise_flop_share(net);
            if (ct_json) {
                std::printf(
                    "{\"arch\":\"%s\",\"width\":%.3f,\"sparsity\":%.4f,"
                    "\"flops\":{\"dense\":%lld,\"sparse\":%lld},"
                    "\"params\":{\"dense\":%lld,\"sparse\":%lld},"
                    "\"depthwise_flop_share\":%.6f}\n",
                    ct_arch.arch.c_str(), net.width_multiplier, net.plan.sparsity,
                    static_cast<long long>(flops.dense), static_cast<long long>(flops.sparse),
                    static_cast<long long>(params.dense), static_cast<long long>(params.sparse),
                    dw_share);
            } else {
                std::printf("arch %s  width %.2f  sparsity %.2f\n", ct_arch.arch.c_str(),
                            net.width_multiplier, net.plan.sparsity);
                std::printf("MFLOPs  dense %9.1f  sparse %9.1f\n", flops.dense / 1e6,
                            flops.sparse / 1e6);
                std::printf("MParams dense %9.3f  sparse %9.3f\n", params.dense / 1e6,
                            params.sparse / 1e6);
                std::printf("depthwise FLOP share %.2f%%\n", dw_share * 100.0);
            }
            return 0;
        }

        if (exp->parsed()) {
            std::vector<spcv::BenchRecord> records;
            if (!ex_in.empty()) {
                const std::string text = read_file(ex_in);
                const bool json_in = ex_in.size() >= 5 &&
                                     ex_in.compare(ex_in.size() - 5, 5, ".json") == 0;
                records = json_in ? spcv::records_from_json(text)
                                  : spcv::records_from_csv(text);
            } else {
                if (ex_arch.arch.empty())
                    throw std::runtime_error("export needs --in or --arch");
                records = spcv::bench_layers(net_of(ex_arch), bench_options(ex_bench, tier));
            }
            write_file(ex_out, ex_format == "csv" ? spcv::records_to_csv(records)
                                                  : spcv::records_to_json(records));
            std::printf("wrote %zu records to %s\n", records.size(), ex_out.c_str());
            return 0;
        }

        if (convert->parsed()) {
            spcv::SparsityPlan plan = spcv::SparsityPlan::dense();
            spcv::ConvertMode mode = spcv::ConvertMode::MaskFromValues;
            if (cv_prune >= 0.0) {
                plan = spcv::default_plan(manifest_arch(cv_manifest), cv_prune);
                mode = spcv::ConvertMode::MagnitudePrune;
            }
            const auto [net, ws] = spcv::convert_dense_dump(cv_dump, cv_manifest, plan, mode);
            spcv::save_model(net, ws, cv_out);
            int sparse_layers = 0;
            for (const spcv::LayerSpec& L : net.layers) sparse_layers += L.sparse ? 1 : 0;
            std::printf("wrote %s (%zu layers, %d sparse)\n", cv_out.c_str(),
                        net.layers.size(), sparse_layers);
            return 0;
        }
    } catch (const spcv::SelfCheckError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
