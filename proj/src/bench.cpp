#include "spcv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>

#include "json.hpp"
#include "spcv/pruning.hpp"

namespace spcv {
namespace {

bool g_fault_injection = false;

std::uint32_t mix(std::uint32_t a, std::uint32_t b, std::uint32_t c = 0) {
    std::uint32_t x = a * 0x9E3779B9u + b * 0x85EBCA6Bu + c * 0xC2B2AE35u + 1u;
    x ^= x >> 16;
    x *= 0x7FEB352Du;
    x ^= x >> 15;
    x *= 0x846CA68Bu;
    x ^= x >> 16;
    return x;
}

float unit_draw(std::mt19937& rng) {
    return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

float sym_draw(std::mt19937& rng, float limit) {
    return (2.0f * unit_draw(rng) - 1.0f) * limit;
}

Tensor random_act(int c, int h, int w, std::mt19937& rng) {
    Tensor t(c, h, w, Layout::CHW);
    for (float& v : t.data) v = unit_draw(rng);
    return t;
}

DenseMatrix he_matrix(int rows, int cols, std::mt19937& rng) {
    DenseMatrix m(rows, cols);
    const float limit = std::sqrt(6.0f / static_cast<float>(cols));
    for (float& v : m.data) v = sym_draw(rng, limit);
    return m;
}

std::vector<float> random_bias(int n, std::mt19937& rng) {
    std::vector<float> b(static_cast<std::size_t>(n));
    for (float& v : b) v = sym_draw(rng, 0.1f);
    return b;
}

double max_abs_dev(const std::vector<float>& a, const std::vector<float>& b) {
    double dev = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i)
        dev = std::max(dev, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    if (a.size() != b.size()) dev = std::numeric_limits<double>::infinity();
    return dev;
}

std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct KernelShape {
    int cout, cin, h, w;
};

// Representative 1x1 layer shapes from the MobileNet family.
const std::vector<KernelShape>& shape_pool() {
    static const std::vector<KernelShape> pool = {
        {64, 32, 56, 56},   {128, 64, 28, 28},  {128, 128, 28, 28}, {256, 128, 14, 14},
        {256, 256, 14, 14}, {512, 256, 14, 14}, {512, 512, 7, 7},   {1024, 512, 7, 7},
        {96, 16, 56, 56},   {144, 24, 28, 28},  {192, 32, 14, 14},  {384, 64, 14, 14},
        {576, 96, 14, 14},  {960, 160, 7, 7},   {320, 960, 7, 7},   {1280, 320, 7, 7},
    };
    return pool;
}

struct SparseLayerCase {
    DenseMatrix masked;  // dense view of the sparse weights, logical rows
    BcsrMatrix bcsr;
};

SparseLayerCase make_sparse_case(int cout, int cin, double sparsity, int block_h,
                                 std::uint32_t mask_seed, std::mt19937& value_rng) {
    if (cout % block_h != 0) throw ShapeError("bench shapes must divide by the block height");
    SparseLayerCase c;
    c.masked = he_matrix(cout, cin, value_rng);
    SparsityMask mask = generate_mask(cout, cin, sparsity, BlockConfig(block_h, 1), mask_seed);
    apply_mask(c.masked, mask);
    c.bcsr = encode_bcsr(c.masked, block_h);
    return c;
}

}  // namespace

void set_fault_injection(bool on) { g_fault_injection = on; }
bool fault_injection() { return g_fault_injection; }

double median_time_ns(const std::function<void()>& fn, int runs, int warmups) {
    if (runs < 3 || runs % 2 == 0)
        throw std::invalid_argument("run count must be odd and at least 3");
    if (warmups < 0) throw std::invalid_argument("warmup count must be >= 0");
    for (int i = 0; i < warmups; ++i) fn();
    std::vector<double> samples(static_cast<std::size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        samples[static_cast<std::size_t>(i)] =
            std::chrono::duration<double, std::nano>(t1 - t0).count();
    }
    std::nth_element(samples.begin(), samples.begin() + runs / 2, samples.end());
    return samples[static_cast<std::size_t>(runs) / 2];
}

std::vector<std::string> all_variants() {
    std::vector<std::string> v;
    for (int m : {4, 8, 16})
        for (int n : {1, 2, 4}) v.push_back(variant_name(m, n));
    return v;
}

void require_selfcheck(Tier tier, std::uint32_t seed) {
    struct Case {
        int cout, cin, h, w, block_h;
    };
    const Case cases[] = {{64, 32, 14, 14, 1}, {96, 64, 14, 14, 2}, {128, 96, 7, 7, 4}};
    for (int ci = 0; ci < 3; ++ci) {
        const Case& k = cases[ci];
        std::mt19937 rng(mix(seed, 0xC0DEu, static_cast<std::uint32_t>(ci)));
        SparseLayerCase sc =
            make_sparse_case(k.cout, k.cin, 0.9, k.block_h, rng(), rng);
        if (g_fault_injection && ci == 0 && !sc.bcsr.values.empty())
            sc.bcsr.values[0] += 1.0f;  // test hook: one corrupted weight
        const Tensor act = random_act(k.cin, k.h, k.w, rng);
        const std::vector<float> bias = random_bias(k.cout, rng);
        const Tensor expected = matmul_reference(sc.masked, act, bias, Activation::relu6());
        MicrokernelConfig cfg;
        cfg.n = k.block_h;
        cfg.tier = tier;
        const Tensor got = spmm(sc.bcsr, act, bias, Activation::relu6(), cfg);
        const double dev = max_abs_dev(got.data, expected.data);
        if (!(dev <= 1e-5)) {
            std::ostringstream os;
            os << "kernel self-check failed on case " << k.cout << "x" << k.cin << " block "
               << k.block_h << " (max deviation " << dev << "); refusing to emit records";
            throw SelfCheckError(os.str());
        }
    }
}

std::vector<BenchRecord> bench_layers(const NetworkSpec& net, const BenchOptions& opt) {
    require_selfcheck(opt.tier, opt.seed);
    std::vector<std::string> names = opt.variants.empty() ? all_variants() : opt.variants;
    std::vector<std::pair<int, int>> variants;
    variants.reserve(names.size());
    for (const std::string& s : names) variants.push_back(parse_variant(s));

    std::vector<BenchRecord> records;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& L = net.layers[li];
        if (L.kind != LayerKind::Pointwise || !L.sparse) continue;
        std::mt19937 rng(mix(opt.seed, static_cast<std::uint32_t>(li), 0));
        const Tensor act = random_act(L.cin, L.in_h, L.in_w, rng);
        const std::vector<float> bias = random_bias(L.cout, rng);
        const DenseMatrix dense = he_matrix(L.cout, L.cin, rng);
        Tensor out(L.cout, L.out_h, L.out_w, Layout::CHW);
        const double spatial = static_cast<double>(L.out_h) * L.out_w;
        const double dense_flops = 2.0 * L.cout * L.cin * spatial;

        BenchRecord rec;
        rec.layer_index = static_cast<int>(li);
        rec.kind = layer_kind_name(L.kind);
        rec.cout = L.cout;
        rec.cin = L.cin;
        rec.spatial = L.out_h * L.out_w;

        for (const auto& [m, n] : variants) {
            SparseLayerCase sc = make_sparse_case(
                L.cout, L.cin, L.sparsity, n, mix(opt.seed, static_cast<std::uint32_t>(li),
                                                  static_cast<std::uint32_t>(n)),
                rng);
            MicrokernelConfig cfg;
            cfg.m = m;
            cfg.n = n;
            cfg.tier = opt.tier;
            BenchRecord r = rec;
            r.sparsity = L.sparsity;
            r.block_h = n;
            r.variant = variant_name(m, n);
            r.median_ns = median_time_ns(
                [&] { spmm_into(sc.bcsr, act, bias, L.act, out, cfg); }, opt.runs,
                opt.warmups);
            r.achieved_gflops = 2.0 * static_cast<double>(sc.bcsr.nnz_values()) * spatial / r.median_ns;
            r.effective_gflops = dense_flops / r.median_ns;
            records.push_back(std::move(r));
        }

        MicrokernelConfig dcfg;
        dcfg.tier = opt.tier;
        BenchRecord d = rec;
        d.sparsity = 0.0;
        d.block_h = 1;
        d.variant = "dense";
        d.median_ns = median_time_ns(
            [&] { dense_gemm_into(dense, act, bias, L.act, out, dcfg); }, opt.runs,
            opt.warmups);
        d.achieved_gflops = dense_flops / d.median_ns;
        d.effective_gflops = d.achieved_gflops;
        records.push_back(std::move(d));
    }
    return records;
}

ModelBenchReport bench_model(const NetworkSpec& net, const WeightSet& ws,
                             const BenchOptions& opt) {
    require_selfcheck(opt.tier, opt.seed);
    std::mt19937 rng(mix(opt.seed, 0xBEEFu));
    Tensor input(net.input_c, net.input_h, net.input_w, Layout::HWC);
    for (float& v : input.data) v = unit_draw(rng);

    ExecOptions eo;
    eo.tier = opt.tier;

    const auto time_net = [&](const WeightSet& w, std::vector<double>& layer_medians) {
        const std::size_t nl = net.layers.size();
        std::vector<std::vector<double>> per_layer(nl);
        std::vector<double> walls;
        for (int i = 0; i < opt.warmups; ++i) run_network(net, w, input, eo);
        for (int i = 0; i < opt.runs; ++i) {
            ExecStats stats;
            const auto t0 = std::chrono::steady_clock::now();
            run_network(net, w, input, eo, &stats);
            const auto t1 = std::chrono::steady_clock::now();
            walls.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
            for (std::size_t l = 0; l < nl; ++l) per_layer[l].push_back(stats.layer_ns[l]);
        }
        const auto median = [](std::vector<double>& v) {
            std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2),
                             v.end());
            return v[v.size() / 2];
        };
        layer_medians.resize(nl);
        for (std::size_t l = 0; l < nl; ++l) layer_medians[l] = median(per_layer[l]);
        return median(walls);
    };

    ModelBenchReport rep;
    std::vector<double> sparse_layer, dense_layer;
    rep.sparse_median_ns = time_net(ws, sparse_layer);
    const WeightSet dws = densify(net, ws);
    rep.dense_median_ns = time_net(dws, dense_layer);
    rep.speedup = rep.dense_median_ns / rep.sparse_median_ns;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        LayerTimeRow row;
        row.name = net.layers[l].name;
        row.kind = layer_kind_name(net.layers[l].kind);
        row.sparse_ns = sparse_layer[l];
        row.dense_ns = dense_layer[l];
        rep.layers.push_back(std::move(row));
    }
    return rep;
}

// ----------------------------------------------------------------- verify

VerifyConfig default_verify_config() {
    VerifyConfig cfg;
    cfg.variants = all_variants();
    cfg.sparsities = {0.7, 0.8, 0.9, 0.95};
    cfg.architectures = {{"mbv1", 1.0, 0.9}, {"mbv2", 1.0, 0.85}, {"ca-mbv2", 1.0, 0.85}};
    return cfg;
}

VerifyConfig parse_verify_config(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    if (j.empty()) throw std::invalid_argument("config selects no verification cases");

    VerifyConfig cfg = default_verify_config();
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") {
            cfg.seed = value.get<std::uint32_t>();
        } else if (key == "shapes_per_case") {
            cfg.shapes_per_case = value.get<int>();
            if (cfg.shapes_per_case < 1)
                throw std::invalid_argument("shapes_per_case must be >= 1");
        } else if (key == "variants") {
            cfg.variants = value.get<std::vector<std::string>>();
            for (const std::string& v : cfg.variants) parse_variant(v);
        } else if (key == "sparsities") {
            cfg.sparsities = value.get<std::vector<double>>();
            for (double s : cfg.sparsities)
                if (!(s > 0.0 && s < 1.0))
                    throw std::invalid_argument("sparsities must lie in (0, 1)");
        } else if (key == "architectures") {
            cfg.architectures.clear();
            for (const auto& a : value) {
                ArchCase ac;
                ac.arch = a.at("arch").get<std::string>();
                ac.width = a.value("width", 1.0);
                ac.sparsity = a.value("sparsity", 0.0);
                cfg.architectures.push_back(std::move(ac));
            }
        } else if (key == "kernel_tolerance") {
            cfg.kernel_tolerance = value.get<double>();
        } else if (key == "executor_tolerance") {
            cfg.executor_tolerance = value.get<double>();
        } else if (key == "tier") {
            cfg.tier = parse_tier(value.get<std::string>());
        } else {
            throw std::invalid_argument("unknown config key '" + key + "'");
        }
    }
    return cfg;
}

VerifyReport run_verify(const VerifyConfig& cfg) {
    VerifyReport rep;
    bool injected = false;

    std::mt19937 pick(mix(cfg.seed, 0x51A9Eu));
    const auto& pool = shape_pool();
    for (const std::string& vname : cfg.variants) {
        const auto [m, n] = parse_variant(vname);
        for (double s : cfg.sparsities) {
            for (int i = 0; i < cfg.shapes_per_case; ++i) {
                const KernelShape& k = pool[pick() % pool.size()];
                std::mt19937 rng(mix(cfg.seed, pick(), static_cast<std::uint32_t>(i)));
                SparseLayerCase sc = make_sparse_case(k.cout, k.cin, s, n, rng(), rng);
                if (g_fault_injection && !injected && !sc.bcsr.values.empty()) {
                    sc.bcsr.values[0] += 1.0f;  // test hook: one corrupted weight
                    injected = true;
                }
                const Tensor act = random_act(k.cin, k.h, k.w, rng);
                const std::vector<float> bias = random_bias(k.cout, rng);
                const Tensor expected =
                    matmul_reference(sc.masked, act, bias, Activation::relu6());
                MicrokernelConfig kcfg;
                kcfg.m = m;
                kcfg.n = n;
                kcfg.tier = cfg.tier;
                const Tensor got = spmm(sc.bcsr, act, bias, Activation::relu6(), kcfg);

                VerifyCase c;
                std::ostringstream os;
                os << "spmm-" << vname << "-s" << fmt_fixed(s, 2) << "-" << k.cout << "x"
                   << k.cin << "@" << k.h << "x" << k.w;
                c.name = os.str();
                c.max_dev = max_abs_dev(got.data, expected.data);
                c.tolerance = cfg.kernel_tolerance;
                c.pass = c.max_dev <= c.tolerance;
                rep.all_pass = rep.all_pass && c.pass;
                rep.cases.push_back(std::move(c));
            }
        }
    }

    for (std::size_t ai = 0; ai < cfg.architectures.size(); ++ai) {
        const ArchCase& a = cfg.architectures[ai];
        const NetworkSpec net =
            build_network(a.arch, a.width, default_plan(a.arch, a.sparsity));
        WeightSet ws = instantiate_weights(net, mix(cfg.seed, static_cast<std::uint32_t>(ai)));
        if (g_fault_injection && !injected) {
            for (LayerWeights& lw : ws.layers) {
                if (lw.is_sparse && !lw.sparse.values.empty()) {
                    lw.sparse.values[0] += 1.0f;  // test hook
                    injected = true;
                    break;
                }
                if (!lw.dense.data.empty()) {
                    lw.dense.data[0] += 1.0f;  // test hook
                    injected = true;
                    break;
                }
            }
        }
        std::mt19937 rng(mix(cfg.seed, 0x1111u, static_cast<std::uint32_t>(ai)));
        Tensor input(net.input_c, net.input_h, net.input_w, Layout::HWC);
        for (float& v : input.data) v = unit_draw(rng);
        ExecOptions eo;
        eo.tier = cfg.tier;
        const std::vector<float> fast = run_network(net, ws, input, eo);
        const std::vector<float> ref = run_network_reference(net, ws, input);

        VerifyCase c;
        std::ostringstream os;
        os << "net-" << a.arch << "-w" << fmt_fixed(a.width, 2) << "-s"
           << fmt_fixed(a.sparsity, 2);
        c.name = os.str();
        c.max_dev = max_abs_dev(fast, ref);
        c.tolerance = cfg.executor_tolerance;
        c.pass = c.max_dev <= c.tolerance;
        rep.all_pass = rep.all_pass && c.pass;
        rep.cases.push_back(std::move(c));
    }

    if (rep.cases.empty())
        throw std::invalid_argument("config produces no verification cases");
    return rep;
}

// ----------------------------------------------------------------- export

namespace {
const char* kCsvHeader =
    "layer_index,kind,cout,cin,spatial,sparsity,block_h,variant,median_ns,"
    "achieved_gflops,effective_gflops";
}

std::string records_to_csv(const std::vector<BenchRecord>& records) {
    if (records.empty()) throw std::invalid_argument("no records to export");
    std::ostringstream os;
    os << kCsvHeader << "\n";
    for (const BenchRecord& r : records) {
        os << r.layer_index << "," << r.kind << "," << r.cout << "," << r.cin << ","
           << r.spatial << "," << fmt_double(r.sparsity) << "," << r.block_h << ","
           << r.variant << "," << fmt_double(r.median_ns) << ","
           << fmt_double(r.achieved_gflops) << "," << fmt_double(r.effective_gflops)
           << "\n";
    }
    return os.str();
}

std::vector<BenchRecord> records_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader)
        throw std::invalid_argument("bad CSV header");
    std::vector<BenchRecord> records;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 11)
            throw std::invalid_argument("CSV row has " + std::to_string(fields.size()) +
                                        " fields, expected 11");
        BenchRecord r;
        r.layer_index = std::stoi(fields[0]);
        r.kind = fields[1];
        r.cout = std::stoi(fields[2]);
        r.cin = std::stoi(fields[3]);
        r.spatial = std::stoi(fields[4]);
        r.sparsity = std::strtod(fields[5].c_str(), nullptr);
        r.block_h = std::stoi(fields[6]);
        r.variant = fields[7];
        r.median_ns = std::strtod(fields[8].c_str(), nullptr);
        r.achieved_gflops = std::strtod(fields[9].c_str(), nullptr);
        r.effective_gflops = std::strtod(fields[10].c_str(), nullptr);
        records.push_back(std::move(r));
    }
    return records;
}

std::string records_to_json(const std::vector<BenchRecord>& records) {
    if (records.empty()) throw std::invalid_argument("no records to export");
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const BenchRecord& r : records) {
        nlohmann::ordered_json o;
        o["layer_index"] = r.layer_index;
        o["kind"] = r.kind;
        o["cout"] = r.cout;
        o["cin"] = r.cin;
        o["spatial"] = r.spatial;
        o["sparsity"] = r.sparsity;
        o["block_h"] = r.block_h;
        o["variant"] = r.variant;
        o["median_ns"] = r.median_ns;
        o["achieved_gflops"] = r.achieved_gflops;
        o["effective_gflops"] = r.effective_gflops;
        arr.push_back(std::move(o));
    }
    return arr.dump(2) + "\n";
}

std::vector<BenchRecord> records_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("records are not valid JSON: ") + e.what());
    }
    if (!arr.is_array()) throw std::invalid_argument("record JSON must be an array");
    std::vector<BenchRecord> records;
    for (const auto& o : arr) {
        BenchRecord r;
        try {
            r.layer_index = o.at("layer_index").get<int>();
            r.kind = o.at("kind").get<std::string>();
            r.cout = o.at("cout").get<int>();
            r.cin = o.at("cin").get<int>();
            r.spatial = o.at("spatial").get<int>();
            r.sparsity = o.at("sparsity").get<double>();
            r.block_h = o.at("block_h").get<int>();
            r.variant = o.at("variant").get<std::string>();
            r.median_ns = o.at("median_ns").get<double>();
            r.achieved_gflops = o.at("achieved_gflops").get<double>();
            r.effective_gflops = o.at("effective_gflops").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(std::string("bad record object: ") + e.what());
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace spcv
