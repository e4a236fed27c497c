#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "spcv/model_io.hpp"

using namespace spcv;

namespace {

LayerSpec layer(LayerKind kind, const std::string& name, int cin, int cout, int stride,
                int in_h, int in_w, int out_h, int out_w,
                const Activation& act = Activation::relu6()) {
    LayerSpec L;
    L.kind = kind;
    L.name = name;
    L.cin = cin;
    L.cout = cout;
    L.stride = stride;
    L.in_h = in_h;
    L.in_w = in_w;
    L.out_h = out_h;
    L.out_w = out_w;
    L.act = act;
    return L;
}

NetworkSpec tiny_net(bool sparse_pw) {
    NetworkSpec net;
    net.name = "tiny";
    net.input_h = 8;
    net.input_w = 8;
    net.num_classes = 10;
    net.layers.push_back(layer(LayerKind::EntryConv, "entry", 3, 8, 2, 8, 8, 4, 4));
    LayerSpec pw = layer(LayerKind::Pointwise, "pw1", 8, 16, 1, 4, 4, 4, 4);
    if (sparse_pw) {
        pw.sparse = true;
        pw.sparsity = 0.5;
        pw.block_h = 2;
    }
    net.layers.push_back(pw);
    net.layers.push_back(
        layer(LayerKind::GlobalPool, "pool", 16, 16, 1, 4, 4, 1, 1, Activation::none()));
    net.layers.push_back(
        layer(LayerKind::FullyConnected, "fc", 16, 10, 1, 1, 1, 1, 1, Activation::none()));
    net.validate();
    return net;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<float> read_floats(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    REQUIRE(in);
    const auto size = in.tellg();
    std::vector<float> v(static_cast<std::size_t>(size) / 4);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), size);
    return v;
}

void write_floats(const std::string& path, const std::vector<float>& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out);
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * 4));
}

}  // namespace

TEST_CASE("serialize/parse round-trips byte-identically") {
    for (bool sparse : {false, true}) {
        const NetworkSpec net = tiny_net(sparse);
        const WeightSet ws = instantiate_weights(net, 31);
        const std::vector<std::uint8_t> bytes = serialize_model(net, ws);
        const auto [net2, ws2] = parse_model(bytes.data(), bytes.size());
        CHECK(net2.name == net.name);
        CHECK(net2.layers.size() == net.layers.size());
        CHECK(net2.layers[1].sparse == net.layers[1].sparse);
        const std::vector<std::uint8_t> again = serialize_model(net2, ws2);
        CHECK(again == bytes);
    }
}

TEST_CASE("round-trip preserves executor results on a real architecture") {
    const NetworkSpec net = build_mbv1(0.25, default_plan("mbv1", 0.9));
    const WeightSet ws = instantiate_weights(net, 5);
    const std::string path = temp_path("spcv_roundtrip.model");
    save_model(net, ws, path);
    const auto [net2, ws2] = load_model(path);

    std::mt19937 rng(7);
    Tensor input(3, 224, 224, Layout::HWC);
    for (float& v : input.data) v = static_cast<float>(rng() % 1000) / 999.0f;
    CHECK(run_network(net, ws, input) == run_network(net2, ws2, input));
    std::filesystem::remove(path);
}

TEST_CASE("two saves of the same model are byte-identical") {
    const NetworkSpec net = tiny_net(true);
    const WeightSet ws = instantiate_weights(net, 99);
    CHECK(serialize_model(net, ws) == serialize_model(net, ws));
}

TEST_CASE("every proper prefix raises TruncatedError") {
    const NetworkSpec net = tiny_net(true);
    const WeightSet ws = instantiate_weights(net, 1);
    const std::vector<std::uint8_t> bytes = serialize_model(net, ws);
    REQUIRE(bytes.size() > 100);
    for (std::size_t len = 0; len < bytes.size(); ++len) {
        CAPTURE(len);
        CHECK_THROWS_AS((void)parse_model(bytes.data(), len), TruncatedError);
    }
}

TEST_CASE("typed errors for targeted corruptions") {
    const NetworkSpec net = tiny_net(true);
    const WeightSet ws = instantiate_weights(net, 2);
    const std::vector<std::uint8_t> bytes = serialize_model(net, ws);

    SUBCASE("bad magic") {
        std::vector<std::uint8_t> b = bytes;
        b[0] = 'X';
        CHECK_THROWS_AS((void)parse_model(b.data(), b.size()), BadMagicError);
    }
    SUBCASE("unsupported version") {
        std::vector<std::uint8_t> b = bytes;
        b[4] = 2;
        CHECK_THROWS_AS((void)parse_model(b.data(), b.size()), UnsupportedVersionError);
    }
    SUBCASE("flipped weight byte fails the checksum") {
        std::vector<std::uint8_t> b = bytes;
        b[b.size() - 5] ^= 0x5A;  // inside the final value array
        CHECK_THROWS_AS((void)parse_model(b.data(), b.size()), ChecksumError);
    }
    SUBCASE("flipped checksum byte") {
        std::vector<std::uint8_t> b = bytes;
        b.back() ^= 0xFF;
        CHECK_THROWS_AS((void)parse_model(b.data(), b.size()), ChecksumError);
    }
    SUBCASE("invalid layer kind is a format error") {
        std::vector<std::uint8_t> b = bytes;
        // Header: magic 4, version 2, name (4 + len), width 4, dims 16,
        // sparsity 8, plan 8, layer count 4; the first layer's kind follows.
        const std::size_t kind_off = 4 + 2 + 4 + net.name.size() + 4 + 16 + 8 + 8 + 4;
        REQUIRE(b[kind_off] == 0);  // entry conv
        b[kind_off] = 9;
        CHECK_THROWS_AS((void)parse_model(b.data(), b.size()), ModelFormatError);
    }
    SUBCASE("trailing garbage") {
        std::vector<std::uint8_t> b = bytes;
        b.push_back(0);
        CHECK_THROWS_AS((void)parse_model(b.data(), b.size()), ModelFormatError);
    }
    SUBCASE("empty buffer") {
        CHECK_THROWS_AS((void)parse_model(bytes.data(), 0), TruncatedError);
    }
}

TEST_CASE("mutation fuzzing yields only typed errors or valid loads") {
    const NetworkSpec net = tiny_net(true);
    const WeightSet ws = instantiate_weights(net, 3);
    const std::vector<std::uint8_t> bytes = serialize_model(net, ws);

    std::mt19937 rng(2024);
    int ok = 0, typed = 0;
    for (int iter = 0; iter < 500; ++iter) {
        std::vector<std::uint8_t> b = bytes;
        const int flips = 1 + static_cast<int>(rng() % 4);
        for (int f = 0; f < flips; ++f)
            b[rng() % b.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        try {
            (void)parse_model(b.data(), b.size());
            ++ok;
        } catch (const ModelIoError&) {
            ++typed;
        }
        // Anything else escapes and fails the test.
    }
    CHECK(ok + typed == 500);
    CHECK(typed > 0);
}

TEST_CASE("missing file") {
    CHECK_THROWS_AS((void)load_model("/nonexistent/model.bin"), ModelIoError);
}

TEST_CASE("dense dump and manifest round-trip through convert") {
    const NetworkSpec net = build_mbv1(0.25, SparsityPlan::dense());
    const WeightSet ws = instantiate_weights(net, 17);
    const std::string dump = temp_path("spcv_dense.dump");
    const std::string manifest = temp_path("spcv_dense.manifest");
    write_dense_dump(net, ws, dump, manifest);

    const auto [net2, ws2] =
        convert_dense_dump(dump, manifest, SparsityPlan::dense(), ConvertMode::MaskFromValues);
    CHECK(net2.name == "mbv1");
    CHECK(net2.layers.size() == net.layers.size());

    std::mt19937 rng(23);
    Tensor input(3, 224, 224, Layout::HWC);
    for (float& v : input.data) v = static_cast<float>(rng() % 1000) / 999.0f;
    CHECK(run_network(net, ws, input) == run_network(net2, ws2, input));

    std::filesystem::remove(dump);
    std::filesystem::remove(manifest);
}

TEST_CASE("convert keeps pre-pruned zeros and records the measured sparsity") {
    SparsityPlan plan;
    plan.sparsity = 0.8;
    plan.block_start_layer = 1;
    plan.block_h_after = 2;
    const NetworkSpec net = build_mbv1(0.25, plan);
    const WeightSet ws = instantiate_weights(net, 19);
    const std::string dump = temp_path("spcv_sparse.dump");
    const std::string manifest = temp_path("spcv_sparse.manifest");
    write_dense_dump(net, ws, dump, manifest);

    const auto [net2, ws2] = convert_dense_dump(dump, manifest, plan, ConvertMode::MaskFromValues);
    for (std::size_t i = 0; i < net2.layers.size(); ++i) {
        const LayerSpec& L = net2.layers[i];
        if (L.kind != LayerKind::Pointwise) continue;
        CHECK(L.sparse);
        CHECK(L.sparsity > 0.7);
        CHECK(L.sparsity < 0.9);
        CHECK(ws2.layers[i].sparse.block_h == 2);
    }

    std::mt19937 rng(29);
    Tensor input(3, 224, 224, Layout::HWC);
    for (float& v : input.data) v = static_cast<float>(rng() % 1000) / 999.0f;
    CHECK(run_network(net, ws, input) == run_network(net2, ws2, input));

    std::filesystem::remove(dump);
    std::filesystem::remove(manifest);
}

TEST_CASE("convert magnitude-prunes a dense dump to the plan sparsity") {
    const NetworkSpec net = build_mbv1(0.25, SparsityPlan::dense());
    const WeightSet ws = instantiate_weights(net, 41);
    const std::string dump = temp_path("spcv_prune.dump");
    const std::string manifest = temp_path("spcv_prune.manifest");
    write_dense_dump(net, ws, dump, manifest);

    const auto [net2, ws2] = convert_dense_dump(dump, manifest, default_plan("mbv1", 0.9),
                                                ConvertMode::MagnitudePrune);
    int sparse_layers = 0;
    for (const LayerSpec& L : net2.layers)
        if (L.sparse) {
            ++sparse_layers;
            CHECK(L.sparsity >= 0.9);
            CHECK(L.sparsity < 0.92);
        }
    CHECK(sparse_layers == 13);

    std::filesystem::remove(dump);
    std::filesystem::remove(manifest);
}

TEST_CASE("convert rejects zeros that break the block structure, naming the block") {
    SparsityPlan plan;
    plan.sparsity = 0.5;
    plan.block_start_layer = 1;
    plan.block_h_after = 2;
    const NetworkSpec net = build_mbv1(0.25, SparsityPlan::dense());
    const WeightSet ws = instantiate_weights(net, 43);
    const std::string dump = temp_path("spcv_broken.dump");
    const std::string manifest = temp_path("spcv_broken.manifest");
    write_dense_dump(net, ws, dump, manifest);

    // Scrub accidental zeros, then zero exactly one member of pw1's first block.
    std::vector<float> flat = read_floats(dump);
    for (float& v : flat)
        if (v == 0.0f) v = 1.0f;
    // Offsets: entry 8*3*9 + bias 8 + dw1 8*9 + bias 8 = 304 floats before pw1.
    flat[304] = 0.0f;
    write_floats(dump, flat);

    try {
        (void)convert_dense_dump(dump, manifest, plan, ConvertMode::MaskFromValues);
        FAIL("expected ConvertError");
    } catch (const ConvertError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("pw1") != std::string::npos);
        CHECK(msg.find("block row 0") != std::string::npos);
        CHECK(msg.find("column 0") != std::string::npos);
    }

    std::filesystem::remove(dump);
    std::filesystem::remove(manifest);
}

TEST_CASE("convert rejects dump/manifest inconsistencies") {
    const NetworkSpec net = build_mbv1(0.25, SparsityPlan::dense());
    const WeightSet ws = instantiate_weights(net, 47);
    const std::string dump = temp_path("spcv_mismatch.dump");
    const std::string manifest = temp_path("spcv_mismatch.manifest");
    write_dense_dump(net, ws, dump, manifest);

    SUBCASE("truncated dump") {
        std::vector<float> flat = read_floats(dump);
        flat.resize(flat.size() - 4);
        write_floats(dump, flat);
        CHECK_THROWS_AS((void)convert_dense_dump(dump, manifest, SparsityPlan::dense(),
                                                 ConvertMode::MaskFromValues),
                        ConvertError);
    }
    SUBCASE("trailing values in the dump") {
        std::vector<float> flat = read_floats(dump);
        flat.push_back(1.0f);
        write_floats(dump, flat);
        CHECK_THROWS_AS((void)convert_dense_dump(dump, manifest, SparsityPlan::dense(),
                                                 ConvertMode::MaskFromValues),
                        ConvertError);
    }
    SUBCASE("renamed manifest tensor") {
        std::ifstream in(manifest);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const std::size_t pos = text.find("pw1 ");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 3, "pwX");
        std::ofstream out(manifest, std::ios::trunc);
        out << text;
        out.close();
        CHECK_THROWS_AS((void)convert_dense_dump(dump, manifest, SparsityPlan::dense(),
                                                 ConvertMode::MaskFromValues),
                        ConvertError);
    }

    std::filesystem::remove(dump);
    std::filesystem::remove(manifest);
}
