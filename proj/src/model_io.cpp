#include "spcv/model_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spcv/pruning.hpp"

namespace spcv {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'V'};

// ------------------------------------------------------------------- writing

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) {
        buf.push_back(static_cast<std::uint8_t>(v));
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }
    void f32_array(const std::vector<float>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        for (float x : v) f32(x);
    }
    void u32_array(const std::vector<std::uint32_t>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        for (std::uint32_t x : v) u32(x);
    }
};

// ------------------------------------------------------------------- reading

struct Cursor {
    const std::uint8_t* p;
    std::size_t size;
    std::size_t off = 0;

    void need(std::size_t n) const {
        if (n > size - off)
            throw TruncatedError("model file truncated at offset " + std::to_string(off));
    }
    std::uint8_t u8() {
        need(1);
        return p[off++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
        off += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);  // bound the allocation by the bytes actually present
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
    std::vector<float> f32_array() {
        const std::uint32_t n = u32();
        need(static_cast<std::size_t>(n) * 4);
        std::vector<float> v(n);
        for (std::uint32_t i = 0; i < n; ++i) v[i] = f32();
        return v;
    }
    std::vector<std::uint32_t> u32_array() {
        const std::uint32_t n = u32();
        need(static_cast<std::size_t>(n) * 4);
        std::vector<std::uint32_t> v(n);
        for (std::uint32_t i = 0; i < n; ++i) v[i] = u32();
        return v;
    }
};

enum : std::uint8_t {
    kStorageNone = 0,
    kStorageConv = 1,
    kStorageDepthwise = 2,
    kStorageDense = 3,
    kStorageBcsr = 4,
};

void check(bool ok, const std::string& what) {
    if (!ok) throw ModelFormatError("model file invalid: " + what);
}

int padded_rows(int cout, int block_h) { return (cout + block_h - 1) / block_h * block_h; }

}  // namespace

std::vector<std::uint8_t> serialize_model(const NetworkSpec& net, const WeightSet& ws) {
    net.validate();
    if (ws.layers.size() != net.layers.size())
        throw ModelFormatError("serialize: weight set does not match network");

    ByteWriter w;
    w.buf.insert(w.buf.end(), kMagic, kMagic + 4);
    w.u16(kModelFormatVersion);
    w.str(net.name);
    w.u32(static_cast<std::uint32_t>(std::llround(net.width_multiplier * 1000.0)));
    w.u32(static_cast<std::uint32_t>(net.input_h));
    w.u32(static_cast<std::uint32_t>(net.input_w));
    w.u32(static_cast<std::uint32_t>(net.input_c));
    w.u32(static_cast<std::uint32_t>(net.num_classes));
    w.f64(net.plan.sparsity);
    w.u32(static_cast<std::uint32_t>(net.plan.block_start_layer));
    w.u32(static_cast<std::uint32_t>(net.plan.block_h_after));
    w.u32(static_cast<std::uint32_t>(net.layers.size()));

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& L = net.layers[i];
        const LayerWeights& lw = ws.layers[i];
        w.u8(static_cast<std::uint8_t>(L.kind));
        w.str(L.name);
        w.u32(static_cast<std::uint32_t>(L.cin));
        w.u32(static_cast<std::uint32_t>(L.cout));
        w.u32(static_cast<std::uint32_t>(L.stride));
        w.u32(static_cast<std::uint32_t>(L.in_h));
        w.u32(static_cast<std::uint32_t>(L.in_w));
        w.u32(static_cast<std::uint32_t>(L.out_h));
        w.u32(static_cast<std::uint32_t>(L.out_w));
        w.u8(L.sparse ? 1 : 0);
        w.f64(L.sparsity);
        w.u32(static_cast<std::uint32_t>(L.block_h));
        w.u8(static_cast<std::uint8_t>(L.act.kind));
        w.f32(L.act.lo);
        w.f32(L.act.hi);
        w.i32(L.residual_src);
        w.f32_array(lw.bias);

        switch (L.kind) {
            case LayerKind::GlobalPool:
                w.u8(kStorageNone);
                break;
            case LayerKind::EntryConv:
                w.u8(kStorageConv);
                w.u32(static_cast<std::uint32_t>(lw.conv.cout));
                w.u32(static_cast<std::uint32_t>(lw.conv.cin));
                w.u32(static_cast<std::uint32_t>(lw.conv.kh));
                w.u32(static_cast<std::uint32_t>(lw.conv.kw));
                w.f32_array(lw.conv.data);
                break;
            case LayerKind::Depthwise:
                w.u8(kStorageDepthwise);
                w.u32(static_cast<std::uint32_t>(lw.dw.channels));
                w.f32_array(lw.dw.data);
                break;
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected:
                if (lw.is_sparse) {
                    w.u8(kStorageBcsr);
                    w.u32(static_cast<std::uint32_t>(lw.sparse.rows));
                    w.u32(static_cast<std::uint32_t>(lw.sparse.cols));
                    w.u32(static_cast<std::uint32_t>(lw.sparse.block_h));
                    w.u32_array(lw.sparse.row_ptr);
                    w.u32_array(lw.sparse.col_idx);
                    w.f32_array(lw.sparse.values);
                } else {
                    w.u8(kStorageDense);
                    w.u32(static_cast<std::uint32_t>(lw.dense.rows));
                    w.u32(static_cast<std::uint32_t>(lw.dense.cols));
                    w.f32_array(lw.dense.data);
                }
                break;
        }
    }

    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, w.buf.data(), static_cast<uInt>(w.buf.size())));
    w.u32(crc);
    return w.buf;
}

void save_model(const NetworkSpec& net, const WeightSet& ws, const std::string& path) {
    const std::vector<std::uint8_t> bytes = serialize_model(net, ws);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelIoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ModelIoError("write failed for '" + path + "'");
}

std::pair<NetworkSpec, WeightSet> parse_model(const std::uint8_t* data, std::size_t size) {
    Cursor c{data, size};
    c.need(4);
    if (std::memcmp(data, kMagic, 4) != 0)
        throw BadMagicError("not a model file (bad magic)");
    c.off = 4;
    const std::uint16_t version = c.u16();
    if (version != kModelFormatVersion)
        throw UnsupportedVersionError("unsupported model format version " +
                                      std::to_string(version));

    NetworkSpec net;
    net.name = c.str();
    net.width_multiplier = static_cast<double>(c.u32()) / 1000.0;
    net.input_h = static_cast<int>(c.u32());
    net.input_w = static_cast<int>(c.u32());
    net.input_c = static_cast<int>(c.u32());
    net.num_classes = static_cast<int>(c.u32());
    net.plan.sparsity = c.f64();
    net.plan.block_start_layer = static_cast<int>(c.u32());
    net.plan.block_h_after = static_cast<int>(c.u32());
    const std::uint32_t layer_count = c.u32();

    WeightSet ws;
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        LayerSpec L;
        const std::uint8_t kind = c.u8();
        check(kind <= static_cast<std::uint8_t>(LayerKind::FullyConnected),
              "unknown layer kind " + std::to_string(kind));
        L.kind = static_cast<LayerKind>(kind);
        L.name = c.str();
        L.cin = static_cast<int>(c.u32());
        L.cout = static_cast<int>(c.u32());
        L.stride = static_cast<int>(c.u32());
        L.in_h = static_cast<int>(c.u32());
        L.in_w = static_cast<int>(c.u32());
        L.out_h = static_cast<int>(c.u32());
        L.out_w = static_cast<int>(c.u32());
        L.sparse = c.u8() != 0;
        L.sparsity = c.f64();
        L.block_h = static_cast<int>(c.u32());
        const std::uint8_t act_kind = c.u8();
        check(act_kind <= static_cast<std::uint8_t>(Activation::Kind::Clamp),
              "unknown activation kind");
        const float lo = c.f32();
        const float hi = c.f32();
        if (act_kind == static_cast<std::uint8_t>(Activation::Kind::Clamp)) {
            check(lo < hi, "activation clamp bounds");
            L.act = Activation::clamp(lo, hi);
        }
        L.residual_src = c.i32();

        LayerWeights lw;
        lw.bias = c.f32_array();
        const std::uint8_t storage = c.u8();
        switch (L.kind) {
            case LayerKind::GlobalPool:
                check(storage == kStorageNone, "pooling layer carries weights");
                check(lw.bias.empty(), "pooling layer carries a bias");
                break;
            case LayerKind::EntryConv: {
                check(storage == kStorageConv, "entry layer storage tag");
                const int co = static_cast<int>(c.u32());
                const int ci = static_cast<int>(c.u32());
                const int kh = static_cast<int>(c.u32());
                const int kw = static_cast<int>(c.u32());
                check(co == L.cout && ci == L.cin && kh == 3 && kw == 3,
                      "entry convolution dims for layer " + L.name);
                lw.conv = ConvWeights(co, ci, kh, kw);
                lw.conv.data = c.f32_array();
                check(lw.conv.data.size() == static_cast<std::size_t>(co) * ci * kh * kw,
                      "entry convolution value count for layer " + L.name);
                break;
            }
            case LayerKind::Depthwise: {
                check(storage == kStorageDepthwise, "depthwise layer storage tag");
                const int ch = static_cast<int>(c.u32());
                check(ch == L.cout, "depthwise channel count for layer " + L.name);
                lw.dw = DepthwiseWeights(ch);
                lw.dw.data = c.f32_array();
                check(lw.dw.data.size() == static_cast<std::size_t>(ch) * 9,
                      "depthwise value count for layer " + L.name);
                break;
            }
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected: {
                if (storage == kStorageDense) {
                    const int rows = static_cast<int>(c.u32());
                    const int cols = static_cast<int>(c.u32());
                    check(rows == L.cout && cols == L.cin,
                          "dense matrix dims for layer " + L.name);
                    lw.dense = DenseMatrix(rows, cols);
                    lw.dense.data = c.f32_array();
                    check(lw.dense.data.size() == static_cast<std::size_t>(rows) * cols,
                          "dense value count for layer " + L.name);
                } else if (storage == kStorageBcsr) {
                    lw.is_sparse = true;
                    lw.sparse.rows = static_cast<int>(c.u32());
                    lw.sparse.cols = static_cast<int>(c.u32());
                    lw.sparse.block_h = static_cast<int>(c.u32());
                    lw.sparse.row_ptr = c.u32_array();
                    lw.sparse.col_idx = c.u32_array();
                    lw.sparse.values = c.f32_array();
                    try {
                        lw.sparse.validate();
                    } catch (const FormatError& e) {
                        throw ModelFormatError("layer " + L.name + ": " + e.what());
                    }
                    check(lw.sparse.cols == L.cin, "sparse matrix cols for layer " + L.name);
                    check(lw.sparse.block_h == L.block_h,
                          "sparse block height for layer " + L.name);
                    check(lw.sparse.rows == padded_rows(L.cout, L.block_h),
                          "sparse matrix rows for layer " + L.name);
                } else {
                    throw ModelFormatError("model file invalid: 1x1 layer storage tag");
                }
                check(lw.bias.size() == static_cast<std::size_t>(L.cout),
                      "bias length for layer " + L.name);
                break;
            }
        }
        if (L.kind == LayerKind::EntryConv || L.kind == LayerKind::Depthwise)
            check(lw.bias.size() == static_cast<std::size_t>(L.cout),
                  "bias length for layer " + L.name);
        net.layers.push_back(std::move(L));
        ws.layers.push_back(std::move(lw));
    }

    // Whole-body checksum sits after the last record.
    const std::size_t body_end = c.off;
    const std::uint32_t stored_crc = c.u32();
    if (c.off != size)
        throw ModelFormatError("model file invalid: trailing bytes after checksum");
    const std::uint32_t actual_crc =
        static_cast<std::uint32_t>(crc32(0L, data, static_cast<uInt>(body_end)));
    if (stored_crc != actual_crc) throw ChecksumError("model file checksum mismatch");

    try {
        net.validate();
    } catch (const std::exception& e) {
        throw ModelFormatError(std::string("model file invalid: ") + e.what());
    }
    return {std::move(net), std::move(ws)};
}

std::pair<NetworkSpec, WeightSet> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelIoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_model(bytes.data(), bytes.size());
}

// ----------------------------------------------------------------- dense dump

void write_dense_dump(const NetworkSpec& net, const WeightSet& ws,
                      const std::string& dump_path, const std::string& manifest_path) {
    net.validate();
    if (ws.layers.size() != net.layers.size())
        throw ModelFormatError("dump: weight set does not match network");

    std::ofstream manifest(manifest_path, std::ios::trunc);
    if (!manifest) throw ModelIoError("cannot open '" + manifest_path + "' for writing");
    std::ofstream dump(dump_path, std::ios::binary | std::ios::trunc);
    if (!dump) throw ModelIoError("cannot open '" + dump_path + "' for writing");

    manifest << "arch " << net.name << "\n";
    manifest << "width " << std::llround(net.width_multiplier * 1000.0) / 1000.0 << "\n";
    manifest << "classes " << net.num_classes << "\n";

    auto emit = [&](const std::string& name, const std::vector<int>& dims,
                    const std::vector<float>& data) {
        manifest << name;
        for (int d : dims) manifest << ' ' << d;
        manifest << "\n";
        dump.write(reinterpret_cast<const char*>(data.data()),
                   static_cast<std::streamsize>(data.size() * sizeof(float)));
    };

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& L = net.layers[i];
        const LayerWeights& lw = ws.layers[i];
        switch (L.kind) {
            case LayerKind::GlobalPool:
                break;
            case LayerKind::EntryConv:
                emit(L.name, {L.cout, L.cin, 3, 3}, lw.conv.data);
                emit(L.name + "_bias", {L.cout}, lw.bias);
                break;
            case LayerKind::Depthwise:
                emit(L.name, {L.cout, 3, 3}, lw.dw.data);
                emit(L.name + "_bias", {L.cout}, lw.bias);
                break;
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected: {
                const DenseMatrix d = dense_weights_of(L, lw);
                emit(L.name, {L.cout, L.cin}, d.data);
                emit(L.name + "_bias", {L.cout}, lw.bias);
                break;
            }
        }
    }
    if (!dump || !manifest) throw ModelIoError("dump write failed");
}

namespace {

struct ManifestEntry {
    std::string name;
    std::vector<int> dims;
};

struct Manifest {
    std::string arch;
    double width = 1.0;
    int classes = 1000;
    std::vector<ManifestEntry> tensors;
};

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelIoError("cannot open '" + path + "' for reading");
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string head;
        ss >> head;
        if (head == "arch") {
            ss >> m.arch;
        } else if (head == "width") {
            ss >> m.width;
        } else if (head == "classes") {
            ss >> m.classes;
        } else {
            ManifestEntry e;
            e.name = head;
            int d = 0;
            while (ss >> d) e.dims.push_back(d);
            if (e.dims.empty())
                throw ConvertError("manifest entry '" + head + "' has no dims");
            m.tensors.push_back(std::move(e));
        }
    }
    if (m.arch.empty()) throw ConvertError("manifest missing 'arch' line");
    return m;
}

std::vector<float> read_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ModelIoError("cannot open '" + path + "' for reading");
    const std::streamsize size = in.tellg();
    if (size % 4 != 0) throw ConvertError("dump size is not a multiple of 4 bytes");
    in.seekg(0);
    std::vector<float> v(static_cast<std::size_t>(size) / 4);
    in.read(reinterpret_cast<char*>(v.data()), size);
    if (!in) throw ModelIoError("dump read failed");
    return v;
}

void expect_tensor(const Manifest& m, std::size_t idx, const std::string& name,
                   const std::vector<int>& dims) {
    if (idx >= m.tensors.size())
        throw ConvertError("manifest ends early; expected tensor '" + name + "'");
    const ManifestEntry& e = m.tensors[idx];
    if (e.name != name)
        throw ConvertError("manifest tensor " + std::to_string(idx) + " is '" + e.name +
                           "', expected '" + name + "'");
    if (e.dims != dims) {
        std::string got, want;
        for (int d : e.dims) got += std::to_string(d) + " ";
        for (int d : dims) want += std::to_string(d) + " ";
        throw ConvertError("tensor '" + name + "' dims [" + got + "] do not match expected [" +
                           want + "]");
    }
}

}  // namespace

std::pair<NetworkSpec, WeightSet> convert_dense_dump(const std::string& dump_path,
                                                     const std::string& manifest_path,
                                                     const SparsityPlan& plan,
                                                     ConvertMode mode) {
    const Manifest m = read_manifest(manifest_path);
    const std::vector<float> flat = read_dump(dump_path);
    NetworkSpec net = build_network(m.arch, m.width, plan);
    if (m.classes != net.num_classes)
        throw ConvertError("manifest class count " + std::to_string(m.classes) +
                           " unsupported (expected " + std::to_string(net.num_classes) + ")");

    std::size_t tensor_idx = 0;
    std::size_t off = 0;
    auto take = [&](const std::string& name, const std::vector<int>& dims) {
        expect_tensor(m, tensor_idx++, name, dims);
        std::size_t count = 1;
        for (int d : dims) count *= static_cast<std::size_t>(d);
        if (off + count > flat.size())
            throw ConvertError("dump ends early in tensor '" + name + "'");
        std::vector<float> v(flat.begin() + static_cast<std::ptrdiff_t>(off),
                             flat.begin() + static_cast<std::ptrdiff_t>(off + count));
        off += count;
        return v;
    };

    WeightSet ws;
    for (LayerSpec& L : net.layers) {
        LayerWeights lw;
        switch (L.kind) {
            case LayerKind::GlobalPool:
                break;
            case LayerKind::EntryConv:
                lw.conv = ConvWeights(L.cout, L.cin, 3, 3);
                lw.conv.data = take(L.name, {L.cout, L.cin, 3, 3});
                lw.bias = take(L.name + "_bias", {L.cout});
                break;
            case LayerKind::Depthwise:
                lw.dw = DepthwiseWeights(L.cout);
                lw.dw.data = take(L.name, {L.cout, 3, 3});
                lw.bias = take(L.name + "_bias", {L.cout});
                break;
            case LayerKind::Pointwise:
            case LayerKind::FullyConnected: {
                DenseMatrix d(L.cout, L.cin);
                d.data = take(L.name, {L.cout, L.cin});
                lw.bias = take(L.name + "_bias", {L.cout});
                const bool eligible = L.kind == LayerKind::Pointwise;
                if (!eligible) {
                    L.sparse = false;
                    L.sparsity = 0.0;
                    lw.dense = std::move(d);
                    break;
                }
                const int block_h = L.block_h == 0 ? 1 : L.block_h;
                if (mode == ConvertMode::MagnitudePrune && plan.sparsity > 0.0) {
                    const SparsityMask mask =
                        magnitude_mask(d, plan.sparsity, BlockConfig(block_h, 1));
                    apply_mask(d, mask);
                }
                if (mode == ConvertMode::MaskFromValues && block_h > 1) {
                    // The dump's zeros must already share fate within blocks.
                    for (int br = 0; br < L.cout / block_h; ++br) {
                        for (int col = 0; col < L.cin; ++col) {
                            int nz = 0;
                            for (int n = 0; n < block_h; ++n)
                                if (d(br * block_h + n, col) != 0.0f) ++nz;
                            if (nz != 0 && nz != block_h)
                                throw ConvertError(
                                    "layer " + L.name + ": zeros not block-consistent at block row " +
                                    std::to_string(br) + ", column " + std::to_string(col));
                        }
                    }
                }
                // Measure what actually survived; the layer records the real fraction.
                std::size_t zeros = 0;
                for (float x : d.data)
                    if (x == 0.0f) ++zeros;
                const double measured =
                    static_cast<double>(zeros) / static_cast<double>(d.data.size());
                if (measured > 0.0 && measured < 1.0) {
                    L.sparse = true;
                    L.sparsity = measured;
                } else {
                    L.sparse = false;
                    L.sparsity = 0.0;
                }
                if (L.cout % block_h != 0) {
                    DenseMatrix p(padded_rows(L.cout, block_h), L.cin);
                    std::copy(d.data.begin(), d.data.end(), p.data.begin());
                    lw.sparse = encode_bcsr(p, block_h);
                } else {
                    lw.sparse = encode_bcsr(d, block_h);
                }
                lw.is_sparse = true;
                break;
            }
        }
        ws.layers.push_back(std::move(lw));
    }
    if (tensor_idx != m.tensors.size())
        throw ConvertError("manifest has " + std::to_string(m.tensors.size() - tensor_idx) +
                           " unexpected trailing tensors");
    if (off != flat.size())
        throw ConvertError("dump has " + std::to_string(flat.size() - off) +
                           " unexpected trailing values");
    net.validate();
    return {std::move(net), std::move(ws)};
}

}  // namespace spcv
