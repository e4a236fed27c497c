#include "spcv/sparse.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <string>

namespace spcv {

std::size_t SparsityMask::popcount() const {
    std::size_t n = 0;
    for (std::uint64_t w : bits) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

void BcsrMatrix::validate() const {
    if (rows < 1 || cols < 1) throw FormatError("bcsr: dims must be >= 1");
    if (block_h != 1 && block_h != 2 && block_h != 4)
        throw FormatError("bcsr: block height must be 1, 2 or 4");
    if (rows % block_h != 0)
        throw FormatError("bcsr: rows " + std::to_string(rows) +
                          " not divisible by block height " + std::to_string(block_h));
    const std::size_t brows = static_cast<std::size_t>(block_rows());
    if (row_ptr.size() != brows + 1)
        throw FormatError("bcsr: row_ptr length " + std::to_string(row_ptr.size()) +
                          " != block rows + 1 (" + std::to_string(brows + 1) + ")");
    if (row_ptr.front() != 0) throw FormatError("bcsr: row_ptr[0] != 0");
    for (std::size_t r = 0; r < brows; ++r)
        if (row_ptr[r] > row_ptr[r + 1])
            throw FormatError("bcsr: row_ptr not non-decreasing at block row " + std::to_string(r));
    if (row_ptr.back() != col_idx.size())
        throw FormatError("bcsr: row_ptr[-1] " + std::to_string(row_ptr.back()) +
                          " != block count " + std::to_string(col_idx.size()));
    if (values.size() != col_idx.size() * static_cast<std::size_t>(block_h))
        throw FormatError("bcsr: values length != block count * block height");
    for (std::size_t r = 0; r < brows; ++r) {
        std::uint32_t prev = 0;
        bool first = true;
        for (std::uint32_t b = row_ptr[r]; b < row_ptr[r + 1]; ++b) {
            const std::uint32_t c = col_idx[b];
            if (c >= static_cast<std::uint32_t>(cols))
                throw FormatError("bcsr: column index " + std::to_string(c) +
                                  " out of range in block row " + std::to_string(r));
            if (!first && c <= prev)
                throw FormatError("bcsr: column indices not strictly increasing in block row " +
                                  std::to_string(r));
            prev = c;
            first = false;
        }
    }
}

double sparsity_of(const SparsityMask& mask) {
    const std::size_t total = static_cast<std::size_t>(mask.rows) * mask.cols;
    return 1.0 - static_cast<double>(mask.popcount()) / static_cast<double>(total);
}

std::int64_t bitmask_overhead_params(int rows, int cols) {
    const std::int64_t bits = static_cast<std::int64_t>(rows) * cols;
    return (bits + 31) / 32;
}

SparsityMask generate_mask(int rows, int cols, double sparsity, BlockConfig block,
                           std::uint32_t seed) {
    if (sparsity < 0.0 || sparsity >= 1.0)
        throw std::invalid_argument("sparsity must be in [0, 1)");
    if (rows % block.out_block != 0)
        throw FormatError("generate_mask: rows not divisible by out_block");
    if (cols % block.in_block != 0)
        throw FormatError("generate_mask: cols not divisible by in_block");

    const int trows = rows / block.out_block;
    const int tcols = cols / block.in_block;
    const std::size_t tiles = static_cast<std::size_t>(trows) * tcols;
    const std::size_t zeroed = static_cast<std::size_t>(
        std::llround(static_cast<double>(tiles) * sparsity));

    std::vector<std::uint32_t> pos(tiles);
    for (std::size_t i = 0; i < tiles; ++i) pos[i] = static_cast<std::uint32_t>(i);
    std::mt19937 rng(seed);
    // Partial Fisher-Yates: only the first `zeroed` slots matter.
    for (std::size_t i = 0; i < zeroed && i + 1 < tiles; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, tiles - 1);
        std::swap(pos[i], pos[d(rng)]);
    }

    SparsityMask mask(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) mask.set(r, c, true);
    for (std::size_t i = 0; i < zeroed; ++i) {
        const int tr = static_cast<int>(pos[i] / tcols);
        const int tc = static_cast<int>(pos[i] % tcols);
        for (int dr = 0; dr < block.out_block; ++dr)
            for (int dc = 0; dc < block.in_block; ++dc)
                mask.set(tr * block.out_block + dr, tc * block.in_block + dc, false);
    }
    return mask;
}

void apply_mask(DenseMatrix& w, const SparsityMask& mask) {
    if (w.rows != mask.rows || w.cols != mask.cols)
        throw ShapeError("apply_mask: matrix/mask shape mismatch");
    for (int r = 0; r < w.rows; ++r)
        for (int c = 0; c < w.cols; ++c)
            if (!mask.get(r, c)) w(r, c) = 0.0f;
}

BcsrMatrix encode_bcsr(const DenseMatrix& w, int block_h) {
    if (block_h != 1 && block_h != 2 && block_h != 4)
        throw FormatError("encode_bcsr: block height must be 1, 2 or 4");
    if (w.rows % block_h != 0)
        throw ShapeError("encode_bcsr: rows " + std::to_string(w.rows) +
                         " not divisible by block height " + std::to_string(block_h));

    BcsrMatrix m;
    m.rows = w.rows;
    m.cols = w.cols;
    m.block_h = block_h;
    const int brows = m.block_rows();
    m.row_ptr.reserve(static_cast<std::size_t>(brows) + 1);
    m.row_ptr.push_back(0);
    for (int br = 0; br < brows; ++br) {
        for (int c = 0; c < w.cols; ++c) {
            bool keep = false;
            for (int n = 0; n < block_h && !keep; ++n)
                if (w(br * block_h + n, c) != 0.0f) keep = true;
            if (!keep) continue;
            m.col_idx.push_back(static_cast<std::uint32_t>(c));
            for (int n = 0; n < block_h; ++n) m.values.push_back(w(br * block_h + n, c));
        }
        m.row_ptr.push_back(static_cast<std::uint32_t>(m.col_idx.size()));
    }
    return m;
}

DenseMatrix decode_bcsr(const BcsrMatrix& m) {
    m.validate();
    DenseMatrix w(m.rows, m.cols);
    const int brows = m.block_rows();
    for (int br = 0; br < brows; ++br) {
        for (std::uint32_t b = m.row_ptr[br]; b < m.row_ptr[br + 1]; ++b) {
            const int c = static_cast<int>(m.col_idx[b]);
            for (int n = 0; n < m.block_h; ++n)
                w(br * m.block_h + n, c) = m.values[static_cast<std::size_t>(b) * m.block_h + n];
        }
    }
    return w;
}

}  // namespace spcv
