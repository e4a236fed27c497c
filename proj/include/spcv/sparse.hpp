#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "spcv/tensor.hpp"

namespace spcv {

/// Inconsistent or malformed sparse structure.
class FormatError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Block shape for pattern generation. Kernels consume output-channel
/// blocking only, so patterns fed to them keep in_block = 1; input-channel
/// blocks exist for pattern generation and counting experiments.
struct BlockConfig {
    int out_block = 1;
    int in_block = 1;

    explicit BlockConfig(int ob = 1, int ib = 1) : out_block(ob), in_block(ib) {
        if ((ob != 1 && ob != 2 && ob != 4) || (ib != 1 && ib != 2 && ib != 4))
            throw FormatError("block sizes must be 1, 2 or 4");
    }
};

/// Bit-packed 0/1 mask over a rows x cols weight matrix, row-major; a set
/// bit marks a kept (nonzero) position.
struct SparsityMask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint64_t> bits;  // ceil(rows*cols / 64) words

    SparsityMask() = default;
    SparsityMask(int r, int c)
        : rows(r), cols(c),
          bits((static_cast<std::size_t>(r) * c + 63) / 64, 0) {
        if (r < 1 || c < 1) throw ShapeError("mask dims must be >= 1");
    }

    bool get(int r, int c) const {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        return (bits[i >> 6] >> (i & 63)) & 1u;
    }
    void set(int r, int c, bool v) {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        const std::uint64_t m = std::uint64_t{1} << (i & 63);
        if (v)
            bits[i >> 6] |= m;
        else
            bits[i >> 6] &= ~m;
    }
    std::size_t popcount() const;
};

/// Block-compressed sparse row storage with Nx1 blocks (N = block_h output
/// channels per block, one input channel wide). A block is kept when any of
/// its N weights is nonzero; kept blocks store all N values, so explicit
/// zeros can appear inside blocks. Column indices within a block row are
/// strictly increasing. `values` holds kept blocks contiguously,
/// output-channel-minor: block b occupies values[b*N .. b*N+N).
struct BcsrMatrix {
    int rows = 0;     // output channels, divisible by block_h
    int cols = 0;     // input channels
    int block_h = 1;  // N
    std::vector<std::uint32_t> row_ptr;  // per block row, length rows/N + 1
    std::vector<std::uint32_t> col_idx;  // one input-channel index per block
    std::vector<float> values;           // col_idx.size() * block_h entries

    int block_rows() const { return rows / block_h; }
    std::size_t nnz_blocks() const { return col_idx.size(); }
    std::size_t nnz_values() const { return values.size(); }

    /// Throws FormatError on any structural inconsistency.
    void validate() const;
};

/// Fraction of zero entries in the mask.
double sparsity_of(const SparsityMask& mask);

/// Storage cost of shipping the mask as a bitmap, in parameter-equivalents:
/// one 32-bit word per 32 mask bits, rounded up.
std::int64_t bitmask_overhead_params(int rows, int cols);

/// Seeded uniform random mask. Zeroes round(tiles * sparsity) whole
/// out_block x in_block tiles, so the achieved sparsity is the closest
/// achievable to the target. rows must divide by out_block, cols by in_block.
SparsityMask generate_mask(int rows, int cols, double sparsity, BlockConfig block,
                           std::uint32_t seed);

/// Zeroes out masked entries of `w` in place.
void apply_mask(DenseMatrix& w, const SparsityMask& mask);

/// Builds BCSR storage from a dense matrix; a block is kept iff any of its
/// entries is nonzero. rows must be divisible by block_h (pad beforehand if
/// not; pad rows must stay zero).
BcsrMatrix encode_bcsr(const DenseMatrix& w, int block_h);

/// Expands BCSR storage back to a dense rows x cols matrix.
DenseMatrix decode_bcsr(const BcsrMatrix& m);

}  // namespace spcv
