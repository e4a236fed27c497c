#include "spcv/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace spcv {

void PruneSchedule::validate() const {
    if (!(0.0 <= s_initial && s_initial <= s_final && s_final < 1.0))
        throw std::invalid_argument("schedule requires 0 <= s_initial <= s_final < 1");
    if (t_start >= t_end) throw std::invalid_argument("schedule requires t_start < t_end");
    if (frequency <= 0) throw std::invalid_argument("schedule requires frequency > 0");
    if ((t_end - t_start) % frequency != 0)
        throw std::invalid_argument("schedule span must be a multiple of frequency");
}

double target_sparsity(const PruneSchedule& sched, std::int64_t t) {
    sched.validate();
    if (t < sched.t_start) return 0.0;
    if (t > sched.t_end) return sched.s_final;
    // Sparsity only moves at pruning events: round t down to the last one.
    const std::int64_t tq =
        sched.t_start + (t - sched.t_start) / sched.frequency * sched.frequency;
    const double frac = static_cast<double>(tq - sched.t_start) /
                        static_cast<double>(sched.t_end - sched.t_start);
    const double r = 1.0 - frac;
    return sched.s_final + (sched.s_initial - sched.s_final) * r * r * r;
}

SparsityMask magnitude_mask(const DenseMatrix& w, double sparsity, BlockConfig block) {
    if (sparsity < 0.0 || sparsity >= 1.0)
        throw std::invalid_argument("sparsity must be in [0, 1)");
    if (w.rows % block.out_block != 0)
        throw FormatError("magnitude_mask: rows not divisible by out_block");
    if (w.cols % block.in_block != 0)
        throw FormatError("magnitude_mask: cols not divisible by in_block");

    const int trows = w.rows / block.out_block;
    const int tcols = w.cols / block.in_block;
    const std::size_t tiles = static_cast<std::size_t>(trows) * tcols;
    // Smallest tile count whose removal reaches the target sparsity.
    const std::size_t zeroed = static_cast<std::size_t>(
        std::ceil(static_cast<double>(tiles) * sparsity - 1e-12));

    std::vector<double> score(tiles, 0.0);
    for (int r = 0; r < w.rows; ++r)
        for (int c = 0; c < w.cols; ++c)
            score[static_cast<std::size_t>(r / block.out_block) * tcols + c / block.in_block] +=
                std::abs(static_cast<double>(w(r, c)));

    std::vector<std::uint32_t> order(tiles);
    std::iota(order.begin(), order.end(), 0u);
    // Lowest score first; equal scores prune the lower flat index first.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return score[a] < score[b]; });

    SparsityMask mask(w.rows, w.cols);
    for (int r = 0; r < w.rows; ++r)
        for (int c = 0; c < w.cols; ++c) mask.set(r, c, true);
    for (std::size_t i = 0; i < zeroed; ++i) {
        const int tr = static_cast<int>(order[i] / tcols);
        const int tc = static_cast<int>(order[i] % tcols);
        for (int dr = 0; dr < block.out_block; ++dr)
            for (int dc = 0; dc < block.in_block; ++dc)
                mask.set(tr * block.out_block + dr, tc * block.in_block + dc, false);
    }
    return mask;
}

std::vector<SparsityMask> apply_schedule_trace(const std::vector<DenseMatrix>& snapshots,
                                               const PruneSchedule& sched, BlockConfig block) {
    sched.validate();
    const std::int64_t n = sched.steps();
    if (static_cast<std::int64_t>(snapshots.size()) != n)
        throw std::invalid_argument("apply_schedule_trace: expected " + std::to_string(n) +
                                    " snapshots, got " + std::to_string(snapshots.size()));
    std::vector<SparsityMask> masks;
    masks.reserve(snapshots.size());
    for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t t = sched.t_start + k * sched.frequency;
        masks.push_back(magnitude_mask(snapshots[static_cast<std::size_t>(k)],
                                       target_sparsity(sched, t), block));
    }
    return masks;
}

}  // namespace spcv
