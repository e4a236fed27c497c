#pragma once

#include <cstdint>
#include <vector>

#include "spcv/sparse.hpp"
#include "spcv/tensor.hpp"

namespace spcv {

/// Gradual magnitude pruning schedule: sparsity ramps from s_initial at
/// t_start to s_final at t_end along a cubic, updating every `frequency`
/// steps.
struct PruneSchedule {
    double s_initial = 0.0;
    double s_final = 0.9;
    std::int64_t t_start = 0;
    std::int64_t t_end = 1;
    std::int64_t frequency = 1;

    /// Throws std::invalid_argument on an inconsistent schedule.
    void validate() const;

    /// Number of pruning events: one at t_start, then every `frequency`
    /// steps through t_end inclusive.
    std::int64_t steps() const { return (t_end - t_start) / frequency + 1; }
};

/// Scheduled sparsity at step t: 0 before t_start, s_final after t_end,
/// otherwise s_final + (s_initial - s_final) * (1 - (t' - t_start)/(t_end -
/// t_start))^3 with t' = t rounded down to the last pruning event.
double target_sparsity(const PruneSchedule& sched, std::int64_t t);

/// Magnitude-based mask: scores each out_block x in_block tile by the sum of
/// absolute values of its members and zeroes the lowest-scoring tiles until
/// the achieved sparsity reaches the target with minimal overshoot. Ties
/// break toward pruning the lower flat tile index.
SparsityMask magnitude_mask(const DenseMatrix& w, double sparsity, BlockConfig block);

/// Runs the schedule over a sequence of weight snapshots, one per pruning
/// event, returning the mask extracted at each event. Expects exactly
/// sched.steps() snapshots. When the snapshots hold previously pruned
/// weights at zero, successive masks prune nested supersets.
std::vector<SparsityMask> apply_schedule_trace(const std::vector<DenseMatrix>& snapshots,
                                               const PruneSchedule& sched,
                                               BlockConfig block = BlockConfig{});

}  // namespace spcv
