#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "spcv/pruning.hpp"

using namespace spcv;

namespace {

PruneSchedule paper_schedule() {
    PruneSchedule s;
    s.s_initial = 0.0;
    s.s_final = 0.9;
    s.t_start = 28000;
    s.t_end = 112000;
    s.frequency = 2000;
    return s;
}

double retained_l1(const DenseMatrix& w, const SparsityMask& mask) {
    double sum = 0.0;
    for (int r = 0; r < w.rows; ++r)
        for (int c = 0; c < w.cols; ++c)
            if (mask.get(r, c)) sum += std::abs(static_cast<double>(w(r, c)));
    return sum;
}

}  // namespace

TEST_CASE("schedule validation") {
    PruneSchedule s = paper_schedule();
    s.validate();
    SUBCASE("start after end") {
        s.t_start = s.t_end + 1;
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    }
    SUBCASE("frequency must divide the span") {
        s.frequency = 9000;  // 84000 % 9000 != 0
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    }
    SUBCASE("final sparsity below initial") {
        s.s_initial = 0.95;
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    }
    SUBCASE("final sparsity must stay below 1") {
        s.s_final = 1.0;
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    }
}

TEST_CASE("target_sparsity endpoints and midpoint") {
    const PruneSchedule s = paper_schedule();
    CHECK(target_sparsity(s, 0) == 0.0);
    CHECK(target_sparsity(s, 27999) == 0.0);
    CHECK(target_sparsity(s, 28000) == s.s_initial);
    CHECK(target_sparsity(s, 112000) == s.s_final);
    CHECK(target_sparsity(s, 500000) == s.s_final);
    // Midpoint of the ramp: 0.9 * (1 - 0.5^3) = 0.7875.
    CHECK(std::abs(target_sparsity(s, 70000) - 0.7875) <= 1e-12);
}

TEST_CASE("target_sparsity is flat between pruning events") {
    const PruneSchedule s = paper_schedule();
    const double at_event = target_sparsity(s, 70000);
    for (std::int64_t t : {70001, 70500, 71999})
        CHECK(target_sparsity(s, t) == at_event);
    CHECK(target_sparsity(s, 72000) > at_event);
}

TEST_CASE("target_sparsity is monotone nondecreasing") {
    const PruneSchedule s = paper_schedule();
    double prev = -1.0;
    for (std::int64_t t = 0; t <= 130000; t += 137) {
        const double v = target_sparsity(s, t);
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("nonzero initial sparsity jumps at t_start") {
    PruneSchedule s = paper_schedule();
    s.s_initial = 0.5;
    CHECK(target_sparsity(s, 27999) == 0.0);
    CHECK(target_sparsity(s, 28000) == 0.5);
    CHECK(target_sparsity(s, 112000) == 0.9);
}

TEST_CASE("magnitude_mask hand case keeps the two largest magnitudes") {
    DenseMatrix w(2, 2);
    w(0, 0) = 1.0f;
    w(0, 1) = -5.0f;
    w(1, 0) = 0.1f;
    w(1, 1) = 2.0f;
    const SparsityMask m = magnitude_mask(w, 0.5, BlockConfig(1, 1));
    CHECK_FALSE(m.get(0, 0));
    CHECK(m.get(0, 1));
    CHECK_FALSE(m.get(1, 0));
    CHECK(m.get(1, 1));
}

TEST_CASE("magnitude_mask rounds the pruned-tile count up") {
    DenseMatrix w(3, 3);
    for (std::size_t i = 0; i < 9; ++i) w.data[i] = static_cast<float>(i + 1);
    const SparsityMask m = magnitude_mask(w, 0.5, BlockConfig(1, 1));
    // ceil(9 * 0.5) = 5 pruned; the smallest five magnitudes 1..5 go.
    CHECK(m.popcount() == 4);
    for (int v = 6; v <= 9; ++v) {
        const int idx = v - 1;
        CHECK(m.get(idx / 3, idx % 3));
    }
}

TEST_CASE("magnitude_mask with block 1 equals sorting by absolute value") {
    std::mt19937 rng(71);
    for (int iter = 0; iter < 10; ++iter) {
        DenseMatrix w(6, 5);
        for (float& v : w.data) v = static_cast<float>(rng() % 20000) / 999.0f - 10.0f;
        const double s = (1 + rng() % 9) / 10.0;
        const SparsityMask m = magnitude_mask(w, s, BlockConfig(1, 1));

        std::vector<float> mags;
        for (float v : w.data) mags.push_back(std::abs(v));
        std::sort(mags.begin(), mags.end());
        const std::size_t pruned = w.data.size() - m.popcount();
        CHECK(pruned == static_cast<std::size_t>(
                            std::ceil(static_cast<double>(w.data.size()) * s - 1e-12)));
        // Every kept entry is at least as large as every pruned one.
        const float threshold = mags[pruned - 1];
        for (int r = 0; r < w.rows; ++r)
            for (int c = 0; c < w.cols; ++c)
                if (m.get(r, c)) CHECK(std::abs(w(r, c)) >= threshold);
    }
}

TEST_CASE("blocked magnitude_mask matches brute force on 4x4 matrices") {
    std::mt19937 rng(73);
    for (int iter = 0; iter < 50; ++iter) {
        DenseMatrix w(4, 4);
        for (float& v : w.data) v = static_cast<float>(rng() % 2000) / 999.0f - 1.0f;
        const SparsityMask m = magnitude_mask(w, 0.5, BlockConfig(2, 1));
        // 8 tiles of 2x1, 4 pruned. Brute force: choose the best 4 kept tiles.
        double best = 0.0;
        for (int keep = 0; keep < (1 << 8); ++keep) {
            if (__builtin_popcount(static_cast<unsigned>(keep)) != 4) continue;
            double sum = 0.0;
            for (int t = 0; t < 8; ++t) {
                if (!(keep & (1 << t))) continue;
                const int r = (t / 4) * 2, c = t % 4;
                sum += std::abs(static_cast<double>(w(r, c)));
                sum += std::abs(static_cast<double>(w(r + 1, c)));
            }
            best = std::max(best, sum);
        }
        CHECK(std::abs(retained_l1(w, m) - best) <= 1e-9);
    }
}

TEST_CASE("ties prune the lower flat tile index") {
    DenseMatrix w(1, 4);
    w.data = {2.0f, 2.0f, 2.0f, 2.0f};
    const SparsityMask m = magnitude_mask(w, 0.5, BlockConfig(1, 1));
    CHECK_FALSE(m.get(0, 0));
    CHECK_FALSE(m.get(0, 1));
    CHECK(m.get(0, 2));
    CHECK(m.get(0, 3));
}

TEST_CASE("apply_schedule_trace produces nested masks over a simulated run") {
    PruneSchedule s;
    s.s_initial = 0.0;
    s.s_final = 0.8;
    s.t_start = 0;
    s.t_end = 50;
    s.frequency = 10;
    s.validate();
    REQUIRE(s.steps() == 6);

    std::mt19937 rng(79);
    DenseMatrix live(8, 8);
    for (float& v : live.data) v = static_cast<float>(rng() % 2000) / 999.0f - 1.0f;

    // A snapshot per event; pruned weights stay zero, survivors drift.
    std::vector<DenseMatrix> snapshots;
    DenseMatrix current = live;
    for (int k = 0; k < 6; ++k) {
        snapshots.push_back(current);
        const double target = target_sparsity(s, s.t_start + k * s.frequency);
        SparsityMask m = magnitude_mask(current, target, BlockConfig(1, 1));
        apply_mask(current, m);
        for (float& v : current.data)
            if (v != 0.0f) v *= 1.01f;
    }

    const std::vector<SparsityMask> masks = apply_schedule_trace(snapshots, s);
    REQUIRE(masks.size() == 6);
    for (std::size_t k = 1; k < masks.size(); ++k) {
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c)
                if (!masks[k - 1].get(r, c)) CHECK_FALSE(masks[k].get(r, c));
    }
    CHECK(sparsity_of(masks.back()) == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("apply_schedule_trace rejects a snapshot count mismatch") {
    PruneSchedule s;
    s.t_start = 0;
    s.t_end = 10;
    s.frequency = 5;
    s.s_final = 0.5;
    std::vector<DenseMatrix> two(2, DenseMatrix(4, 4));
    CHECK_THROWS_AS((void)apply_schedule_trace(two, s), std::invalid_argument);
}
