#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "lock/datagen.hpp"

using lock::Direction;
using lock::DirectionSchedule;
using lock::GridSpec;
using lock::Matrix;
using lock::Vector;

namespace {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Kolmogorov–Smirnov distance between the sample and a reference CDF.
double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf) {
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    double stat = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        stat = std::max(stat, std::abs((static_cast<double>(i) + 1.0) / n - f));
        stat = std::max(stat, std::abs(f - static_cast<double>(i) / n));
    }
    return stat;
}

lock::DampedOscillationParams experiment_one_params() {
    lock::DampedOscillationParams p;  // defaults are the constant-coefficient set
    return p;
}

lock::DampedOscillationParams ramped_params() {
    lock::DampedOscillationParams p;
    p.k = lock::linear_ramp(0.35, 0.65, 100);
    p.r = lock::linear_ramp(0.67, 0.37, 100);
    return p;
}

}  // namespace

TEST_CASE("oscillator transition matrices match the model coefficients") {
    Matrix expected(2, 2);

    expected << 1.0, 1.0, -0.5, 0.48;
    CHECK((lock::true_transition(experiment_one_params(), 0) - expected).norm() < 1e-12);
    CHECK((lock::true_transition(experiment_one_params(), 99) - expected).norm() < 1e-12);

    const auto ramped = ramped_params();
    expected << 1.0, 1.0, -0.35, 0.33;
    CHECK((lock::true_transition(ramped, 0) - expected).norm() < 1e-12);
    expected << 1.0, 1.0, -0.65, 0.63;
    CHECK((lock::true_transition(ramped, 100) - expected).norm() < 1e-12);
}

TEST_CASE("oscillator sequences follow the recurrence and the declared noise") {
    SECTION("noiseless single step is the plain matrix product") {
        auto p = experiment_one_params();
        p.system_noise_sd = 0.0;
        p.observation_noise_sd = 0.0;
        p.t_end = 3;
        const auto seq = lock::gen_damped_oscillation(p, 7);
        Vector x1(2);
        x1 << 5.0, -2.5;
        CHECK((seq.truth.row(1).transpose() - x1).norm() < 1e-12);
        CHECK((seq.observed - seq.truth).norm() == 0.0);
    }
    SECTION("same seed is bit-identical, different seeds differ") {
        const auto a = lock::gen_damped_oscillation(experiment_one_params(), 42);
        const auto b = lock::gen_damped_oscillation(experiment_one_params(), 42);
        const auto c = lock::gen_damped_oscillation(experiment_one_params(), 43);
        CHECK((a.truth - b.truth).norm() == 0.0);
        CHECK((a.observed - b.observed).norm() == 0.0);
        CHECK((a.observed - c.observed).norm() != 0.0);
    }
    SECTION("observation residuals have the declared spread") {
        auto p = experiment_one_params();
        p.t_end = 10000;
        const auto seq = lock::gen_damped_oscillation(p, 11);
        const Matrix resid = seq.observed - seq.truth;
        for (int j = 0; j < 2; ++j) {
            const double sd = std::sqrt(resid.col(j).squaredNorm() /
                                        static_cast<double>(resid.rows()));
            CHECK(sd > 0.19);
            CHECK(sd < 0.21);
        }
    }
    SECTION("standardized residuals pass a KS test against the normal law") {
        auto p = experiment_one_params();
        p.t_end = 50000;
        const auto seq = lock::gen_damped_oscillation(p, 3);
        std::vector<double> samples;
        samples.reserve(100000);
        for (Eigen::Index t = 0; t < seq.steps(); ++t)
            for (int j = 0; j < 2; ++j)
                samples.push_back((seq.observed(t, j) - seq.truth(t, j)) / 0.2);
        CHECK(ks_statistic(std::move(samples), std_normal_cdf) < 0.02);
    }
}

TEST_CASE("grid translation operators move cells and drop exits") {
    SECTION("zero shift is the identity") {
        const GridSpec g(3, 4);
        CHECK((lock::translation_matrix(g, {0, 0}) - Matrix::Identity(12, 12)).norm() ==
              0.0);
    }
    SECTION("two-cell column, shift down") {
        const GridSpec g(2, 1);
        Matrix expected(2, 2);
        expected << 0.0, 0.0, 1.0, 0.0;
        CHECK((lock::translation_matrix(g, {1, 0}) - expected).norm() == 0.0);
    }
    SECTION("at most one unit entry per row and per column") {
        const GridSpec g(4, 5);
        for (const Direction dir : {Direction{0, 1}, Direction{-1, 0}, Direction{1, 1},
                                    Direction{2, -1}}) {
            const Matrix f = lock::translation_matrix(g, dir);
            for (Eigen::Index i = 0; i < f.rows(); ++i) {
                CHECK(f.row(i).sum() <= 1.0);
                CHECK(f.col(i).sum() <= 1.0);
                CHECK(f.row(i).maxCoeff() <= 1.0);
                CHECK(f.row(i).minCoeff() >= 0.0);
            }
        }
    }
    SECTION("shift right then left restores every cell that stayed inside") {
        const GridSpec g(3, 4);
        const Matrix round_trip =
            lock::translation_matrix(g, {0, -1}) * lock::translation_matrix(g, {0, 1});
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                const int i = g.index(r, c);
                const double expected = c + 1 < g.cols ? 1.0 : 0.0;
                CHECK(round_trip(i, i) == expected);
            }
    }
    SECTION("shift_frame equals the matrix action plus background refill") {
        const GridSpec g(4, 5);
        lock::CounterRng rng(17);
        Vector frame(g.cells());
        for (Eigen::Index i = 0; i < frame.size(); ++i) frame(i) = rng.normal(50.0, 30.0);
        for (const Direction dir : {Direction{0, 1}, Direction{-1, 0}, Direction{1, 1},
                                    Direction{2, -1}}) {
            const Matrix f = lock::translation_matrix(g, dir);
            Vector expected = f * frame;
            for (Eigen::Index i = 0; i < expected.size(); ++i)
                if (f.row(i).sum() == 0.0) expected(i) = 20.0;
            CHECK((lock::shift_frame(g, frame, dir, 20.0) - expected).norm() == 0.0);
        }
    }
    SECTION("shifts larger than the grid are rejected") {
        CHECK_THROWS_AS(lock::translation_matrix(GridSpec(2, 2), {2, 0}),
                        std::invalid_argument);
        CHECK_THROWS_AS(lock::toroidal_translation_matrix(GridSpec(2, 2), {0, -2}),
                        std::invalid_argument);
    }
}

TEST_CASE("toroidal translations wrap content to the opposite edge") {
    SECTION("two-cell column, shift down, swaps the cells") {
        const GridSpec g(2, 1);
        Matrix expected(2, 2);
        expected << 0.0, 1.0, 1.0, 0.0;
        CHECK((lock::toroidal_translation_matrix(g, {1, 0}) - expected).norm() == 0.0);
    }
    SECTION("every shift is a permutation matrix") {
        const GridSpec g(4, 5);
        for (const Direction dir : {Direction{0, 1}, Direction{-1, 0}, Direction{1, 1},
                                    Direction{2, -1}}) {
            const Matrix f = lock::toroidal_translation_matrix(g, dir);
            for (Eigen::Index i = 0; i < f.rows(); ++i) {
                CHECK(f.row(i).sum() == 1.0);
                CHECK(f.col(i).sum() == 1.0);
            }
        }
    }
    SECTION("opposite shifts invert each other everywhere") {
        const GridSpec g(3, 4);
        const Matrix round_trip = lock::toroidal_translation_matrix(g, {-1, -1}) *
                                  lock::toroidal_translation_matrix(g, {1, 1});
        CHECK((round_trip - Matrix::Identity(12, 12)).norm() == 0.0);
    }
    SECTION("toroidal_shift_frame equals the matrix action and conserves mass") {
        const GridSpec g(4, 5);
        lock::CounterRng rng(18);
        Vector frame(g.cells());
        for (Eigen::Index i = 0; i < frame.size(); ++i) frame(i) = rng.normal(50.0, 30.0);
        for (const Direction dir : {Direction{0, 1}, Direction{-1, 0}, Direction{1, 1},
                                    Direction{2, -1}}) {
            const Matrix f = lock::toroidal_translation_matrix(g, dir);
            const Vector shifted = lock::toroidal_shift_frame(g, frame, dir);
            CHECK((shifted - f * frame).norm() == 0.0);
            CHECK(shifted.sum() == Catch::Approx(frame.sum()).epsilon(1e-12));
        }
    }
}

TEST_CASE("direction schedules validate and cycle") {
    SECTION("cycling fills starts at the given interval") {
        const auto s = DirectionSchedule::cycle({{0, 1}, {1, 0}}, 10, 25);
        REQUIRE(s.entries.size() == 3);
        CHECK(s.entries[2].start == 20);
        CHECK(s.at(0) == Direction{0, 1});
        CHECK(s.at(9) == Direction{0, 1});
        CHECK(s.at(10) == Direction{1, 0});
        CHECK(s.at(24) == Direction{0, 1});
    }
    SECTION("defaults cover their experiment lengths") {
        const auto om = lock::default_object_moving_schedule();
        om.validate();
        CHECK(om.entries.size() == 20);
        CHECK(om.at(0) == Direction{0, 1});
        CHECK(om.at(5) == Direction{0, -1});  // opposite pair brings content back
        CHECK(om.at(99) == Direction{1, 0});

        const auto gf = lock::default_global_flow_schedule();
        gf.validate();
        CHECK(gf.entries.size() == 2);
        CHECK(gf.at(99) == Direction{0, 1});
        CHECK(gf.at(100) == Direction{-1, 0});
        CHECK(gf.at(249) == Direction{-1, 0});  // last direction holds to the end
    }
    SECTION("malformed schedules are rejected") {
        DirectionSchedule s;
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
        s.entries = {{5, {0, 1}}};
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
        CHECK_THROWS_AS(s.at(2), std::invalid_argument);
        s.entries = {{0, {0, 1}}, {0, {1, 0}}};
        CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    }
}

TEST_CASE("object-moving frames translate a textured base and add folded noise") {
    const auto schedule = lock::default_object_moving_schedule();

    SECTION("without links the truth is pure background under any motion") {
        lock::ObjectMovingParams p;
        p.links = 0;
        p.t_end = 30;
        const auto seq = lock::gen_object_moving(123, schedule, p);
        CHECK((seq.truth.array() == 20.0).all());
    }
    SECTION("the base image carries bright bands") {
        const auto seq = lock::gen_object_moving(123, schedule);
        const auto base = seq.truth.row(0);
        CHECK((base.array() != 20.0).count() > 10);
        CHECK(base.maxCoeff() > 80.0);
        CHECK(base.minCoeff() >= 0.0);
    }
    SECTION("each step is exactly the scheduled translation of the previous one") {
        const auto seq = lock::gen_object_moving(9, schedule);
        for (const Eigen::Index t : {1L, 10L, 11L, 55L}) {
            const Vector prev = seq.truth_at(t - 1);
            const Vector expected =
                lock::toroidal_shift_frame(seq.grid, prev, schedule.at(t - 1));
            CHECK((seq.truth_at(t) - expected).norm() == 0.0);
        }
    }
    SECTION("no content drains away: the pixel sum is constant over the run") {
        const auto seq = lock::gen_object_moving(9, schedule);
        const double first = seq.truth.row(0).sum();
        for (Eigen::Index t = 1; t < seq.steps(); ++t)
            REQUIRE(seq.truth.row(t).sum() == Catch::Approx(first).epsilon(1e-12));
    }
    SECTION("observation noise is folded nonnegative with the declared law") {
        const auto seq = lock::gen_object_moving(5, schedule);
        const Matrix resid = seq.observed - seq.truth;
        CHECK(resid.minCoeff() >= 0.0);
        std::vector<double> samples(resid.data(), resid.data() + resid.size());
        const auto folded_cdf = [](double x) {
            return x < 0.0 ? 0.0 : 2.0 * std_normal_cdf(x / 20.0) - 1.0;
        };
        CHECK(ks_statistic(std::move(samples), folded_cdf) < 0.02);
    }
    SECTION("same seed is bit-identical") {
        const auto a = lock::gen_object_moving(77, schedule);
        const auto b = lock::gen_object_moving(77, schedule);
        CHECK((a.truth - b.truth).norm() == 0.0);
        CHECK((a.observed - b.observed).norm() == 0.0);
    }
    SECTION("parameter validation") {
        lock::ObjectMovingParams p;
        p.cores = 1;
        CHECK_THROWS_AS(lock::gen_object_moving(1, schedule, p), std::invalid_argument);
        p = {};
        p.core_high = 25;
        CHECK_THROWS_AS(lock::gen_object_moving(1, schedule, p), std::invalid_argument);
    }
}

TEST_CASE("global-flow frames carry objects with the declared value law") {
    const auto schedule = lock::default_global_flow_schedule();

    SECTION("without objects the truth is pure background") {
        lock::GlobalFlowParams p;
        p.objects = 0;
        p.t_end = 20;
        const auto seq = lock::gen_global_flow(8, schedule, p);
        CHECK((seq.truth.array() == 20.0).all());
    }
    SECTION("object values sample the declared Gaussian at creation") {
        lock::GlobalFlowParams p;
        p.t_end = 1;
        std::vector<double> values;
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            const auto seq =
                lock::gen_global_flow(seed, DirectionSchedule::cycle({{0, 1}}, 1, 1), p);
            for (Eigen::Index i = 0; i < seq.dim(); ++i)
                if (seq.truth(0, i) != 20.0) values.push_back(seq.truth(0, i));
        }
        REQUIRE(values.size() > 2000);
        const double n = static_cast<double>(values.size());
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= n - 1.0;
        CHECK(std::abs(mean - 150.0) < 2.0);
        CHECK(std::abs(std::sqrt(var) - 20.0) < 2.0);
    }
    SECTION("each step is exactly the scheduled translation, across changes") {
        const auto seq = lock::gen_global_flow(12, schedule);
        for (const Eigen::Index t : {1L, 49L, 50L, 51L, 249L}) {
            const Vector expected = lock::toroidal_shift_frame(seq.grid, seq.truth_at(t - 1),
                                                               schedule.at(t - 1));
            CHECK((seq.truth_at(t) - expected).norm() == 0.0);
        }
    }
    SECTION("objects stay on the grid for the whole run") {
        const auto seq = lock::gen_global_flow(12, schedule);
        const auto bright = [&](Eigen::Index t) {
            return (seq.truth.row(t).array() != 20.0).count();
        };
        const auto initial = bright(0);
        REQUIRE(initial > 0);
        CHECK(bright(60) == initial);
        CHECK(bright(249) == initial);
    }
    SECTION("observation noise is signed Gaussian") {
        const auto seq = lock::gen_global_flow(4, schedule);
        const Matrix resid = seq.observed - seq.truth;
        CHECK(resid.minCoeff() < 0.0);
        std::vector<double> samples;
        samples.reserve(100000);
        for (Eigen::Index i = 0; i < resid.size() && i < 100000; ++i)
            samples.push_back(resid(i / resid.cols(), i % resid.cols()) / 20.0);
        CHECK(ks_statistic(std::move(samples), std_normal_cdf) < 0.02);
    }
    SECTION("same seed is bit-identical") {
        const auto a = lock::gen_global_flow(21, schedule);
        const auto b = lock::gen_global_flow(21, schedule);
        CHECK((a.truth - b.truth).norm() == 0.0);
        CHECK((a.observed - b.observed).norm() == 0.0);
    }
}

TEST_CASE("local stationary flow streams each block by one cell per step") {
    const lock::LocalStationaryFlowParams defaults;
    const auto seq = lock::gen_local_stationary_flow(2, defaults);

    SECTION("frame dimensions match the field and horizon") {
        CHECK(seq.steps() == 1000);
        CHECK(seq.dim() == 900);
    }
    SECTION("block interiors translate exactly; inflow lines are injected") {
        const int L = defaults.block;
        for (const Eigen::Index t : {1L, 2L, 500L, 999L}) {
            for (int b = 0; b < 4; ++b) {
                const Direction dir = defaults.directions[static_cast<std::size_t>(b)];
                const int r_off = (b / 2) * L, c_off = (b % 2) * L;
                for (int r = 0; r < L; ++r)
                    for (int c = 0; c < L; ++c) {
                        const int pr = r - dir.drow, pc = c - dir.dcol;
                        if (pr < 0 || pr >= L || pc < 0 || pc >= L) continue;
                        const auto now = seq.grid.index(r_off + r, c_off + c);
                        const auto before = seq.grid.index(r_off + pr, c_off + pc);
                        REQUIRE(seq.truth(t, now) == seq.truth(t - 1, before));
                    }
            }
        }
    }
    SECTION("the block operator reproduces every non-inflow cell") {
        const Matrix f = lock::local_stationary_true_transition(defaults);
        const Vector prev = seq.truth_at(41);
        const Vector propagated = f * prev;
        const Vector actual = seq.truth_at(42);
        int inflow_cells = 0;
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
            if (f.row(i).sum() == 0.0) {
                ++inflow_cells;  // content is injected here, not propagated
            } else {
                REQUIRE(propagated(i) == actual(i));
            }
        }
        CHECK(inflow_cells == 4 * defaults.block);
    }
    SECTION("truth carries object values, observations add signed noise") {
        CHECK((seq.truth.row(0).array() != 20.0).count() > 20);
        CHECK((seq.observed - seq.truth).minCoeff() < 0.0);
    }
    SECTION("same seed is bit-identical") {
        lock::LocalStationaryFlowParams small;
        small.block = 5;
        small.t_end = 40;
        small.objects_per_block = 10;
        const auto a = lock::gen_local_stationary_flow(6, small);
        const auto b = lock::gen_local_stationary_flow(6, small);
        CHECK((a.truth - b.truth).norm() == 0.0);
        CHECK((a.observed - b.observed).norm() == 0.0);
    }
    SECTION("parameter validation") {
        lock::LocalStationaryFlowParams bad;
        bad.directions[2] = {1, 1};  // diagonal flows cannot stream a block
        CHECK_THROWS_AS(lock::gen_local_stationary_flow(1, bad), std::invalid_argument);
        bad = {};
        bad.size_high = 16;
        CHECK_THROWS_AS(lock::gen_local_stationary_flow(1, bad), std::invalid_argument);
    }
}

TEST_CASE("frame files round-trip exactly") {
    SECTION("save then load preserves every bit") {
        const GridSpec g(3, 4);
        Matrix frames(5, g.cells());
        lock::CounterRng rng(3);
        for (Eigen::Index t = 0; t < frames.rows(); ++t)
            for (Eigen::Index i = 0; i < frames.cols(); ++i)
                frames(t, i) = rng.normal(0.0, 1e6);
        frames(0, 0) = 0.1;
        frames(1, 2) = -1.25e-17;
        frames(2, 3) = 123456789.125;

        std::stringstream buf;
        lock::save_frames(g, frames, buf);
        const auto loaded = lock::load_frames(buf);
        CHECK(loaded.grid.rows == 3);
        CHECK(loaded.grid.cols == 4);
        REQUIRE(loaded.frames.rows() == 5);
        CHECK((loaded.frames.array() == frames.array()).all());
    }
    SECTION("header and data validation") {
        auto loads = [](const std::string& text) {
            std::stringstream buf(text);
            return lock::load_frames(buf);
        };
        CHECK_THROWS_AS(loads(""), std::invalid_argument);
        CHECK_THROWS_AS(loads("0 3 2\n"), std::invalid_argument);
        CHECK_THROWS_AS(loads("not a header\n"), std::invalid_argument);
        CHECK_THROWS_AS(loads("1 2 2\n1.0 2.0\n"), std::invalid_argument);  // missing frame
        CHECK_THROWS_AS(loads("1 2 1\n1.0 oops\n"), std::invalid_argument);
        CHECK_THROWS_AS(lock::load_frames("/nonexistent/frames.txt"), std::runtime_error);
        const GridSpec g(1, 2);
        CHECK_THROWS_AS(lock::save_frames(g, Matrix::Zero(2, 3), std::cout),
                        std::invalid_argument);
    }
    SECTION("file-path variants write and read back") {
        const GridSpec g(2, 2);
        Matrix frames(3, 4);
        frames << 1, 2, 3, 4, 5, 6, 7, 8, 9.5, -10, 11, 0.0625;
        const std::string path = "/tmp/lock_test_frames.txt";
        lock::save_frames(g, frames, path);
        const auto loaded = lock::load_frames(path);
        CHECK((loaded.frames.array() == frames.array()).all());
        CHECK_THROWS_AS(lock::save_frames(g, frames, "/nonexistent/dir/f.txt"),
                        std::runtime_error);
    }
}
