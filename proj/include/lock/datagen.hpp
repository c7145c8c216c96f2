/// @file datagen.hpp Seeded synthetic data used by the experiments: a damped
/// oscillator with (possibly time-varying) coefficients, and three image
/// sequences whose truth evolves by grid translations. All generators are
/// pure functions of (seed, params): identical calls are bit-identical.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lock/grid.hpp"
#include "lock/linalg.hpp"
#include "lock/rng.hpp"

namespace lock {

/// Truth/observation pair for one run. Image frames are flattened row-major;
/// plain vector-valued data uses a 1×m grid.
struct FrameSequence {
    GridSpec grid{1, 1};
    Matrix truth;     // steps × dim, one frame per row
    Matrix observed;  // same shape; truth plus a noise realization

    Eigen::Index steps() const { return truth.rows(); }
    Eigen::Index dim() const { return truth.cols(); }

    Vector truth_at(Eigen::Index t) const { return truth.row(t).transpose(); }
    Vector observed_at(Eigen::Index t) const { return observed.row(t).transpose(); }

    std::vector<Vector> observation_vectors() const {
        std::vector<Vector> out;
        out.reserve(static_cast<std::size_t>(steps()));
        for (Eigen::Index t = 0; t < steps(); ++t) out.push_back(observed_at(t));
        return out;
    }
};

// --- grid translations -------------------------------------------------------

struct Direction {
    int drow = 0;
    int dcol = 0;
    friend bool operator==(Direction a, Direction b) {
        return a.drow == b.drow && a.dcol == b.dcol;
    }
};

/// 0/1 matrix sending cell (r, c) to (r + drow, c + dcol); rows of cells whose
/// source lies outside the grid are zero (content is lost at the border).
inline Matrix translation_matrix(const GridSpec& grid, Direction dir) {
    if (std::abs(dir.drow) >= grid.rows || std::abs(dir.dcol) >= grid.cols)
        throw std::invalid_argument("translation_matrix: shift exceeds grid extent");
    Matrix f = Matrix::Zero(grid.cells(), grid.cells());
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
            if (grid.contains(r + dir.drow, c + dir.dcol))
                f(grid.index(r + dir.drow, c + dir.dcol), grid.index(r, c)) = 1.0;
    return f;
}

/// Permutation matrix sending cell (r, c) to ((r + drow) mod rows,
/// (c + dcol) mod cols): content leaving one edge re-enters on the opposite
/// edge, so repeated shifts circulate the image instead of draining it. This
/// is the transition the moving-image generators apply, chosen so the truth
/// step stays a plain matrix-vector product (a border refill would make the
/// step affine, and long single-direction segments would otherwise sweep
/// every object off the grid).
inline Matrix toroidal_translation_matrix(const GridSpec& grid, Direction dir) {
    if (std::abs(dir.drow) >= grid.rows || std::abs(dir.dcol) >= grid.cols)
        throw std::invalid_argument("toroidal_translation_matrix: shift exceeds grid extent");
    Matrix f = Matrix::Zero(grid.cells(), grid.cells());
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const int rr = (r + dir.drow + grid.rows) % grid.rows;
            const int cc = (c + dir.dcol + grid.cols) % grid.cols;
            f(grid.index(rr, cc), grid.index(r, c)) = 1.0;
        }
    return f;
}

/// Apply a one-step translation to a flattened frame, refilling cells that
/// received no content with `background`. Equals translation_matrix · frame
/// plus background on the vacated cells.
inline Vector shift_frame(const GridSpec& grid, const Vector& frame, Direction dir,
                          double background) {
    if (frame.size() != grid.cells())
        throw std::invalid_argument("shift_frame: frame length != grid cells");
    Vector out = Vector::Constant(grid.cells(), background);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
            if (grid.contains(r + dir.drow, c + dir.dcol))
                out(grid.index(r + dir.drow, c + dir.dcol)) = frame(grid.index(r, c));
    return out;
}

/// Apply a one-step wrap-around translation to a flattened frame. Equals
/// toroidal_translation_matrix · frame; every cell receives content, so the
/// pixel multiset is conserved.
inline Vector toroidal_shift_frame(const GridSpec& grid, const Vector& frame,
                                   Direction dir) {
    if (frame.size() != grid.cells())
        throw std::invalid_argument("toroidal_shift_frame: frame length != grid cells");
    Vector out(grid.cells());
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const int rr = (r + dir.drow + grid.rows) % grid.rows;
            const int cc = (c + dir.dcol + grid.cols) % grid.cols;
            out(grid.index(rr, cc)) = frame(grid.index(r, c));
        }
    return out;
}

/// Piecewise-constant direction timetable: the entry with the largest start
/// not exceeding t is in effect at step t.
struct DirectionSchedule {
    struct Entry {
        Eigen::Index start = 0;
        Direction dir;
    };
    std::vector<Entry> entries;

    void validate() const {
        if (entries.empty())
            throw std::invalid_argument("DirectionSchedule: no entries");
        if (entries.front().start != 0)
            throw std::invalid_argument("DirectionSchedule: first entry must start at 0");
        for (std::size_t i = 1; i < entries.size(); ++i)
            if (entries[i].start <= entries[i - 1].start)
                throw std::invalid_argument(
                    "DirectionSchedule: start steps must strictly increase");
    }

    Direction at(Eigen::Index t) const {
        if (entries.empty() || t < entries.front().start)
            throw std::invalid_argument("DirectionSchedule: step not covered");
        Direction dir = entries.front().dir;
        for (const auto& e : entries) {
            if (e.start > t) break;
            dir = e.dir;
        }
        return dir;
    }

    /// Cycle through `dirs`, switching every `interval` steps, up to t_end.
    static DirectionSchedule cycle(const std::vector<Direction>& dirs,
                                   Eigen::Index interval, Eigen::Index t_end) {
        if (dirs.empty() || interval < 1 || t_end < 1)
            throw std::invalid_argument("DirectionSchedule: bad cycle parameters");
        DirectionSchedule s;
        std::size_t next = 0;
        for (Eigen::Index start = 0; start < t_end; start += interval) {
            s.entries.push_back({start, dirs[next]});
            next = (next + 1) % dirs.size();
        }
        return s;
    }
};

/// Default timetable for the object-moving sequence: cardinal directions
/// cycling as opposite pairs (E, W, N, S) every 5 steps, so the texture
/// oscillates around its starting position and never reaches the grid edge.
inline DirectionSchedule default_object_moving_schedule(Eigen::Index t_end = 100) {
    return DirectionSchedule::cycle({{0, 1}, {0, -1}, {-1, 0}, {1, 0}}, 5, t_end);
}

/// Default timetable for the global-flow sequence: rightward flow for the
/// first 100 steps, then upward flow for the rest of the run. Each segment
/// spans two operator-update intervals (at the default tau = 50), so the
/// learned operator is wrong only for the half-segment directly after the
/// change and has re-converged to the active motion well before the segment
/// ends; in particular the motion learned by a forecast started late in the
/// run is still in effect.
inline DirectionSchedule default_global_flow_schedule(Eigen::Index = 250) {
    DirectionSchedule s;
    s.entries = {{0, {0, 1}}, {100, {-1, 0}}};
    return s;
}

/// Operator that generated the step from t to t+1 of a translated image
/// sequence (the reference the operator estimates are compared against).
inline Matrix true_transition_at(const GridSpec& grid, const DirectionSchedule& schedule,
                                 Eigen::Index t) {
    return toroidal_translation_matrix(grid, schedule.at(t));
}

// --- damped oscillation ------------------------------------------------------

/// Discretized damped oscillator: position/velocity state with spring
/// constant k(t) and damping r(t), both possibly time-varying.
struct DampedOscillationParams {
    double dt = 1.0;
    double mass = 1.0;
    std::function<double(Eigen::Index)> k = [](Eigen::Index) { return 0.5; };
    std::function<double(Eigen::Index)> r = [](Eigen::Index) { return 0.52; };
    Vector x0 = (Vector(2) << 5.0, 0.0).finished();
    Eigen::Index t_end = 100;
    double system_noise_sd = 0.01;
    double observation_noise_sd = 0.2;

    void validate() const {
        if (!(dt > 0.0) || !(mass > 0.0))
            throw std::invalid_argument("DampedOscillationParams: dt, mass must be > 0");
        if (x0.size() != 2)
            throw std::invalid_argument("DampedOscillationParams: x0 must have length 2");
        if (t_end < 1)
            throw std::invalid_argument("DampedOscillationParams: t_end must be >= 1");
        if (system_noise_sd < 0.0 || observation_noise_sd < 0.0)
            throw std::invalid_argument("DampedOscillationParams: negative noise sd");
        if (!k || !r)
            throw std::invalid_argument("DampedOscillationParams: k and r must be set");
    }
};

/// value(t) = to · t/t_end + from · (1 − t/t_end).
inline std::function<double(Eigen::Index)> linear_ramp(double from, double to,
                                                       Eigen::Index t_end) {
    if (t_end < 1) throw std::invalid_argument("linear_ramp: t_end must be >= 1");
    return [from, to, t_end](Eigen::Index t) {
        const double u = static_cast<double>(t) / static_cast<double>(t_end);
        return to * u + from * (1.0 - u);
    };
}

/// Transition matrix in effect during the step from t to t+1:
///   [ 1              dt            ]
///   [ -k(t)·dt/m     1 − r(t)·dt/m ]
inline Matrix true_transition(const DampedOscillationParams& p, Eigen::Index t) {
    Matrix f(2, 2);
    f << 1.0, p.dt, -p.k(t) * p.dt / p.mass, 1.0 - p.r(t) * p.dt / p.mass;
    return f;
}

/// Truth: x_0 given, x_t = F(t−1)·x_{t−1} + v_t with v ~ N(0, system_sd²·I).
/// Observed: truth + w_t, w ~ N(0, observation_sd²·I), every frame.
/// Sub-streams: seed⊕1 drives system noise, seed⊕2 observation noise.
inline FrameSequence gen_damped_oscillation(const DampedOscillationParams& params,
                                            std::uint64_t seed) {
    params.validate();
    CounterRng sys_rng(derive_seed(seed, 1));
    CounterRng obs_rng(derive_seed(seed, 2));

    FrameSequence out;
    out.grid = GridSpec(1, 2);
    out.truth.resize(params.t_end, 2);
    out.observed.resize(params.t_end, 2);

    Vector x = params.x0;
    out.truth.row(0) = x.transpose();
    for (Eigen::Index t = 1; t < params.t_end; ++t) {
        x = true_transition(params, t - 1) * x;
        x(0) += sys_rng.normal(0.0, params.system_noise_sd);
        x(1) += sys_rng.normal(0.0, params.system_noise_sd);
        out.truth.row(t) = x.transpose();
    }
    for (Eigen::Index t = 0; t < params.t_end; ++t) {
        out.observed(t, 0) = out.truth(t, 0) + obs_rng.normal(0.0, params.observation_noise_sd);
        out.observed(t, 1) = out.truth(t, 1) + obs_rng.normal(0.0, params.observation_noise_sd);
    }
    return out;
}

// --- object moving -----------------------------------------------------------

namespace detail {
/// Distance from point p to the segment [a, b].
inline double segment_distance(double pr, double pc, double ar, double ac, double br,
                               double bc) {
    const double dr = br - ar, dc = bc - ac;
    const double len2 = dr * dr + dc * dc;
    double u = len2 > 0.0 ? ((pr - ar) * dr + (pc - ac) * dc) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    return std::hypot(pr - (ar + u * dr), pc - (ac + u * dc));
}
}  // namespace detail

/// Background image with bright bands: random core points are joined by
/// straight links of width `link_width`; link m (of `links`) carries value
/// value_low + (value_high − value_low)·m/links plus one
/// N(link_noise_mean, link_noise_sd²) offset drawn per link, so each band is
/// flat but the bands differ in brightness. The whole image then translates
/// per the timetable with wrap-around at the edges, and observations add
/// folded Gaussian noise (|N(0, sd²)|, keeping pixel values positive).
struct ObjectMovingParams {
    GridSpec grid{25, 25};
    double background = 20.0;
    int cores = 15;
    int core_low = 7;  // inclusive coordinate range for core points
    int core_high = 16;
    int links = 10;
    double link_width = 2.0;
    double value_low = 100.0;
    double value_high = 150.0;
    double link_noise_mean = 10.0;
    double link_noise_sd = 10.0;
    double observation_noise_sd = 20.0;
    Eigen::Index t_end = 100;

    void validate() const {
        if (cores < 0 || links < 0)
            throw std::invalid_argument("ObjectMovingParams: negative counts");
        if (links > 0 && cores < 2)
            throw std::invalid_argument("ObjectMovingParams: links need >= 2 cores");
        if (core_low > core_high || core_low < 0 || core_high >= grid.rows ||
            core_high >= grid.cols)
            throw std::invalid_argument("ObjectMovingParams: core range outside grid");
        if (link_width < 0.0)
            throw std::invalid_argument("ObjectMovingParams: negative link width");
        if (t_end < 1)
            throw std::invalid_argument("ObjectMovingParams: t_end must be >= 1");
        if (observation_noise_sd < 0.0 || link_noise_sd < 0.0)
            throw std::invalid_argument("ObjectMovingParams: negative noise sd");
    }
};

namespace detail {
inline Matrix object_moving_base(const ObjectMovingParams& p, CounterRng& rng) {
    Matrix image = Matrix::Constant(p.grid.rows, p.grid.cols, p.background);
    std::vector<std::pair<int, int>> cores;
    cores.reserve(static_cast<std::size_t>(p.cores));
    for (int n = 0; n < p.cores; ++n) {
        const int r = static_cast<int>(rng.uniform_int(p.core_low, p.core_high));
        const int c = static_cast<int>(rng.uniform_int(p.core_low, p.core_high));
        cores.emplace_back(r, c);
    }
    for (int m = 1; m <= p.links; ++m) {
        const auto a = static_cast<std::size_t>(rng.uniform_int(0, p.cores - 1));
        auto b = a;
        while (b == a) b = static_cast<std::size_t>(rng.uniform_int(0, p.cores - 1));
        const double value =
            p.value_low + (p.value_high - p.value_low) * m / static_cast<double>(p.links) +
            rng.normal(p.link_noise_mean, p.link_noise_sd);
        for (int r = 0; r < p.grid.rows; ++r)
            for (int c = 0; c < p.grid.cols; ++c)
                if (segment_distance(r, c, cores[a].first, cores[a].second,
                                     cores[b].first, cores[b].second) <=
                    p.link_width / 2.0)
                    image(r, c) = value;
    }
    return image;
}
}  // namespace detail

inline FrameSequence gen_object_moving(std::uint64_t seed,
                                       const DirectionSchedule& schedule,
                                       const ObjectMovingParams& params = {}) {
    params.validate();
    schedule.validate();
    CounterRng base_rng(derive_seed(seed, 1));
    CounterRng obs_rng(derive_seed(seed, 2));

    const Eigen::Index l = params.grid.cells();
    FrameSequence out;
    out.grid = params.grid;
    out.truth.resize(params.t_end, l);
    out.observed.resize(params.t_end, l);

    const Matrix base = detail::object_moving_base(params, base_rng);
    Vector frame = Eigen::Map<const Vector>(base.data(), l);  // row-major flatten
    out.truth.row(0) = frame.transpose();
    for (Eigen::Index t = 1; t < params.t_end; ++t) {
        frame = toroidal_shift_frame(params.grid, frame, schedule.at(t - 1));
        out.truth.row(t) = frame.transpose();
    }
    for (Eigen::Index t = 0; t < params.t_end; ++t)
        for (Eigen::Index i = 0; i < l; ++i)
            out.observed(t, i) =
                out.truth(t, i) + std::abs(obs_rng.normal(0.0, params.observation_noise_sd));
    return out;
}

// --- global flow ---------------------------------------------------------------

/// Background image seeded with square objects (edge length uniform in
/// [size_low, size_high], values i.i.d. N(value_mean, value_sd²)); the image
/// translates per the timetable with wrap-around at the edges and
/// observations add signed Gaussian noise.
struct GlobalFlowParams {
    GridSpec grid{30, 30};
    double background = 20.0;
    int objects = 10;
    int size_low = 2;
    int size_high = 4;
    double value_mean = 150.0;
    double value_sd = 20.0;
    double observation_noise_sd = 20.0;
    Eigen::Index t_end = 250;

    void validate() const {
        if (objects < 0) throw std::invalid_argument("GlobalFlowParams: negative count");
        if (size_low < 1 || size_low > size_high || size_high > grid.rows ||
            size_high > grid.cols)
            throw std::invalid_argument("GlobalFlowParams: bad object size range");
        if (t_end < 1) throw std::invalid_argument("GlobalFlowParams: t_end must be >= 1");
        if (observation_noise_sd < 0.0 || value_sd < 0.0)
            throw std::invalid_argument("GlobalFlowParams: negative sd");
    }
};

inline FrameSequence gen_global_flow(std::uint64_t seed, const DirectionSchedule& schedule,
                                     const GlobalFlowParams& params = {}) {
    params.validate();
    schedule.validate();
    CounterRng base_rng(derive_seed(seed, 1));
    CounterRng obs_rng(derive_seed(seed, 2));

    Matrix image = Matrix::Constant(params.grid.rows, params.grid.cols, params.background);
    for (int n = 0; n < params.objects; ++n) {
        const int s = static_cast<int>(base_rng.uniform_int(params.size_low, params.size_high));
        const int r0 = static_cast<int>(base_rng.uniform_int(0, params.grid.rows - s));
        const int c0 = static_cast<int>(base_rng.uniform_int(0, params.grid.cols - s));
        for (int r = r0; r < r0 + s; ++r)
            for (int c = c0; c < c0 + s; ++c)
                image(r, c) = base_rng.normal(params.value_mean, params.value_sd);
    }

    const Eigen::Index l = params.grid.cells();
    FrameSequence out;
    out.grid = params.grid;
    out.truth.resize(params.t_end, l);
    out.observed.resize(params.t_end, l);

    Vector frame = Eigen::Map<const Vector>(image.data(), l);
    out.truth.row(0) = frame.transpose();
    for (Eigen::Index t = 1; t < params.t_end; ++t) {
        frame = toroidal_shift_frame(params.grid, frame, schedule.at(t - 1));
        out.truth.row(t) = frame.transpose();
    }
    for (Eigen::Index t = 0; t < params.t_end; ++t)
        for (Eigen::Index i = 0; i < l; ++i)
            out.observed(t, i) =
                out.truth(t, i) + obs_rng.normal(0.0, params.observation_noise_sd);
    return out;
}

// --- local stationary flow -----------------------------------------------------

/// Four square blocks of a 2L×2L field, each with its own fixed unit flow.
/// Each block draws content from a precomputed (t_end + L − 1) × L source
/// matrix: rows 0..L−1 fill the block initially (newest row at the inflow
/// edge) and row L−1+t enters through the inflow edge at step t, so every
/// step of a block is exactly a one-cell translation plus one injected line.
struct LocalStationaryFlowParams {
    int block = 15;  // L, the block edge length
    Eigen::Index t_end = 1000;
    double background = 20.0;
    int objects_per_block = 100;
    int size_low = 2;
    int size_high = 4;
    double value_mean = 150.0;
    double value_sd = 20.0;
    double observation_noise_sd = 20.0;
    /// Flow per block in row-major block order: upper-left, upper-right,
    /// lower-left, lower-right. Defaults circulate: up, right, left, down.
    std::array<Direction, 4> directions{
        Direction{-1, 0}, Direction{0, 1}, Direction{0, -1}, Direction{1, 0}};

    GridSpec field() const { return GridSpec(2 * block, 2 * block); }

    void validate() const {
        if (block < 1)
            throw std::invalid_argument("LocalStationaryFlowParams: block must be >= 1");
        if (t_end < 1)
            throw std::invalid_argument("LocalStationaryFlowParams: t_end must be >= 1");
        if (objects_per_block < 0)
            throw std::invalid_argument("LocalStationaryFlowParams: negative count");
        if (size_low < 1 || size_low > size_high || size_high > block)
            throw std::invalid_argument("LocalStationaryFlowParams: bad object size range");
        if (observation_noise_sd < 0.0 || value_sd < 0.0)
            throw std::invalid_argument("LocalStationaryFlowParams: negative sd");
        for (const auto& d : directions)
            if (std::abs(d.drow) + std::abs(d.dcol) != 1)
                throw std::invalid_argument(
                    "LocalStationaryFlowParams: block flows must be unit axis steps");
    }
};

namespace detail {
/// Distance of (r, c) from the block's inflow edge, and the position along
/// that edge; source row (L−1−distance) holds the cell's initial value.
inline std::pair<int, int> inflow_coordinates(int r, int c, int block, Direction dir) {
    if (dir.drow == 1) return {r, c};               // flows down, enters at top row
    if (dir.drow == -1) return {block - 1 - r, c};  // flows up, enters at bottom row
    if (dir.dcol == 1) return {c, r};               // flows right, enters at left col
    return {block - 1 - c, r};                      // flows left, enters at right col
}
}  // namespace detail

inline FrameSequence gen_local_stationary_flow(std::uint64_t seed,
                                               const LocalStationaryFlowParams& params = {}) {
    params.validate();
    const int L = params.block;
    const GridSpec field = params.field();
    const Eigen::Index l = field.cells();

    // One source matrix per block, seeded from sub-streams 1..4.
    std::array<Matrix, 4> sources;
    for (int b = 0; b < 4; ++b) {
        CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(1 + b)));
        Matrix s = Matrix::Constant(params.t_end + L - 1, L, params.background);
        for (int n = 0; n < params.objects_per_block; ++n) {
            const int sz =
                static_cast<int>(rng.uniform_int(params.size_low, params.size_high));
            const auto r0 = rng.uniform_int(0, s.rows() - sz);
            const auto c0 = rng.uniform_int(0, static_cast<std::int64_t>(L) - sz);
            for (std::int64_t r = r0; r < r0 + sz; ++r)
                for (std::int64_t c = c0; c < c0 + sz; ++c)
                    s(r, c) = rng.normal(params.value_mean, params.value_sd);
        }
        sources[static_cast<std::size_t>(b)] = std::move(s);
    }

    FrameSequence out;
    out.grid = field;
    out.truth.resize(params.t_end, l);
    out.observed.resize(params.t_end, l);

    // Working copy of each block's L×L content.
    std::array<Matrix, 4> blocks;
    for (int b = 0; b < 4; ++b) {
        const Direction dir = params.directions[static_cast<std::size_t>(b)];
        Matrix content(L, L);
        for (int r = 0; r < L; ++r)
            for (int c = 0; c < L; ++c) {
                const auto [dist, pos] = detail::inflow_coordinates(r, c, L, dir);
                content(r, c) = sources[static_cast<std::size_t>(b)](L - 1 - dist, pos);
            }
        blocks[static_cast<std::size_t>(b)] = std::move(content);
    }

    auto write_frame = [&](Eigen::Index t) {
        for (int b = 0; b < 4; ++b) {
            const int r_off = (b / 2) * L, c_off = (b % 2) * L;
            const Matrix& content = blocks[static_cast<std::size_t>(b)];
            for (int r = 0; r < L; ++r)
                for (int c = 0; c < L; ++c)
                    out.truth(t, field.index(r_off + r, c_off + c)) = content(r, c);
        }
    };

    write_frame(0);
    for (Eigen::Index t = 1; t < params.t_end; ++t) {
        for (int b = 0; b < 4; ++b) {
            const Direction dir = params.directions[static_cast<std::size_t>(b)];
            const Matrix& src = sources[static_cast<std::size_t>(b)];
            Matrix& content = blocks[static_cast<std::size_t>(b)];
            Matrix next(L, L);
            for (int r = 0; r < L; ++r)
                for (int c = 0; c < L; ++c) {
                    const int pr = r - dir.drow, pc = c - dir.dcol;
                    if (pr >= 0 && pr < L && pc >= 0 && pc < L) {
                        next(r, c) = content(pr, pc);
                    } else {
                        const auto [dist, pos] = detail::inflow_coordinates(r, c, L, dir);
                        next(r, c) = src(L - 1 + t, pos);
                        (void)dist;  // inflow cells have distance 0 by construction
                    }
                }
            content = std::move(next);
        }
        write_frame(t);
    }

    CounterRng obs_rng(derive_seed(seed, 5));
    for (Eigen::Index t = 0; t < params.t_end; ++t)
        for (Eigen::Index i = 0; i < l; ++i)
            out.observed(t, i) =
                out.truth(t, i) + obs_rng.normal(0.0, params.observation_noise_sd);
    return out;
}

/// The time-invariant operator realized by the block flows: cell movement
/// inside each block, zero rows at the inflow edges (their content is
/// injected, not propagated).
inline Matrix local_stationary_true_transition(const LocalStationaryFlowParams& params) {
    params.validate();
    const int L = params.block;
    const GridSpec field = params.field();
    Matrix f = Matrix::Zero(field.cells(), field.cells());
    for (int b = 0; b < 4; ++b) {
        const Direction dir = params.directions[static_cast<std::size_t>(b)];
        const int r_off = (b / 2) * L, c_off = (b % 2) * L;
        for (int r = 0; r < L; ++r)
            for (int c = 0; c < L; ++c) {
                const int nr = r + dir.drow, nc = c + dir.dcol;
                if (nr >= 0 && nr < L && nc >= 0 && nc < L)
                    f(field.index(r_off + nr, c_off + nc), field.index(r_off + r, c_off + c)) =
                        1.0;
            }
    }
    return f;
}

// --- frame files ---------------------------------------------------------------
// Header line `rows cols T`, then T lines of rows·cols space-separated reals.
// 17 significant digits round-trip doubles exactly.

inline void save_frames(const GridSpec& grid, const Matrix& frames, std::ostream& out) {
    if (frames.cols() != grid.cells())
        throw std::invalid_argument("save_frames: frame width != grid cells");
    out << grid.rows << ' ' << grid.cols << ' ' << frames.rows() << '\n';
    out << std::setprecision(17);
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
        for (Eigen::Index i = 0; i < frames.cols(); ++i) {
            if (i) out << ' ';
            out << frames(t, i);
        }
        out << '\n';
    }
}

inline void save_frames(const GridSpec& grid, const Matrix& frames,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_frames: cannot open " + path);
    save_frames(grid, frames, out);
}

struct LoadedFrames {
    GridSpec grid;
    Matrix frames;
};

inline LoadedFrames load_frames(std::istream& in) {
    int rows = 0, cols = 0;
    Eigen::Index t_count = 0;
    if (!(in >> rows >> cols >> t_count) || rows < 1 || cols < 1 || t_count < 1)
        throw std::invalid_argument("load_frames: bad header (want `rows cols T`)");

    LoadedFrames out;
    out.grid = GridSpec(rows, cols);
    out.frames.resize(t_count, out.grid.cells());
    for (Eigen::Index t = 0; t < t_count; ++t)
        for (Eigen::Index i = 0; i < out.grid.cells(); ++i)
            if (!(in >> out.frames(t, i)))
                throw std::invalid_argument("load_frames: truncated or non-numeric data in frame " +
                                            std::to_string(t));
    return out;
}

inline LoadedFrames load_frames(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_frames: cannot open " + path);
    return load_frames(in);
}

}  // namespace lock
