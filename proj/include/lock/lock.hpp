/// @file lock.hpp Online construction of the state-transition operator from
/// observation windows (LOCK).
///
/// Consecutive observations are assumed to be related by a linear map G;
/// over a window of τ+1 frames, stacking them as
///   Y_prev = (y_{t-τ} … y_{t-1}),   Y_now = (y_{t-τ+1} … y_t)
/// gives the regression Ĝ = Y_now · Y_prev⁺, which maps back to the state
/// transition through F̂ = H⁺ Ĝ H. The running F then moves toward F̂ by a
/// clamped step: F ← F − η·crop(F − F̂, −c, c). Updates fire on frames with
/// t ≡ 0 (mod τ) once the window is full, i.e. first at t = τ.

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "lock/linalg.hpp"
#include "lock/ssm.hpp"

namespace lock {

/// Assumed observation-to-observation transition y_t ≈ G y_{t-1} + u_t,
/// u_t ~ N(0, S). S is carried for completeness only; no estimator here
/// consumes or produces it.
struct ObservationTransition {
    Matrix G;
    Matrix S;
};

struct LockConfig {
    int tau = 4;       // frames between transition updates
    double eta = 1.0;  // learning rate; 0 disables learning (plain filter)
    double c = 1.0;    // cutoff distance of the crop
    PinvOptions pinv{};
    KfOptions kf{};

    void validate() const {
        if (tau < 1) throw std::invalid_argument("LockConfig: tau must be >= 1");
        if (eta < 0.0 || eta > 1.0)
            throw std::invalid_argument("LockConfig: eta must lie in [0, 1]");
        if (!(c > 0.0)) throw std::invalid_argument("LockConfig: c must be positive");
    }
};

/// Rolling buffer of the τ+1 most recent observations. Y_now and Y_prev
/// deliberately share τ−1 columns.
class ObservationWindow {
public:
    explicit ObservationWindow(int tau) : capacity_(static_cast<std::size_t>(tau) + 1) {
        if (tau < 1) throw std::invalid_argument("ObservationWindow: tau must be >= 1");
    }

    void push(Vector y) {
        frames_.push_back(std::move(y));
        if (frames_.size() > capacity_) frames_.pop_front();
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return frames_.size(); }
    bool full() const { return frames_.size() == capacity_; }
    const std::deque<Vector>& frames() const { return frames_; }

    /// Columns (y_{t-τ+1} … y_t); requires a full window.
    Matrix y_now() const { return stack(1); }
    /// Columns (y_{t-τ} … y_{t-1}); requires a full window.
    Matrix y_prev() const { return stack(0); }

private:
    Matrix stack(std::size_t first) const {
        if (!full())
            throw std::logic_error("ObservationWindow: window not full yet");
        const auto tau = capacity_ - 1;
        Matrix out(frames_.front().size(), static_cast<Eigen::Index>(tau));
        for (std::size_t c = 0; c < tau; ++c)
            out.col(static_cast<Eigen::Index>(c)) = frames_[first + c];
        return out;
    }

    std::size_t capacity_;
    std::deque<Vector> frames_;
};

/// Ĝ = Y_now · Y_prev⁺ — for τ < l the minimum-norm least-squares solution
/// of Ĝ Y_prev = Y_now.
inline Matrix estimate_g(const Matrix& y_now, const Matrix& y_prev,
                         const PinvOptions& opts = {}) {
    if (y_now.rows() != y_prev.rows() || y_now.cols() != y_prev.cols())
        throw std::invalid_argument("estimate_g: window shapes differ");
    if (y_now.cols() < 1) throw std::invalid_argument("estimate_g: empty window");
    return y_now * pinv(y_prev, opts);
}

/// F̂ = H_now⁺ · Ĝ · H_prev. With a single time-invariant H (every experiment
/// here) pass it for both arguments.
inline Matrix estimate_f(const Matrix& g_hat, const Matrix& h_now, const Matrix& h_prev,
                         const PinvOptions& opts = {}) {
    if (g_hat.rows() != h_now.rows() || g_hat.cols() != h_prev.rows())
        throw std::invalid_argument("estimate_f: dimension mismatch");
    return pinv(h_now, opts) * g_hat * h_prev;
}

/// F_new = F_old − η·crop(F_old − F̂, −c, c): every entry moves toward F̂ by
/// at most η·c.
inline Matrix blend_update(const Matrix& f_old, const Matrix& f_hat, double eta,
                           double c) {
    if (f_old.rows() != f_hat.rows() || f_old.cols() != f_hat.cols())
        throw std::invalid_argument("blend_update: shape mismatch");
    if (eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("blend_update: eta must lie in [0, 1]");
    if (!(c > 0.0)) throw std::invalid_argument("blend_update: c must be positive");
    return f_old - eta * crop(Matrix(f_old - f_hat), -c, c);
}

// --- sparse-support variants -------------------------------------------------
// The grid-localized estimators keep F on a fixed sparse support (the
// localization/parameter pattern), so the filter prediction stays O(nnz·l)
// and the stored operator stays O(l · max row support).

/// Sparse matrix whose pattern is the union of `support_rows` (explicit
/// zeros kept, so later updates can write there) and the nonzeros of `f0`;
/// values come from `f0`.
inline SparseMatrix sparse_on_support(const std::vector<std::vector<int>>& support_rows,
                                      const Matrix& f0) {
    const auto n = static_cast<Eigen::Index>(support_rows.size());
    if (f0.rows() != n || f0.cols() != n)
        throw std::invalid_argument("sparse_on_support: shape mismatch");
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = support_rows[static_cast<std::size_t>(i)];  // copy; add extras
        for (Eigen::Index q = 0; q < n; ++q)
            if (f0(i, q) != 0.0 &&
                !std::binary_search(row.begin(), row.end(), static_cast<int>(q)))
                row.push_back(static_cast<int>(q));
        for (int j : row) trip.emplace_back(i, j, f0(i, j));
    }
    SparseMatrix f(n, n);
    f.setFromTriplets(trip.begin(), trip.end());
    return f;
}

/// In-place blend F ← F − η·crop(F − F̂, −c, c) over F's stored pattern.
/// F̂'s support must be contained in F's (entries F̂ would add elsewhere
/// cannot be represented and are reported as an error).
inline void sparse_blend_update(SparseMatrix& f, const SparseMatrix& f_hat, double eta,
                                double c) {
    if (f.rows() != f_hat.rows() || f.cols() != f_hat.cols())
        throw std::invalid_argument("sparse_blend_update: shape mismatch");
    if (eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("sparse_blend_update: eta must lie in [0, 1]");
    if (!(c > 0.0))
        throw std::invalid_argument("sparse_blend_update: c must be positive");

    std::vector<double> hat_row(static_cast<std::size_t>(f.cols()), 0.0);
    std::vector<std::uint8_t> present(static_cast<std::size_t>(f.cols()), 0);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        for (SparseMatrix::InnerIterator it(f_hat, i); it; ++it) {
            hat_row[static_cast<std::size_t>(it.col())] = it.value();
            present[static_cast<std::size_t>(it.col())] = 1;
        }
        for (SparseMatrix::InnerIterator it(f, i); it; ++it) {
            const auto j = static_cast<std::size_t>(it.col());
            const double diff = it.value() - hat_row[j];
            it.valueRef() = it.value() - eta * std::clamp(diff, -c, c);
            present[j] = 0;
        }
        for (SparseMatrix::InnerIterator it(f_hat, i); it; ++it) {
            const auto j = static_cast<std::size_t>(it.col());
            if (present[j])
                throw std::logic_error(
                    "sparse_blend_update: estimate has support outside the stored pattern");
            hat_row[j] = 0.0;
        }
    }
}

struct LockResult {
    std::vector<FilterState> states;
    std::vector<Matrix> f_history;  // transition matrix in effect after each update
    std::vector<Eigen::Index> update_times;
};

/// Result of the grid-localized runners, whose operator history is sparse.
struct SparseLockResult {
    std::vector<FilterState> states;
    std::vector<SparseMatrix> f_history;  // operator in effect after each update
    std::vector<Eigen::Index> update_times;
    bool empty_support_warned = false;
};

inline LockResult lock_run(const LinearGaussianSSM& model,
                           const std::vector<Vector>& observations,
                           const LockConfig& cfg) {
    cfg.validate();
    if (observations.empty()) throw std::invalid_argument("lock_run: no observations");

    OnlineKf filter(model, cfg.kf);
    ObservationWindow window(cfg.tau);
    const Matrix h_pinv = pinv(model.H, cfg.pinv);
    Matrix f_current = model.F;

    LockResult out;
    out.states.reserve(observations.size());
    for (std::size_t t = 0; t < observations.size(); ++t) {
        out.states.push_back(filter.step(&observations[t]));
        window.push(observations[t]);
        if (t % static_cast<std::size_t>(cfg.tau) == 0 && window.full()) {
            const Matrix g_hat = estimate_g(window.y_now(), window.y_prev(), cfg.pinv);
            const Matrix f_hat = h_pinv * g_hat * model.H;
            f_current = blend_update(f_current, f_hat, cfg.eta, cfg.c);
            filter.set_transition(f_current);
            out.f_history.push_back(f_current);
            out.update_times.push_back(static_cast<Eigen::Index>(t));
        }
    }
    return out;
}

}  // namespace lock
