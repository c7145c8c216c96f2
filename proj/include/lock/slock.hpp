/// @file slock.hpp Spatially uniform operator construction (SLOCK).
///
/// When the dynamics are the same everywhere on the grid — a uniform flow —
/// all operator entries that realize the same relative cell offset can share
/// one parameter. A parameter map P assigns each (i,j) a label in {1..α}
/// (0 = structurally zero); the regression then estimates only the α-vector
/// θ through the summed regressor Ξ with Ξ_{ij} = Σ_{k: P_ik=j} y_prev[k].
/// Because α is tiny, a window of τ = 1 already identifies θ.

#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lock/grid.hpp"
#include "lock/linalg.hpp"
#include "lock/lock.hpp"
#include "lock/ssm.hpp"

namespace lock {

struct ParameterMap {
    IntMatrix p;    // l×l labels; 0 marks a structural zero of the operator
    int alpha = 0;  // number of distinct nonzero labels

    Eigen::Index size() const { return p.rows(); }

    void validate() const {
        if (p.rows() != p.cols())
            throw std::invalid_argument("ParameterMap: matrix must be square");
        if (alpha < 0) throw std::invalid_argument("ParameterMap: negative alpha");
        std::vector<bool> seen(static_cast<std::size_t>(alpha) + 1, false);
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j) {
                const int label = p(i, j);
                if (label < 0 || label > alpha)
                    throw std::invalid_argument(
                        "ParameterMap: label out of range at (" + std::to_string(i) +
                        ", " + std::to_string(j) + ")");
                seen[static_cast<std::size_t>(label)] = true;
            }
        for (int label = 1; label <= alpha; ++label)
            if (!seen[static_cast<std::size_t>(label)])
                throw std::invalid_argument("ParameterMap: label " +
                                            std::to_string(label) + " unused (gap)");
    }

    /// Sorted column indices of the nonzero labels per row — the fixed
    /// sparsity pattern of any operator respecting this map.
    std::vector<std::vector<int>> support_rows() const {
        std::vector<std::vector<int>> rows(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j)
                if (p(i, j) > 0) rows[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
        return rows;
    }
};

/// Translation-invariant map: one label per relative offset (Δrow, Δcol)
/// with Chebyshev norm ≤ d — α = (2d+1)² on grids large enough to realize
/// every offset, fewer (compressed, gap-free) on small ones. Pairs farther
/// apart than d get label 0.
inline ParameterMap build_parameter_map(const GridSpec& grid, int d) {
    if (d < 0) throw std::invalid_argument("build_parameter_map: d must be >= 0");
    const int width = 2 * d + 1;
    const int cells = grid.cells();

    ParameterMap map;
    map.p = IntMatrix::Zero(cells, cells);
    std::vector<int> raw_used(static_cast<std::size_t>(width) * width, 0);
    for (int i = 0; i < cells; ++i) {
        const int ri = grid.row_of(i), ci = grid.col_of(i);
        for (int dr = -d; dr <= d; ++dr)
            for (int dc = -d; dc <= d; ++dc) {
                if (!grid.contains(ri + dr, ci + dc)) continue;
                const int j = grid.index(ri + dr, ci + dc);
                const int raw = (dr + d) * width + (dc + d);
                map.p(i, j) = raw + 1;
                raw_used[static_cast<std::size_t>(raw)] = 1;
            }
    }
    // Compress to consecutive labels 1..alpha (small grids miss offsets).
    std::vector<int> relabel(raw_used.size() + 1, 0);
    int next = 0;
    for (std::size_t raw = 0; raw < raw_used.size(); ++raw)
        if (raw_used[raw]) relabel[raw + 1] = ++next;
    map.alpha = next;
    if (next != static_cast<int>(raw_used.size()))
        for (Eigen::Index i = 0; i < map.p.rows(); ++i)
            for (Eigen::Index j = 0; j < map.p.cols(); ++j)
                map.p(i, j) = relabel[static_cast<std::size_t>(map.p(i, j))];
    return map;
}

/// Ξ_{ij} = Σ_{k: P_ik = j} y_prev[k]  (l×α summed regressor).
inline Matrix build_xi(const ParameterMap& map, const Vector& y_prev) {
    if (y_prev.size() != map.size())
        throw std::invalid_argument("build_xi: observation length mismatch");
    Matrix xi = Matrix::Zero(map.size(), map.alpha);
    for (Eigen::Index i = 0; i < map.size(); ++i)
        for (Eigen::Index k = 0; k < map.size(); ++k) {
            const int label = map.p(i, k);
            if (label == 0) continue;
            if (label < 0 || label > map.alpha)
                throw std::invalid_argument("build_xi: invalid label in map");
            xi(i, label - 1) += y_prev(k);
        }
    return xi;
}

/// Minimum-norm least-squares parameters θ̂ = Ξ⁺ · y_now.
inline Vector estimate_theta(const Matrix& xi, const Vector& y_now,
                             const PinvOptions& opts = {}) {
    if (xi.rows() != y_now.size())
        throw std::invalid_argument("estimate_theta: shape mismatch");
    if (xi.cols() == 0) return Vector(0);  // everywhere-zero map has no parameters
    return pinv(xi, opts) * y_now;
}

/// G_{ij} = θ_{P_ij} for nonzero labels, 0 elsewhere.
inline Matrix theta_to_g(const Vector& theta, const ParameterMap& map) {
    if (theta.size() != map.alpha)
        throw std::invalid_argument("theta_to_g: theta length != alpha");
    Matrix g = Matrix::Zero(map.size(), map.size());
    for (Eigen::Index i = 0; i < map.size(); ++i)
        for (Eigen::Index j = 0; j < map.size(); ++j)
            if (map.p(i, j) > 0) g(i, j) = theta(map.p(i, j) - 1);
    return g;
}

/// Sparse variant of theta_to_g; the pattern is exactly the nonzero labels.
inline SparseMatrix theta_to_g_sparse(const Vector& theta, const ParameterMap& map) {
    if (theta.size() != map.alpha)
        throw std::invalid_argument("theta_to_g_sparse: theta length != alpha");
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index i = 0; i < map.size(); ++i)
        for (Eigen::Index j = 0; j < map.size(); ++j)
            if (map.p(i, j) > 0) trip.emplace_back(i, j, theta(map.p(i, j) - 1));
    SparseMatrix g(map.size(), map.size());
    g.setFromTriplets(trip.begin(), trip.end());
    return g;
}

/// θ̂ from a full window: Ξ blocks built from each of the τ older frames are
/// stacked vertically against the τ newer frames, reducing to the single
/// system Ξ(y_{t-1}) θ = y_t at τ = 1.
inline Vector estimate_theta_window(const ParameterMap& map, const ObservationWindow& window,
                                    const PinvOptions& opts = {}) {
    if (!window.full())
        throw std::invalid_argument("estimate_theta_window: window not full");
    const auto& frames = window.frames();
    const auto tau = static_cast<Eigen::Index>(window.capacity() - 1);
    const Eigen::Index l = map.size();
    Matrix xi(tau * l, map.alpha);
    Vector target(tau * l);
    for (Eigen::Index s = 0; s < tau; ++s) {
        xi.middleRows(s * l, l) = build_xi(map, frames[static_cast<std::size_t>(s)]);
        target.segment(s * l, l) = frames[static_cast<std::size_t>(s) + 1];
    }
    return estimate_theta(xi, target, opts);
}

inline SparseLockResult slock_run(const LinearGaussianSSM& model,
                                  const std::vector<Vector>& observations,
                                  const ParameterMap& map, const LockConfig& cfg) {
    cfg.validate();
    map.validate();
    if (observations.empty()) throw std::invalid_argument("slock_run: no observations");
    if (model.obs_dim() != map.size())
        throw std::invalid_argument("slock_run: observation dimension != map size");

    const bool h_identity = detail::matrix_is_identity(model.H);
    OnlineKf filter(model, cfg.kf);
    ObservationWindow window(cfg.tau);
    SparseLockResult out;
    out.states.reserve(observations.size());

    SparseMatrix f_sparse;
    Matrix f_dense;
    Matrix h_pinv;
    if (h_identity) {
        f_sparse = sparse_on_support(map.support_rows(), model.F);
        filter.set_transition(f_sparse);
    } else {
        f_dense = model.F;
        h_pinv = pinv(model.H, cfg.pinv);
    }

    for (std::size_t t = 0; t < observations.size(); ++t) {
        out.states.push_back(filter.step(&observations[t]));
        window.push(observations[t]);
        if (t % static_cast<std::size_t>(cfg.tau) == 0 && window.full()) {
            const Vector theta = estimate_theta_window(map, window, cfg.pinv);
            if (h_identity) {
                sparse_blend_update(f_sparse, theta_to_g_sparse(theta, map), cfg.eta,
                                    cfg.c);
                filter.set_transition(f_sparse);
                out.f_history.push_back(f_sparse);
            } else {
                const Matrix f_hat = h_pinv * theta_to_g(theta, map) * model.H;
                f_dense = blend_update(f_dense, f_hat, cfg.eta, cfg.c);
                filter.set_transition(f_dense);
                out.f_history.push_back(f_dense.sparseView());
            }
            out.update_times.push_back(static_cast<Eigen::Index>(t));
        }
    }
    return out;
}

// --- plain-text map files ----------------------------------------------------
// One row per line, space-separated integer labels; alpha is the largest
// label and the set {1..alpha} must be fully used.

inline ParameterMap load_parameter_map(std::istream& in) {
    std::vector<std::vector<int>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<int> row;
        int v;
        while (ls >> v) row.push_back(v);
        if (!ls.eof() && ls.fail())
            throw std::invalid_argument("parameter map: non-integer token in line " +
                                        std::to_string(rows.size() + 1));
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::invalid_argument("parameter map: empty file");
    const auto l = rows.size();
    ParameterMap map;
    map.p = IntMatrix::Zero(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
    int max_label = 0;
    for (std::size_t i = 0; i < l; ++i) {
        if (rows[i].size() != l)
            throw std::invalid_argument("parameter map: row " + std::to_string(i + 1) +
                                        " has " + std::to_string(rows[i].size()) +
                                        " entries, expected " + std::to_string(l));
        for (std::size_t j = 0; j < l; ++j) {
            map.p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            max_label = std::max(max_label, rows[i][j]);
        }
    }
    map.alpha = max_label;
    map.validate();
    return map;
}

inline ParameterMap load_parameter_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("parameter map: cannot open " + path);
    return load_parameter_map(in);
}

inline void save_parameter_map(const ParameterMap& map, std::ostream& out) {
    for (Eigen::Index i = 0; i < map.p.rows(); ++i) {
        for (Eigen::Index j = 0; j < map.p.cols(); ++j) {
            if (j) out << ' ';
            out << map.p(i, j);
        }
        out << '\n';
    }
}

inline void save_parameter_map(const ParameterMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("parameter map: cannot open " + path);
    save_parameter_map(map, out);
}

}  // namespace lock
