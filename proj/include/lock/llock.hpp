/// @file llock.hpp Grid-localized operator construction (LLOCK).
///
/// For image-sized observations a full window regression would need τ ≥ l
/// frames. Localization fixes that: a cell is assumed to interact only with
/// cells within Chebyshev distance d, encoded in a binary localization
/// matrix L = A + I. Each allowed entry (i,j) is then estimated from a small
/// regression restricted to the union of the two cells' neighborhoods, so
/// windows as short as τ ≪ l suffice.

#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <vector>

#include "lock/grid.hpp"
#include "lock/linalg.hpp"
#include "lock/lock.hpp"
#include "lock/ssm.hpp"

namespace lock {

/// Binary support mask L = A + I, stored as sorted per-row neighbor lists
/// (every row contains its own index).
struct LocalizationMatrix {
    Eigen::Index size = 0;
    std::vector<std::vector<int>> neighbors;

    bool contains(int i, int j) const {
        const auto& row = neighbors[static_cast<std::size_t>(i)];
        return std::binary_search(row.begin(), row.end(), j);
    }

    /// N_l: largest neighborhood, the per-row width of the ideal storage.
    Eigen::Index max_row_support() const {
        std::size_t m = 0;
        for (const auto& row : neighbors) m = std::max(m, row.size());
        return static_cast<Eigen::Index>(m);
    }

    Eigen::Index total_support() const {
        std::size_t s = 0;
        for (const auto& row : neighbors) s += row.size();
        return static_cast<Eigen::Index>(s);
    }

    Matrix dense() const {
        Matrix out = Matrix::Zero(size, size);
        for (std::size_t i = 0; i < neighbors.size(); ++i)
            for (int j : neighbors[i]) out(static_cast<Eigen::Index>(i), j) = 1.0;
        return out;
    }

    void validate() const {
        if (static_cast<std::size_t>(size) != neighbors.size())
            throw std::invalid_argument("LocalizationMatrix: row count mismatch");
        for (std::size_t i = 0; i < neighbors.size(); ++i) {
            const auto& row = neighbors[i];
            if (!std::is_sorted(row.begin(), row.end()))
                throw std::invalid_argument("LocalizationMatrix: rows must be sorted");
            if (!std::binary_search(row.begin(), row.end(), static_cast<int>(i)))
                throw std::invalid_argument("LocalizationMatrix: missing diagonal");
            for (int j : row) {
                if (j < 0 || j >= size)
                    throw std::invalid_argument("LocalizationMatrix: index out of range");
                if (!contains(j, static_cast<int>(i)))
                    throw std::invalid_argument("LocalizationMatrix: not symmetric");
            }
        }
    }
};

/// L_{ij} = 1 iff cells i and j lie within Chebyshev distance d on the grid
/// (no wraparound, so border rows are narrower).
inline LocalizationMatrix build_adjacency(const GridSpec& grid, int d) {
    if (d < 0) throw std::invalid_argument("build_adjacency: d must be >= 0");
    LocalizationMatrix loc;
    loc.size = grid.cells();
    loc.neighbors.reserve(static_cast<std::size_t>(grid.cells()));
    for (int i = 0; i < grid.cells(); ++i) loc.neighbors.push_back(grid.neighborhood(i, d));
    return loc;
}

struct LocalGResult {
    SparseMatrix g_hat;         // support ⊆ L
    bool empty_support = false;  // some entry had no usable support (left at 0)
};

/// Localized version of the window regression: for each (i,j) with L_{ij}=1,
/// restrict the window to the rows k = neighbors(i) ∪ neighbors(j), solve the
/// small regression Ĝ_local = Y_now|_k · (Y_prev|_k)⁺, and copy out the entry
/// at (i,j)'s local coordinates. Identical row sets share one solve.
inline LocalGResult local_g(const LocalizationMatrix& loc, const ObservationWindow& window,
                            const PinvOptions& opts = {}) {
    if (!window.full()) throw std::invalid_argument("local_g: window not full");
    const Matrix y_now = window.y_now();
    const Matrix y_prev = window.y_prev();
    if (y_now.rows() != loc.size)
        throw std::invalid_argument("local_g: window dimension mismatch");
    const Eigen::Index tau = y_now.cols();

    LocalGResult out;
    std::map<std::vector<int>, Matrix> solves;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(loc.total_support()));
    std::vector<int> k;

    for (std::size_t i = 0; i < loc.neighbors.size(); ++i) {
        const auto& row_i = loc.neighbors[i];
        for (int j : row_i) {
            const auto& row_j = loc.neighbors[static_cast<std::size_t>(j)];
            k.clear();
            std::set_union(row_i.begin(), row_i.end(), row_j.begin(), row_j.end(),
                           std::back_inserter(k));
            if (k.empty()) {
                out.empty_support = true;
                continue;
            }
            auto found = solves.find(k);
            if (found == solves.end()) {
                Matrix yn(static_cast<Eigen::Index>(k.size()), tau);
                Matrix yp(static_cast<Eigen::Index>(k.size()), tau);
                for (std::size_t r = 0; r < k.size(); ++r) {
                    yn.row(static_cast<Eigen::Index>(r)) = y_now.row(k[r]);
                    yp.row(static_cast<Eigen::Index>(r)) = y_prev.row(k[r]);
                }
                found = solves.emplace(k, estimate_g(yn, yp, opts)).first;
            }
            const auto li = static_cast<Eigen::Index>(
                std::lower_bound(k.begin(), k.end(), static_cast<int>(i)) - k.begin());
            const auto lj = static_cast<Eigen::Index>(
                std::lower_bound(k.begin(), k.end(), j) - k.begin());
            trip.emplace_back(static_cast<Eigen::Index>(i), j, found->second(li, lj));
        }
    }
    out.g_hat.resize(loc.size, loc.size);
    out.g_hat.setFromTriplets(trip.begin(), trip.end());
    return out;
}

inline SparseLockResult llock_run(const LinearGaussianSSM& model,
                                  const std::vector<Vector>& observations,
                                  const GridSpec& grid, int d, const LockConfig& cfg) {
    cfg.validate();
    if (observations.empty()) throw std::invalid_argument("llock_run: no observations");
    if (model.obs_dim() != grid.cells())
        throw std::invalid_argument("llock_run: observation dimension != grid cells");

    const LocalizationMatrix loc = build_adjacency(grid, d);
    const bool h_identity = detail::matrix_is_identity(model.H);

    OnlineKf filter(model, cfg.kf);
    ObservationWindow window(cfg.tau);
    SparseLockResult out;
    out.states.reserve(observations.size());

    // With a direct observation the operator lives on L's support and stays
    // sparse end to end; a general H forces the dense detour F̂ = H⁺ Ĝ H.
    SparseMatrix f_sparse;
    Matrix f_dense;
    Matrix h_pinv;
    if (h_identity) {
        f_sparse = sparse_on_support(loc.neighbors, model.F);
        filter.set_transition(f_sparse);
    } else {
        f_dense = model.F;
        h_pinv = pinv(model.H, cfg.pinv);
    }

    for (std::size_t t = 0; t < observations.size(); ++t) {
        out.states.push_back(filter.step(&observations[t]));
        window.push(observations[t]);
        if (t % static_cast<std::size_t>(cfg.tau) == 0 && window.full()) {
            auto lg = local_g(loc, window, cfg.pinv);
            out.empty_support_warned = out.empty_support_warned || lg.empty_support;
            if (h_identity) {
                sparse_blend_update(f_sparse, lg.g_hat, cfg.eta, cfg.c);
                filter.set_transition(f_sparse);
                out.f_history.push_back(f_sparse);
            } else {
                const Matrix f_hat = h_pinv * Matrix(lg.g_hat) * model.H;
                f_dense = blend_update(f_dense, f_hat, cfg.eta, cfg.c);
                filter.set_transition(f_dense);
                out.f_history.push_back(f_dense.sparseView());
            }
            out.update_times.push_back(static_cast<Eigen::Index>(t));
        }
    }
    return out;
}

}  // namespace lock
