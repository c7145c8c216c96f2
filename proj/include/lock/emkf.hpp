/// @file emkf.hpp EM baseline: every τ frames, re-estimate the transition
/// matrix by a few EM sweeps over the most recent τ+1 observations, then
/// blend the estimate into the running F through the crop rule.
///
/// The EM window is anchored at the one-step-ahead prediction the outer
/// filter had produced for the window's first frame, so the window filter
/// starts with an update-only step and no observation is counted twice.

#pragma once

#include <deque>
#include <stdexcept>
#include <vector>

#include "lock/linalg.hpp"
#include "lock/ssm.hpp"

namespace lock {

struct EmkfConfig {
    int tau = 4;         // frames between transition updates
    int iterations = 5;  // EM sweeps per update
    double eta = 1.0;    // learning rate of the blend
    double c = 0.5;      // cutoff distance of the crop
    KfOptions kf{};

    void validate() const {
        if (tau < 1) throw std::invalid_argument("EmkfConfig: tau must be >= 1");
        if (iterations < 1)
            throw std::invalid_argument("EmkfConfig: iterations must be >= 1");
        if (!(eta > 0.0) || eta > 1.0)
            throw std::invalid_argument("EmkfConfig: eta must lie in (0, 1]");
        if (!(c > 0.0)) throw std::invalid_argument("EmkfConfig: c must be positive");
    }
};

struct EmTransitionEstimate {
    Matrix f_hat;
    /// The denominator sum needed the pseudo-inverse cutoff (rank-deficient).
    bool rank_deficient = false;
};

/// One EM sweep for F: smooth the window under the current model, then
///   F̂ = (Σ_t V_{t,t-1|T} + x_{t|T} x_{t-1|T}ᵀ) (Σ_t V_{t-1|T} + x_{t-1|T} x_{t-1|T}ᵀ)⁻¹,
/// the maximizer of the expected complete-data log-likelihood in F with all
/// other parameters held fixed.
///
/// (x0, V0) is taken as the distribution of the first window state itself,
/// so F governs exactly the window's |window|−1 transitions — the sums above
/// cover every F-dependent term, which is what makes the sweep monotone in
/// the window likelihood evaluated under the same convention.
inline EmTransitionEstimate em_transition_step(const LinearGaussianSSM& model,
                                               const std::vector<Vector>& window,
                                               const KfOptions& opts = {}) {
    if (window.size() < 2)
        throw std::invalid_argument("em_transition_step: window needs >= 2 frames");
    KfOptions eopts = opts;
    eopts.keep_covariances = true;
    eopts.prior_is_prediction = true;
    const auto states = kf_run(model, window, eopts);
    const auto smoothed = rts_smooth(model, states, eopts);

    const Eigen::Index m = model.state_dim();
    Matrix num = Matrix::Zero(m, m);
    Matrix den = Matrix::Zero(m, m);
    for (std::size_t t = 1; t < smoothed.size(); ++t) {
        num += smoothed[t].V_lag +
               smoothed[t].x_smooth * smoothed[t - 1].x_smooth.transpose();
        den += smoothed[t - 1].V_smooth +
               smoothed[t - 1].x_smooth * smoothed[t - 1].x_smooth.transpose();
    }
    const SymmetricPinv sp = symmetric_pinv(symmetrize(den), opts.pinv);
    EmTransitionEstimate out;
    out.f_hat = num * sp.inverse;
    out.rank_deficient = !sp.full_rank;
    return out;
}

struct EmkfUpdate {
    Eigen::Index t = 0;   // frame at which the update fired
    Matrix f_hat;         // EM estimate after the final sweep, before blending
    /// Window log-likelihood before the first sweep and after each sweep
    /// (`iterations` + 1 values); EM theory says it never decreases.
    std::vector<double> window_log_lik;
    bool rank_deficient = false;
};

struct EmkfResult {
    std::vector<FilterState> states;
    std::vector<Matrix> f_history;  // transition matrix in effect after each update
    std::vector<EmkfUpdate> updates;
};

inline EmkfResult emkf_run(const LinearGaussianSSM& model,
                           const std::vector<Vector>& observations,
                           const EmkfConfig& cfg) {
    cfg.validate();
    if (observations.empty()) throw std::invalid_argument("emkf_run: no observations");

    KfOptions main_opts = cfg.kf;
    main_opts.prior_is_prediction = false;
    main_opts.keep_covariances = true;  // window priors come from the predictions
    OnlineKf filter(model, main_opts);

    KfOptions window_opts = cfg.kf;
    window_opts.prior_is_prediction = true;
    window_opts.keep_covariances = true;

    EmkfResult out;
    out.states.reserve(observations.size());
    Matrix f_current = model.F;

    // One-step-ahead predictions for the last τ+1 frames; front() is the
    // prior of the window about to be refit.
    std::deque<std::pair<Vector, Matrix>> pred_history;

    for (std::size_t t = 0; t < observations.size(); ++t) {
        filter.set_transition(f_current);
        FilterState st = filter.step(&observations[t]);
        pred_history.emplace_back(st.x_pred, st.V_pred);
        if (pred_history.size() > static_cast<std::size_t>(cfg.tau) + 1)
            pred_history.pop_front();
        out.states.push_back(std::move(st));

        const bool window_full = t + 1 >= static_cast<std::size_t>(cfg.tau) + 1;
        if (t % static_cast<std::size_t>(cfg.tau) == 0 && window_full) {
            LinearGaussianSSM window_model = model;
            window_model.F = f_current;
            window_model.x0 = pred_history.front().first;
            window_model.V0 = pred_history.front().second;
            const std::vector<Vector> window(
                observations.begin() + static_cast<std::ptrdiff_t>(t) - cfg.tau,
                observations.begin() + static_cast<std::ptrdiff_t>(t) + 1);

            EmkfUpdate upd;
            upd.t = static_cast<Eigen::Index>(t);
            upd.window_log_lik.push_back(
                log_likelihood(window_model, window, window_opts).value);
            for (int it = 0; it < cfg.iterations; ++it) {
                auto est = em_transition_step(window_model, window, window_opts);
                window_model.F = std::move(est.f_hat);
                upd.rank_deficient = upd.rank_deficient || est.rank_deficient;
                upd.window_log_lik.push_back(
                    log_likelihood(window_model, window, window_opts).value);
            }
            upd.f_hat = window_model.F;

            f_current -= cfg.eta * crop(Matrix(f_current - window_model.F), -cfg.c, cfg.c);
            out.f_history.push_back(f_current);
            out.updates.push_back(std::move(upd));
        }
    }
    return out;
}

}  // namespace lock
