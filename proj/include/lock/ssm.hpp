/// @file ssm.hpp Linear Gaussian state-space model with Kalman filter,
/// Rauch-Tung-Striebel smoother (including lag-one covariances) and
/// innovation-form log-likelihood.
///
/// Model:  x_t = F x_{t-1} + v_t,  v_t ~ N(0, Q)
///         y_t = H x_t     + w_t,  w_t ~ N(0, R)
///
/// The prior (x0, V0) plays the role of the filtered state one step before
/// the first observation: the filter predicts and then updates on every
/// frame, starting with frame 0. Runs that instead want (x0, V0) to act as
/// the one-step-ahead prediction of the first frame (the EM window filter
/// does) set KfOptions::prior_is_prediction, which turns step 0 into an
/// update-only step.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lock/linalg.hpp"

namespace lock {

struct LinearGaussianSSM {
    Matrix F;   // state transition, m x m
    Matrix H;   // observation, l x m
    Matrix Q;   // system-noise covariance, m x m
    Matrix R;   // observation-noise covariance, l x l
    Vector x0;  // initial mean, m
    Matrix V0;  // initial covariance, m x m

    Eigen::Index state_dim() const { return H.cols(); }
    Eigen::Index obs_dim() const { return H.rows(); }

    void validate() const {
        const auto m = state_dim(), l = obs_dim();
        auto square = [](const Matrix& a, Eigen::Index n) {
            return a.rows() == n && a.cols() == n;
        };
        if (!square(F, m) || !square(Q, m) || !square(V0, m) || !square(R, l) ||
            x0.size() != m)
            throw std::invalid_argument("LinearGaussianSSM: inconsistent dimensions");
        if (!F.allFinite() || !H.allFinite() || !Q.allFinite() || !R.allFinite() ||
            !x0.allFinite() || !V0.allFinite())
            throw std::invalid_argument("LinearGaussianSSM: non-finite entries");
        auto sym = [](const Matrix& a) {
            return (a - a.transpose()).cwiseAbs().maxCoeff() <=
                   1e-9 * (1.0 + a.cwiseAbs().maxCoeff());
        };
        if (!sym(Q) || !sym(R) || !sym(V0))
            throw std::invalid_argument("LinearGaussianSSM: Q, R, V0 must be symmetric");
    }
};

struct FilterState {
    Eigen::Index t = 0;
    Vector x_pred;  // x_{t|t-1}
    Matrix V_pred;  // V_{t|t-1}   (empty when the run drops covariances)
    Matrix gain;    // K_t         (empty when dropped, or zero-size on skipped updates)
    Vector x_filt;  // x_{t|t}
    Matrix V_filt;  // V_{t|t}     (empty when dropped)
};

struct SmoothedState {
    Vector x_smooth;  // x_{t|T}
    Matrix V_smooth;  // V_{t|T}
    Matrix V_lag;     // V_{t,t-1|T}; empty at t = 0
};

struct KfOptions {
    PinvOptions pinv{};
    /// Keep V_pred/V_filt/gain for every step (needed by the smoother).
    /// Large-grid runs turn this off and keep means only.
    bool keep_covariances = true;
    /// Treat (x0, V0) as the prediction for frame 0 instead of the filtered
    /// state preceding it; frame 0 then gets an update without a predict.
    bool prior_is_prediction = false;
    /// Observation dimension at or above which the update uses a Cholesky
    /// solve of the innovation covariance when it is well conditioned,
    /// falling back to the eigendecomposition pseudo-inverse otherwise.
    Eigen::Index cholesky_threshold = 32;
};

// --- prediction -----------------------------------------------------------

/// x_pred = F x, V_pred = F V Fᵀ + Q (symmetrized). `MatF` may be a dense
/// Matrix or a SparseMatrix; grid-local transitions stay sparse so that the
/// two products cost O(nnz·m) instead of O(m³).
template <typename MatF>
inline void kf_predict_into(const MatF& f, const Matrix& q, const Vector& x_filt,
                            const Matrix& v_filt, Vector& x_pred, Matrix& v_pred) {
    x_pred.noalias() = f * x_filt;
    Matrix fv = f * v_filt;
    v_pred.noalias() = fv * f.transpose();
    v_pred += q;
    v_pred = symmetrize(v_pred);
}

/// Identity-transition prediction: V_pred = V + Q.
inline void kf_predict_identity_into(const Matrix& q, const Vector& x_filt,
                                     const Matrix& v_filt, Vector& x_pred,
                                     Matrix& v_pred) {
    x_pred = x_filt;
    v_pred = symmetrize(v_filt + q);
}

inline std::pair<Vector, Matrix> kf_predict(const LinearGaussianSSM& model,
                                            const FilterState& prev) {
    if (model.F.cols() != prev.x_filt.size() || prev.V_filt.rows() != prev.x_filt.size())
        throw std::invalid_argument("kf_predict: dimension mismatch");
    Vector x;
    Matrix v;
    kf_predict_into(model.F, model.Q, prev.x_filt, prev.V_filt, x, v);
    return {std::move(x), std::move(v)};
}

// --- measurement update ---------------------------------------------------

struct UpdateResult {
    Vector x_filt;
    Matrix V_filt;
    Matrix gain;
    double log_lik = 0.0;  // log N(y; H x_pred, H V_pred Hᵀ + R)
    bool degenerate = false;  // innovation covariance was rank-deficient
};

namespace detail {

/// Shared update kernel. `h_identity` short-circuits H = I (every experiment
/// in the corpus observes the state directly). The innovation covariance is
/// inverted by Cholesky when large and well conditioned, and by the
/// eigendecomposition pseudo-inverse otherwise, which also covers singular S.
inline UpdateResult kf_update_core(const Matrix& h, const Matrix& r, const Vector& x_pred,
                                   const Matrix& v_pred, const Vector& y,
                                   const KfOptions& opts, bool h_identity,
                                   bool want_gain) {
    if (!y.allFinite())
        throw std::invalid_argument("kf_update: non-finite observation");
    const Eigen::Index l = y.size();

    Vector innov = h_identity ? Vector(y - x_pred) : Vector(y - h * x_pred);
    // B = V_pred Hᵀ, S = H B + R.
    Matrix b;
    Matrix s;
    if (h_identity) {
        s = v_pred + r;
    } else {
        b.noalias() = v_pred * h.transpose();
        s.noalias() = h * b;
        s += r;
    }
    s = symmetrize(s);
    const Matrix& bref = h_identity ? v_pred : b;

    UpdateResult out;
    bool done = false;
    if (l >= opts.cholesky_threshold) {
        Eigen::LLT<Matrix> llt(s);
        if (llt.info() == Eigen::Success) {
            const auto diag = llt.matrixLLT().diagonal();
            const double dmin = diag.minCoeff(), dmax = diag.maxCoeff();
            if (dmin > 0.0 && dmin > 1e-7 * dmax) {
                Vector alpha = llt.solve(innov);
                out.x_filt = x_pred + bref * alpha;
                // V_filt = V_pred − Wᵀ W with W = L⁻¹ Bᵀ (rank update = syrk).
                Matrix w = llt.matrixL().solve(bref.transpose());
                out.V_filt = v_pred;
                out.V_filt.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose(), -1.0);
                out.V_filt = Matrix(out.V_filt.selfadjointView<Eigen::Lower>());
                if (want_gain) out.gain = llt.solve(bref.transpose()).transpose();
                const double logdet = 2.0 * diag.array().log().sum();
                out.log_lik = -0.5 * (static_cast<double>(l) * std::log(2.0 * M_PI) +
                                      logdet + innov.dot(alpha));
                done = true;
            }
        }
    }
    if (!done) {
        const SymmetricPinv sp = symmetric_pinv(s, opts.pinv);
        Matrix k = bref * sp.inverse;
        out.x_filt = x_pred + k * innov;
        out.V_filt = symmetrize(v_pred - k * bref.transpose());
        out.log_lik = -0.5 * (static_cast<double>(sp.rank) * std::log(2.0 * M_PI) +
                              sp.log_pseudo_det + innov.dot(sp.inverse * innov));
        out.degenerate = !sp.full_rank;
        if (want_gain) out.gain = std::move(k);
    }
    return out;
}

inline bool matrix_is_identity(const Matrix& m) {
    return m.rows() == m.cols() && m.isIdentity(0.0);
}

}  // namespace detail

inline FilterState kf_update(const LinearGaussianSSM& model, const Vector& x_pred,
                             const Matrix& v_pred, const Vector& y,
                             const KfOptions& opts = {}) {
    if (y.size() != model.obs_dim() || x_pred.size() != model.state_dim())
        throw std::invalid_argument("kf_update: dimension mismatch");
    UpdateResult u = detail::kf_update_core(model.H, model.R, x_pred, v_pred, y, opts,
                                            detail::matrix_is_identity(model.H), true);
    FilterState s;
    s.x_pred = x_pred;
    s.V_pred = v_pred;
    s.gain = std::move(u.gain);
    s.x_filt = std::move(u.x_filt);
    s.V_filt = std::move(u.V_filt);
    return s;
}

// --- incremental filtering -------------------------------------------------

/// Filter advanced one frame at a time. The transition matrix may be swapped
/// between steps — the online estimators rewrite F every τ frames — and may
/// be sparse, which keeps the prediction cheap on grid-local operators.
/// H, Q, R stay fixed for the whole run.
class OnlineKf {
public:
    OnlineKf(const LinearGaussianSSM& model, KfOptions opts = {})
        : h_(model.H),
          q_(model.Q),
          r_(model.R),
          opts_(opts),
          x_(model.x0),
          v_(model.V0),
          h_identity_(detail::matrix_is_identity(model.H)) {
        model.validate();
        set_transition(model.F);
    }

    void set_transition(const Matrix& f) {
        f_dense_ = f;
        sparse_ = false;
        f_identity_ = detail::matrix_is_identity(f);
    }
    void set_transition(const SparseMatrix& f) {
        f_sparse_ = f;
        sparse_ = true;
        f_identity_ = false;
    }
    Matrix transition_dense() const { return sparse_ ? Matrix(f_sparse_) : f_dense_; }

    /// Advance one frame; a null observation means "missing" and skips the
    /// update. Returned covariances are dropped when the run is lean.
    FilterState step(const Vector* y) {
        FilterState st;
        st.t = t_;
        if (t_ == 0 && opts_.prior_is_prediction) {
            st.x_pred = x_;
            st.V_pred = v_;
        } else if (f_identity_) {
            kf_predict_identity_into(q_, x_, v_, st.x_pred, st.V_pred);
        } else if (sparse_) {
            kf_predict_into(f_sparse_, q_, x_, v_, st.x_pred, st.V_pred);
        } else {
            kf_predict_into(f_dense_, q_, x_, v_, st.x_pred, st.V_pred);
        }
        if (y) {
            if (y->size() != h_.rows())
                throw std::invalid_argument(
                    "kf step: observation dimension mismatch at t=" + std::to_string(t_));
            UpdateResult u;
            try {
                u = detail::kf_update_core(h_, r_, st.x_pred, st.V_pred, *y, opts_,
                                           h_identity_, opts_.keep_covariances);
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument("kf step: t=" + std::to_string(t_) + ": " +
                                            e.what());
            }
            st.x_filt = std::move(u.x_filt);
            st.V_filt = std::move(u.V_filt);
            st.gain = std::move(u.gain);
            log_lik_ += u.log_lik;
            degenerate_ = degenerate_ || u.degenerate;
        } else {
            st.x_filt = st.x_pred;
            st.V_filt = st.V_pred;
        }
        x_ = st.x_filt;
        v_ = st.V_filt;
        ++t_;
        if (!opts_.keep_covariances) {
            st.V_pred.resize(0, 0);
            st.V_filt.resize(0, 0);
            st.gain.resize(0, 0);
        }
        return st;
    }

    Eigen::Index t() const { return t_; }
    const Vector& x_filt() const { return x_; }
    const Matrix& v_filt() const { return v_; }
    double log_lik() const { return log_lik_; }
    bool degenerate() const { return degenerate_; }

private:
    Matrix h_, q_, r_;
    KfOptions opts_;
    Vector x_;
    Matrix v_;
    Matrix f_dense_;
    SparseMatrix f_sparse_;
    bool sparse_ = false;
    bool f_identity_ = false;
    bool h_identity_ = false;
    Eigen::Index t_ = 0;
    double log_lik_ = 0.0;
    bool degenerate_ = false;
};

// --- full filtering pass ---------------------------------------------------

/// Runs the filter over `observations`. `present`, when given, flags frames
/// whose observation exists; a missing frame skips the update so that the
/// filtered state equals the prediction. `log_lik_out`/`degenerate_out`
/// optionally receive the innovation log-likelihood of the pass.
inline std::vector<FilterState> kf_run(const LinearGaussianSSM& model,
                                       const std::vector<Vector>& observations,
                                       const KfOptions& opts = {},
                                       const std::vector<bool>* present = nullptr,
                                       double* log_lik_out = nullptr,
                                       bool* degenerate_out = nullptr) {
    if (observations.empty()) throw std::invalid_argument("kf_run: no observations");
    if (present && present->size() != observations.size())
        throw std::invalid_argument("kf_run: presence mask length mismatch");

    OnlineKf filter(model, opts);
    std::vector<FilterState> out;
    out.reserve(observations.size());
    for (std::size_t t = 0; t < observations.size(); ++t) {
        const bool have_obs = !present || (*present)[t];
        out.push_back(filter.step(have_obs ? &observations[t] : nullptr));
    }
    if (log_lik_out) *log_lik_out = filter.log_lik();
    if (degenerate_out) *degenerate_out = filter.degenerate();
    return out;
}

// --- RTS smoother -----------------------------------------------------------

/// Backward smoothing pass. Also fills the lag-one covariances
/// V_{t,t-1|T} needed by the EM transition update, seeded at the last step
/// with (I − K_T H) F V_{T-1|T-1} and recursed downward.
inline std::vector<SmoothedState> rts_smooth(const LinearGaussianSSM& model,
                                             const std::vector<FilterState>& states,
                                             const KfOptions& opts = {}) {
    if (states.empty()) throw std::invalid_argument("rts_smooth: empty trajectory");
    const std::size_t n = states.size();
    for (const auto& s : states)
        if (s.V_filt.size() == 0 || s.V_pred.size() == 0)
            throw std::invalid_argument(
                "rts_smooth: trajectory was filtered without covariances");

    std::vector<SmoothedState> out(n);
    out[n - 1].x_smooth = states[n - 1].x_filt;
    out[n - 1].V_smooth = states[n - 1].V_filt;

    // Smoother gains J_t = V_{t|t} Fᵀ V_{t+1|t}⁻¹, kept for the lag-one pass.
    std::vector<Matrix> j(n > 1 ? n - 1 : 0);
    for (std::size_t t = n - 1; t-- > 0;) {
        const Matrix vpred_inv = symmetric_pinv(states[t + 1].V_pred, opts.pinv).inverse;
        j[t].noalias() = states[t].V_filt * model.F.transpose() * vpred_inv;
        out[t].x_smooth =
            states[t].x_filt + j[t] * (out[t + 1].x_smooth - states[t + 1].x_pred);
        out[t].V_smooth = symmetrize(
            states[t].V_filt +
            j[t] * (out[t + 1].V_smooth - states[t + 1].V_pred) * j[t].transpose());
    }

    if (n > 1) {
        const Eigen::Index m = model.state_dim();
        const FilterState& last = states[n - 1];
        Matrix ikh;  // I − K_T H (skipped final update means K = 0).
        if (last.gain.size() == 0)
            ikh = Matrix::Identity(m, m);
        else
            ikh = Matrix::Identity(m, m) - last.gain * model.H;
        out[n - 1].V_lag = ikh * model.F * states[n - 2].V_filt;
        for (std::size_t t = n - 1; t-- > 1;) {
            out[t].V_lag = states[t].V_filt * j[t - 1].transpose() +
                           j[t] * (out[t + 1].V_lag - model.F * states[t].V_filt) *
                               j[t - 1].transpose();
        }
    }
    return out;
}

// --- likelihood -------------------------------------------------------------

struct LogLikelihood {
    double value = 0.0;
    /// True when some innovation covariance was rank-deficient and a
    /// pseudo-determinant stood in for the determinant.
    bool degenerate = false;
};

inline LogLikelihood log_likelihood(const LinearGaussianSSM& model,
                                    const std::vector<Vector>& observations,
                                    const KfOptions& opts = {}) {
    KfOptions lean = opts;
    lean.keep_covariances = false;
    LogLikelihood ll;
    kf_run(model, observations, lean, nullptr, &ll.value, &ll.degenerate);
    return ll;
}

}  // namespace lock
