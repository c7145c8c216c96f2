/// @file metrics.hpp Error metrics for state estimates and estimated
/// operators, plus the tiny labeled-series container the experiment outputs
/// are written from.

#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lock/linalg.hpp"

namespace lock {

/// One named per-step curve; row t of the CSV output is (start + index).
struct MetricSeries {
    std::string label;
    Eigen::Index start = 0;
    std::vector<double> values;
};

inline double rmse(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("rmse: length mismatch");
    if (a.size() == 0) throw std::invalid_argument("rmse: empty input");
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

/// Root mean squared error over the entries the mask selects (mask > 0):
/// sqrt( (1/n_z) Σ_mask (F − F̂)² ) with n_z the selected-entry count.
inline double srmse(const Matrix& f_true, const Matrix& f_hat, const Matrix& mask) {
    if (f_true.rows() != f_hat.rows() || f_true.cols() != f_hat.cols() ||
        f_true.rows() != mask.rows() || f_true.cols() != mask.cols())
        throw std::invalid_argument("srmse: shape mismatch");
    double sum = 0.0;
    Eigen::Index n_z = 0;
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            if (mask(i, j) > 0.0) {
                const double d = f_true(i, j) - f_hat(i, j);
                sum += d * d;
                ++n_z;
            }
    if (n_z == 0) throw std::invalid_argument("srmse: mask selects no entries");
    return std::sqrt(sum / static_cast<double>(n_z));
}

/// Restriction of a mask to the entries whose reference value is zero —
/// the support the "true = 0" operator-error curves are computed on.
inline Matrix true_zero_mask(const Matrix& f_true, const Matrix& mask) {
    if (f_true.rows() != mask.rows() || f_true.cols() != mask.cols())
        throw std::invalid_argument("true_zero_mask: shape mismatch");
    Matrix out = Matrix::Zero(mask.rows(), mask.cols());
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            if (mask(i, j) > 0.0 && f_true(i, j) == 0.0) out(i, j) = 1.0;
    return out;
}

/// Per-step RMSE between two frame matrices (rows are time steps).
inline MetricSeries state_rmse_series(const Matrix& a, const Matrix& b,
                                      std::string label, Eigen::Index start = 0) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("state_rmse_series: shape mismatch");
    MetricSeries s;
    s.label = std::move(label);
    s.start = start;
    s.values.reserve(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index t = 0; t < a.rows(); ++t)
        s.values.push_back(rmse(a.row(t).transpose(), b.row(t).transpose()));
    return s;
}

inline double series_mean(const MetricSeries& s) {
    if (s.values.empty()) throw std::invalid_argument("series_mean: empty series");
    double sum = 0.0;
    for (double v : s.values) sum += v;
    return sum / static_cast<double>(s.values.size());
}

/// Post-cutoff forecasting comparison: from step cutoff+1 on, the truth row
/// is scored against (a) the model rollout x ← F·x seeded with x_cutoff and
/// (b) the last observation, held frozen. Truth rows and the rolled state
/// must live in the same coordinates (identity observation operator).
struct PredictionComparison {
    MetricSeries rollout;
    MetricSeries frozen;
};

inline PredictionComparison prediction_rmse(const Matrix& truth, const Matrix& f,
                                            const Vector& x_cutoff,
                                            const Vector& frozen_obs, Eigen::Index cutoff,
                                            const std::string& label_prefix = "prediction") {
    if (cutoff < 0 || cutoff + 1 >= truth.rows())
        throw std::invalid_argument("prediction_rmse: cutoff leaves no steps to score");
    if (x_cutoff.size() != truth.cols() || frozen_obs.size() != truth.cols() ||
        f.rows() != truth.cols() || f.cols() != truth.cols())
        throw std::invalid_argument("prediction_rmse: dimension mismatch");

    PredictionComparison out;
    out.rollout.label = label_prefix + "_rollout";
    out.frozen.label = label_prefix + "_frozen";
    out.rollout.start = out.frozen.start = cutoff + 1;

    Vector x = x_cutoff;
    for (Eigen::Index t = cutoff + 1; t < truth.rows(); ++t) {
        x = f * x;
        out.rollout.values.push_back(rmse(truth.row(t).transpose(), x));
        out.frozen.values.push_back(rmse(truth.row(t).transpose(), frozen_obs));
    }
    return out;
}

/// CSV emission, one row per step: `t,label,value`.
inline void save_metrics(const std::vector<MetricSeries>& series, std::ostream& out) {
    for (const auto& s : series)
        if (s.label.find(',') != std::string::npos ||
            s.label.find('\n') != std::string::npos)
            throw std::invalid_argument("save_metrics: label contains a delimiter");
    out << "t,label,value\n" << std::setprecision(17);
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.values.size(); ++i)
            out << (s.start + static_cast<Eigen::Index>(i)) << ',' << s.label << ','
                << s.values[i] << '\n';
}

}  // namespace lock
