/// @file linalg.hpp Dense matrix utilities shared by all estimators:
/// Moore-Penrose pseudo-inverse, elementwise crop, PSD maintenance.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <stdexcept>

namespace lock {

/// Row-major dense storage everywhere; a single entry-layout convention
/// avoids transposition bugs at module boundaries.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rank handling for pseudo-inverses. Singular values below
/// rank_tolerance * sigma_max are treated as zero.
struct PinvOptions {
    double rank_tolerance = 1e-10;
};

/// Moore-Penrose pseudo-inverse via SVD with a relative cutoff.
/// Satisfies the four Penrose conditions to numerical tolerance.
inline Matrix pinv(const Matrix& m, const PinvOptions& opts = {}) {
    if (!m.allFinite()) {
        throw std::invalid_argument("pinv: input has non-finite entries");
    }
    if (opts.rank_tolerance < 0.0) {
        throw std::invalid_argument("pinv: rank_tolerance must be >= 0");
    }
    if (m.rows() == 0 || m.cols() == 0) {
        return Matrix::Zero(m.cols(), m.rows());
    }
    // Jacobi is more accurate for small problems, BDC scales better.
    Eigen::JacobiSVD<Matrix> jsvd;
    Eigen::BDCSVD<Matrix> bsvd;
    const bool small = std::min(m.rows(), m.cols()) <= 16;
    const auto flags = Eigen::ComputeThinU | Eigen::ComputeThinV;
    if (small) {
        jsvd.compute(m, flags);
    } else {
        bsvd.compute(m, flags);
    }
    const Vector& sigma = small ? jsvd.singularValues() : bsvd.singularValues();
    const Matrix u = small ? Matrix(jsvd.matrixU()) : Matrix(bsvd.matrixU());
    const Matrix v = small ? Matrix(jsvd.matrixV()) : Matrix(bsvd.matrixV());

    const double cutoff = opts.rank_tolerance * (sigma.size() > 0 ? sigma(0) : 0.0);
    Vector inv_sigma = Vector::Zero(sigma.size());
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (sigma(i) > cutoff && sigma(i) > 0.0) {
            inv_sigma(i) = 1.0 / sigma(i);
        }
    }
    return v * inv_sigma.asDiagonal() * u.transpose();
}

/// Elementwise clamp of every entry into [lo, hi].
inline Matrix crop(const Matrix& f, double lo, double hi) {
    if (lo > hi) {
        throw std::invalid_argument("crop: lower bound exceeds upper bound");
    }
    return f.cwiseMax(lo).cwiseMin(hi);
}

/// (V + V^T) / 2. Cheap symmetry repair used after every filter step.
inline Matrix symmetrize(const Matrix& v) {
    return 0.5 * (v + v.transpose());
}

/// Symmetrize and clip negative eigenvalues to zero, returning the nearest
/// PSD matrix of the symmetric part.
inline Matrix symmetrize_psd(const Matrix& v) {
    if (v.rows() != v.cols()) {
        throw std::invalid_argument("symmetrize_psd: matrix must be square");
    }
    const Matrix sym = symmetrize(v);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    Vector lambda = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
}

/// Pseudo-inverse of a symmetric PSD matrix through its eigendecomposition,
/// together with the log pseudo-determinant and rank. The innovation
/// covariance in the filter update and the Gaussian log-density both need
/// the same decomposition, so it is computed once here.
struct SymmetricPinv {
    Matrix inverse;
    double log_pseudo_det = 0.0;
    Eigen::Index rank = 0;
    bool full_rank = true;
};

inline SymmetricPinv symmetric_pinv(const Matrix& s, const PinvOptions& opts = {}) {
    if (s.rows() != s.cols()) {
        throw std::invalid_argument("symmetric_pinv: matrix must be square");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s));
    const Vector& lambda = es.eigenvalues();
    const double lmax = lambda.size() > 0 ? lambda.cwiseAbs().maxCoeff() : 0.0;
    const double cutoff = opts.rank_tolerance * lmax;

    SymmetricPinv out;
    Vector inv_lambda = Vector::Zero(lambda.size());
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (std::abs(lambda(i)) > cutoff && lambda(i) > 0.0) {
            inv_lambda(i) = 1.0 / lambda(i);
            out.log_pseudo_det += std::log(lambda(i));
            ++out.rank;
        }
    }
    out.full_rank = out.rank == lambda.size();
    out.inverse = es.eigenvectors() * inv_lambda.asDiagonal() * es.eigenvectors().transpose();
    return out;
}

}  // namespace lock
