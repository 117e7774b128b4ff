#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "oodlens/error.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

inline Vector column_mean(const Matrix& x) {
    return x.colwise().mean().transpose();
}

// Unbiased covariance of the rows of x.
inline Matrix row_covariance(const Matrix& x) {
    require(x.rows() >= 2, ErrorCode::TooFewSamples, "covariance needs at least 2 rows");
    const Matrix centered = x.rowwise() - x.colwise().mean();
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    return 0.5 * (cov + cov.transpose());
}

// (1 - lambda) S + lambda * (trace(S) / D) I
inline Matrix shrink_covariance(const Matrix& s, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::InvalidArgument, "shrinkage must lie in [0, 1]");
    const double tau = s.trace() / static_cast<double>(s.rows());
    Matrix out = (1.0 - lambda) * s;
    out.diagonal().array() += lambda * tau;
    return out;
}

struct SpdInverse {
    Matrix inverse;
    Matrix inverse_cholesky;  // L with inverse = L L'
    double min_eigenvalue = 0.0;
};

// Inverts an SPD matrix through its Cholesky factor after checking the
// smallest eigenvalue, then verifies S * S^-1 = I to 1e-6 in max-abs.
inline SpdInverse spd_inverse(const Matrix& s, const char* what = "covariance") {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    const double min_ev = eig.eigenvalues().minCoeff();
    if (!(min_ev > 0.0))
        fail(ErrorCode::SingularCovariance,
             std::string(what) + " is not positive definite (smallest eigenvalue " + std::to_string(min_ev) + ")");
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) fail(ErrorCode::SingularCovariance, std::string(what) + " Cholesky failed");
    const auto n = s.rows();
    SpdInverse out;
    out.inverse = llt.solve(Matrix::Identity(n, n));
    out.inverse = 0.5 * (out.inverse + out.inverse.transpose());
    out.min_eigenvalue = min_ev;
    const double residual = (s * out.inverse - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
    if (!(residual <= 1e-6))
        fail(ErrorCode::SingularCovariance,
             std::string(what) + " inverse check failed, max |S S^-1 - I| = " + std::to_string(residual));
    Eigen::LLT<Matrix> inv_llt(out.inverse);
    if (inv_llt.info() != Eigen::Success) fail(ErrorCode::SingularCovariance, std::string(what) + " precision not SPD");
    out.inverse_cholesky = inv_llt.matrixL();
    return out;
}

struct PcaBasis {
    Vector center;
    Matrix components;   // D x k, orthonormal columns, descending variance
    Vector eigenvalues;  // k, descending
};

// Top-k principal directions of the rows of x, centered by their mean.
inline PcaBasis pca(const Matrix& x, Eigen::Index k) {
    require(k >= 1 && k <= x.cols(), ErrorCode::InvalidArgument, "PCA rank out of range");
    const Matrix cov = row_covariance(x);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    require(eig.info() == Eigen::Success, ErrorCode::NonConvergence, "eigendecomposition failed");
    PcaBasis basis;
    basis.center = column_mean(x);
    basis.components = eig.eigenvectors().rightCols(k).rowwise().reverse();
    basis.eigenvalues = eig.eigenvalues().tail(k).reverse();
    return basis;
}

// Rows of x projected onto the basis after centering.
inline Matrix project(const PcaBasis& basis, const Matrix& x) {
    return (x.rowwise() - basis.center.transpose()) * basis.components;
}

}  // namespace oodlens
