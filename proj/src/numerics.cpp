#include "mlbest/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "mlbest/error.hpp"

namespace mlbest {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::NonSymmetric: return "NonSymmetric";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::NotApproxPSD: return "NotApproxPSD";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::DisconnectedGraph: return "DisconnectedGraph";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::InvalidBranch: return "InvalidBranch";
        case ErrorKind::GenerationFailed: return "GenerationFailed";
        case ErrorKind::DegenerateSignal: return "DegenerateSignal";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::SingularW: return "SingularW";
        case ErrorKind::NonPositiveDiagonal: return "NonPositiveDiagonal";
        case ErrorKind::InsufficientSamples: return "InsufficientSamples";
        case ErrorKind::SingularCovariance: return "SingularCovariance";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

namespace numerics {

double max_asymmetry(const Matrix& s) {
    if (s.size() == 0) return 0.0;
    return (s - s.transpose()).cwiseAbs().maxCoeff();
}

void require_finite(const Matrix& a, const char* what) {
    if (!a.allFinite()) throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
}

void require_square(const Matrix& s, const char* what) {
    if (s.rows() != s.cols()) {
        std::ostringstream os;
        os << what << " must be square, got " << s.rows() << "x" << s.cols();
        throw Error(ErrorKind::ShapeMismatch, os.str());
    }
}

void require_symmetric(const Matrix& s, const char* what) {
    require_square(s, what);
    require_finite(s, what);
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    const double asym = max_asymmetry(s);
    if (asym > kSymmetryTol * scale) {
        std::ostringstream os;
        os << what << " asymmetry " << asym << " exceeds tolerance";
        throw Error(ErrorKind::NonSymmetric, os.str());
    }
}

Matrix SymEig::reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
}

SymEig sym_eig(const Matrix& s) {
    require_symmetric(s, "sym_eig input");
    const Eigen::Index n = s.rows();
    SymEig out;
    if (n == 0) return out;

    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(s));
    if (solver.info() != Eigen::Success) throw Error(ErrorKind::NonFinite, "eigen-solver failed");

    // SelfAdjointEigenSolver sorts ascending; flip to descending.
    out.eigenvalues = solver.eigenvalues().reverse();
    out.eigenvectors = solver.eigenvectors().rowwise().reverse();
    for (Eigen::Index j = 0; j < n; ++j) {
        auto col = out.eigenvectors.col(j);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::abs(col(i)) > 1e-12) {
                if (col(i) < 0) col = -col;
                break;
            }
        }
    }
    return out;
}

Matrix psd_sqrt(const Matrix& s, double clip_tol) {
    const SymEig eig = sym_eig(s);
    if (eig.eigenvalues.size() == 0) return Matrix(0, 0);
    const double norm2 = eig.eigenvalues.cwiseAbs().maxCoeff();
    const double smallest = eig.eigenvalues.minCoeff();
    if (smallest < -clip_tol * norm2) {
        std::ostringstream os;
        os << "smallest eigenvalue " << smallest << " below -" << clip_tol << " * " << norm2;
        throw Error(ErrorKind::NotApproxPSD, os.str());
    }
    const Vector roots = eig.eigenvalues.cwiseMax(0.0).cwiseSqrt();
    return symmetrize(eig.eigenvectors * roots.asDiagonal() * eig.eigenvectors.transpose());
}

Matrix pinv(const Matrix& a, double rank_tol) {
    require_finite(a, "pinv input");
    if (a.size() == 0) return Matrix(a.cols(), a.rows());
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double cutoff = rank_tol * sv(0);
    Vector inv = Vector::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Matrix sym_pinv(const Matrix& s, double rank_tol) {
    const SymEig eig = sym_eig(s);
    if (eig.eigenvalues.size() == 0) return Matrix(0, 0);
    const double cutoff = rank_tol * eig.eigenvalues.cwiseAbs().maxCoeff();
    Vector inv = Vector::Zero(eig.eigenvalues.size());
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
        const double v = eig.eigenvalues(i);
        if (std::abs(v) > cutoff && v != 0.0) inv(i) = 1.0 / v;
    }
    return symmetrize(eig.eigenvectors * inv.asDiagonal() * eig.eigenvectors.transpose());
}

}  // namespace numerics
}  // namespace mlbest
