#pragma once

#include <Eigen/Dense>

namespace mlbest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace numerics {

inline constexpr double kDefaultClipTol = 1e-8;
inline constexpr double kDefaultRankTol = 1e-10;
inline constexpr double kSymmetryTol = 1e-9;

/// Eigen-decomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending. Each eigenvector's first entry whose
/// magnitude exceeds 1e-12 is made positive so that seeded runs produce
/// identical outputs.
struct SymEig {
    Vector eigenvalues;
    Matrix eigenvectors;

    Matrix reconstruct() const;
};

SymEig sym_eig(const Matrix& s);

/// Symmetric PSD square root. Eigenvalues in [-clip_tol * ||S||_2, 0) are
/// clipped to zero; anything more negative raises NotApproxPSD.
Matrix psd_sqrt(const Matrix& s, double clip_tol = kDefaultClipTol);

/// Moore-Penrose pseudo-inverse through the SVD. Singular values below
/// rank_tol * sigma_max are treated as zero.
Matrix pinv(const Matrix& a, double rank_tol = kDefaultRankTol);

/// Pseudo-inverse specialised to symmetric input (eigen-decomposition route).
Matrix sym_pinv(const Matrix& s, double rank_tol = kDefaultRankTol);

double max_asymmetry(const Matrix& s);
void require_finite(const Matrix& a, const char* what);
void require_symmetric(const Matrix& s, const char* what);
void require_square(const Matrix& s, const char* what);

inline Matrix symmetrize(const Matrix& s) { return 0.5 * (s + s.transpose()); }

}  // namespace numerics
}  // namespace mlbest
