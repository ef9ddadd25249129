#pragma once

#include <utility>
#include <vector>

#include "mlbest/numerics.hpp"

namespace mlbest {

/// vech of an n x n symmetric matrix: the lower triangle including the
/// diagonal, stacked column by column -- (0,0),(1,0),...,(n-1,0),(1,1),...
/// Pairs are 0-based (row, col) with row >= col.
std::vector<std::pair<Eigen::Index, Eigen::Index>> vech_order(Eigen::Index n);
Eigen::Index vech_size(Eigen::Index n);
Vector vech(const Matrix& S);
/// Inverse of vech for symmetric matrices.
Matrix unvech(const Vector& v, Eigen::Index n);

/// C = L~ S L~ + sigma2 U^+ (U^+)^T; the covariance the bound is taken over.
Matrix reduced_model_covariance(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var);

/// Psi: (n^2) x d, columns psi(k,l) in vech order followed by vec(U^+ (U^+)^T).
Matrix fim_psi(const Matrix& L_reduced, const Matrix& sigma_theta_reduced);

/// Fisher information for alpha = [vech(L~); sigma2] from N samples,
/// J = (N/2) Psi^T (C^{-1} kron C^{-1}) Psi. The Kronecker product is formed
/// only for n <= 20; larger problems use C^{-1} mat(psi) C^{-1} per column.
Matrix fim(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var, double samples);

/// The same matrix assembled entry by entry from the trace formula
/// (N/2) Tr{C^{-1} dC_a C^{-1} dC_b} with closed-form derivatives.
Matrix fim_entrywise(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var, double samples);

/// Trace formula with dC/dalpha from central differences of C(alpha). Test
/// oracle only: shares no derivative code with fim().
Matrix fim_numeric_oracle(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var,
                          double samples, double step);

struct CrbReport {
    Matrix J;
    Matrix B;  // pseudo-inverse of J
    std::vector<std::pair<Eigen::Index, Eigen::Index>> order;  // vech index map of the first d-1 rows
    double topology_bound_trace = 0.0;
    double noise_var_bound = 0.0;
    double samples = 0.0;

    Vector topology_bounds() const;  // diagonal of the vech(L~) block
};

CrbReport crb_bound(const Matrix& J, double samples, double rank_tol = numerics::kDefaultRankTol);

/// fim followed by crb_bound.
CrbReport crb(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var, double samples);

}  // namespace mlbest
