#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlbest/dcmodel.hpp"
#include "mlbest/graph.hpp"

namespace mlbest {

enum class Method { two_phase, augmented_lagrangian };

std::string_view to_string(Method m) noexcept;
/// Accepts "two_phase" / "augmented_lagrangian" (also "augmented"); throws ConfigError.
Method parse_method(std::string_view name);

struct SolverSettings {
    // Augmented Lagrangian.
    double eta = 1e-2;       // natural-gradient step, 0 < eta <= 1
    double gamma = 1e-2;     // penalty / dual step
    int max_iters = 1000;
    double epsilon = 1e-8;   // stop when ||W(t+1) - W(t)||_F <= epsilon (scale-normalized W)
    int max_backtracks = 40;
    // Dykstra projection.
    int dykstra_max_iters = 50000;
    double dykstra_tol = 1e-9;
    // Eigenvalue clipping for the PD square roots.
    double clip_tol = numerics::kDefaultClipTol;
    bool center = true;

    void validate() const;  // throws ConfigError
};

struct Diagnostics {
    int iterations = 0;               // solver iterations (Dykstra or augmented)
    double final_residual = 0.0;      // last ||W(t+1)-W(t)||_F, or Dykstra change
    double projection_residual = 0.0;  // distance between the two Dykstra iterates
    double threshold_used = 0.0;      // tau
    double symmetry_residual = 0.0;   // ||W - W^T||_F at termination
    bool converged = false;
    int backtracks = 0;
    int sigma2_shrinks = 0;
    std::vector<std::string> warnings;
};

struct EstimationResult {
    Method method = Method::two_phase;
    Matrix L_hat;                // after thresholding
    Matrix L_reduced_hat;        // bottom-right block of L_hat
    Matrix L_hat_raw;            // U L_reduced_raw U^T, before thresholding
    Matrix L_reduced_raw;
    double sigma2_hat = 0.0;
    Matrix states_hat;           // empty when no measurements were supplied
    Diagnostics diagnostics;
};

/// Smallest eigenvalue of the sample covariance, clipped at zero.
double estimate_noise_variance(const Matrix& sigma_p);

/// Sigma_p~ - sigma2 U^+ (U^+)^T.
Matrix corrected_covariance(const Matrix& sigma_p_reduced, double sigma2_hat);

/// Positive-definite mixing estimate
///   S^{-1/2} (S^{1/2} A S^{1/2})^{1/2} S^{-1/2},  S = Sigma_theta~,
/// with A the corrected covariance. Exact when A = L~ S L~.
Matrix pd_mixing_estimate(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced, double sigma2_hat,
                          double clip_tol = numerics::kDefaultClipTol);

struct ProjectionResult {
    Matrix L;
    int iterations = 0;
    double residual = 0.0;  // ||x - y||_F between the affine and cone iterates
    bool converged = false;
};

/// Frobenius projection onto {symmetric, zero row sums, off-diagonal <= 0}
/// by Dykstra's alternating projections. The returned matrix takes its
/// off-diagonals from the cone iterate and its diagonal from the row sums,
/// so it is exactly feasible. Throws NoConvergence after dykstra_max_iters.
ProjectionResult closest_laplacian(const Matrix& T, const SolverSettings& settings = {});

struct RecoveryResult {
    Matrix L_reduced;
    int iterations = 0;
    double final_residual = 0.0;
    double projection_residual = 0.0;
    double symmetry_residual = 0.0;
    bool converged = false;
    int backtracks = 0;
};

RecoveryResult two_phase_recovery(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced,
                                  double sigma2_hat, const SolverSettings& settings = {});

struct Multipliers {
    Vector mu;      // row-sum constraints, >= 0
    Matrix Lambda;  // off-diagonal constraints, >= 0, zero diagonal
    Matrix D;       // symmetry constraint

    static Multipliers zeros(Eigen::Index n);
};

/// Dual ascent step. Constraints are evaluated on sym(W^{-1}), so mu and
/// Lambda stay consistent with a symmetric Laplacian estimate.
Multipliers update_multipliers(const Matrix& W, const Multipliers& current, double gamma);

/// Natural-gradient direction W^T (dQ/dW) W^T of the augmented objective:
///   W^T S^{-1} W A W^T - W^T + (1 mu^T + mu 1^T)/2 - Lambda + W^T (D^T - D) W^T,
/// with A the corrected covariance and S = Sigma_theta~. Vanishes at W = L~^{-1}
/// for exact A and inactive constraints. Throws SingularW when cond(W) > 1e12.
Matrix natural_gradient_direction(const Matrix& W, const Multipliers& m, const Matrix& A,
                                  const Matrix& sigma_theta_reduced);

/// The direction with the first term written as A W^{-1} S^{-1} and the mu
/// term as 1 mu^T. Kept for comparison only; it is not zero at the truth.
Matrix natural_gradient_direction_as_printed(const Matrix& W, const Multipliers& m, const Matrix& A,
                                             const Matrix& sigma_theta_reduced);

/// Augmented objective whose natural gradient is the direction above, taking
/// mu and Lambda before the dual step. +inf when det W <= 0.
double augmented_objective(const Matrix& W, const Multipliers& before_update, const Matrix& A,
                           const Matrix& sigma_theta_reduced, double gamma);

/// Natural-gradient augmented Lagrangian on W = L~^{-1}. The problem is scaled
/// by s = ||L_init||_2 so the step sizes are dimensionless; every step is
/// halved until the augmented objective does not increase. Reaching max_iters
/// is reported through `converged`, not thrown.
RecoveryResult augmented_lagrangian_recovery(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced,
                                             double sigma2_hat, const SolverSettings& settings = {},
                                             const std::optional<Matrix>& W_init = std::nullopt);

struct SparsifyResult {
    Matrix L;
    double tau = 0.0;
    int halvings = 0;
    bool connected = true;
};

/// Zeroes off-diagonals with |entry| <= tau, tau = alpha * min diagonal.
/// tau is halved (up to 10 times) while the remaining support is disconnected;
/// if it never reconnects the input is returned unchanged with tau = 0.
SparsifyResult sparsify(const Matrix& L_hat, double alpha);

/// Theta = Sigma_theta L (L^T Sigma_theta L + sigma2 I)^+ P.
Matrix mmse_states(const Matrix& P, const Matrix& L, const Matrix& sigma_theta, double noise_var);

/// The full pipeline: centering, covariance, sigma2, topology, expansion,
/// thresholding and MMSE states.
EstimationResult ml_best(const MeasurementSet& ms, const StatePrior& prior, Method method,
                         const SolverSettings& settings, double alpha);

/// Same pipeline starting from a full covariance (no sampling). States are
/// estimated only when P is non-empty.
EstimationResult ml_best_from_covariance(const Matrix& sigma_p, const StatePrior& prior, Method method,
                                         const SolverSettings& settings, double alpha, const Matrix& P = Matrix());

}  // namespace mlbest
