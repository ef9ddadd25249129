#pragma once

#include <cstdint>

#include "mlbest/graph.hpp"

namespace mlbest {

/// Gaussian prior on the phase angles, kept in full and reduced coordinates.
struct StatePrior {
    Matrix sigma_theta;          // M x M, positive definite
    Matrix sigma_theta_reduced;  // U^T sigma_theta U

    /// Validates positive definiteness and derives the reduced covariance.
    static StatePrior from_covariance(const Matrix& sigma_theta);
    /// c^2 I; the reduced form is c^2 (I + 11^T).
    static StatePrior isotropic(Eigen::Index bus_count, double c);

    Eigen::Index bus_count() const noexcept { return sigma_theta.rows(); }
};

struct MeasurementSet {
    Matrix P;  // M x N active-power injections, one column per sample
    bool centered = false;
    std::uint64_t seed = 0;

    Eigen::Index bus_count() const noexcept { return P.rows(); }
    Eigen::Index sample_count() const noexcept { return P.cols(); }
};

struct Simulation {
    MeasurementSet measurements;
    Matrix states;  // true Theta, M x N
};

/// Draws theta[n] ~ N(0, sigma_theta) and w[n] ~ N(0, sigma2 I), returns
/// p[n] = L theta[n] + w[n]. Deterministic in `seed`.
Simulation simulate(const LaplacianPair& lp, const StatePrior& prior, double noise_var, Eigen::Index samples,
                    std::uint64_t seed);

MeasurementSet center(const MeasurementSet& ms);

struct CovariancePair {
    Matrix full;     // Sigma_p, M x M
    Matrix reduced;  // Sigma_p~, (M-1) x (M-1)
};

/// (1/N) P P^T and its reduced image U^+ Sigma (U^+)^T. No mean removal here.
CovariancePair sample_covariance(const MeasurementSet& ms);

/// L^T Sigma_theta L + sigma2 I and L~ Sigma_theta~ L~ + sigma2 U^+ (U^+)^T.
CovariancePair model_covariance(const LaplacianPair& lp, const StatePrior& prior, double noise_var);

/// Tr{L~ Sigma_theta~ L~}, the signal power entering the SNR definition.
double signal_power(const LaplacianPair& lp, const StatePrior& prior);
double snr_to_noise_var(const LaplacianPair& lp, const StatePrior& prior, double snr_db);
double noise_var_to_snr(const LaplacianPair& lp, const StatePrior& prior, double noise_var);

}  // namespace mlbest
