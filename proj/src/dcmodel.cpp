#include "mlbest/dcmodel.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "mlbest/error.hpp"

namespace mlbest {

namespace {

void require_dims(const LaplacianPair& lp, const StatePrior& prior) {
    if (lp.bus_count() != prior.bus_count()) {
        std::ostringstream os;
        os << "Laplacian has " << lp.bus_count() << " buses but prior has " << prior.bus_count();
        throw Error(ErrorKind::ShapeMismatch, os.str());
    }
}

}  // namespace

StatePrior StatePrior::from_covariance(const Matrix& sigma_theta) {
    numerics::require_symmetric(sigma_theta, "state covariance");
    if (sigma_theta.rows() < 2) throw Error(ErrorKind::ShapeMismatch, "state covariance needs at least 2 buses");
    Eigen::LLT<Matrix> llt(numerics::symmetrize(sigma_theta));
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::NotApproxPSD, "state covariance is not positive definite");
    StatePrior prior;
    prior.sigma_theta = numerics::symmetrize(sigma_theta);
    const Matrix u = reduction_operator(sigma_theta.rows());
    prior.sigma_theta_reduced = numerics::symmetrize(u.transpose() * prior.sigma_theta * u);
    return prior;
}

StatePrior StatePrior::isotropic(Eigen::Index bus_count, double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw Error(ErrorKind::ConfigError, "prior scale c must be positive");
    return from_covariance(c * c * Matrix::Identity(bus_count, bus_count));
}

Simulation simulate(const LaplacianPair& lp, const StatePrior& prior, double noise_var, Eigen::Index samples,
                    std::uint64_t seed) {
    require_dims(lp, prior);
    if (samples < 1) throw Error(ErrorKind::ShapeMismatch, "sample count must be positive");
    if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) {
        throw Error(ErrorKind::NonFinite, "noise variance must be finite and nonnegative");
    }
    const Eigen::Index m = lp.bus_count();
    const Matrix chol = Eigen::LLT<Matrix>(prior.sigma_theta).matrixL();
    const double sigma = std::sqrt(noise_var);

    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    // Column-by-column draw order: z_theta[n] then w[n], so sample n never
    // depends on N.
    Matrix z(m, samples);
    Matrix w(m, samples);
    for (Eigen::Index n = 0; n < samples; ++n) {
        for (Eigen::Index i = 0; i < m; ++i) z(i, n) = normal(gen);
        for (Eigen::Index i = 0; i < m; ++i) w(i, n) = normal(gen);
    }
    Simulation sim;
    sim.states = chol * z;
    sim.measurements.P = lp.L * sim.states + sigma * w;
    sim.measurements.seed = seed;
    sim.measurements.centered = false;
    return sim;
}

MeasurementSet center(const MeasurementSet& ms) {
    MeasurementSet out = ms;
    if (ms.sample_count() >= 1) {
        const Vector mean = ms.P.rowwise().mean();
        out.P.colwise() -= mean;
    }
    out.centered = true;
    return out;
}

CovariancePair sample_covariance(const MeasurementSet& ms) {
    if (ms.sample_count() < 1) throw Error(ErrorKind::InsufficientSamples, "no samples");
    if (ms.bus_count() < 2) throw Error(ErrorKind::ShapeMismatch, "measurements need at least 2 buses");
    numerics::require_finite(ms.P, "measurements");
    CovariancePair c;
    c.full = numerics::symmetrize(ms.P * ms.P.transpose() / static_cast<double>(ms.sample_count()));
    const Matrix up = reduction_pinv(ms.bus_count());
    c.reduced = numerics::symmetrize(up * c.full * up.transpose());
    return c;
}

CovariancePair model_covariance(const LaplacianPair& lp, const StatePrior& prior, double noise_var) {
    require_dims(lp, prior);
    const Eigen::Index m = lp.bus_count();
    CovariancePair c;
    c.full = numerics::symmetrize(lp.L.transpose() * prior.sigma_theta * lp.L + noise_var * Matrix::Identity(m, m));
    c.reduced = numerics::symmetrize(lp.L_reduced * prior.sigma_theta_reduced * lp.L_reduced +
                                     noise_var * lp.noise_shape);
    return c;
}

double signal_power(const LaplacianPair& lp, const StatePrior& prior) {
    require_dims(lp, prior);
    return (lp.L_reduced * prior.sigma_theta_reduced * lp.L_reduced).trace();
}

double snr_to_noise_var(const LaplacianPair& lp, const StatePrior& prior, double snr_db) {
    const double power = signal_power(lp, prior);
    if (!(power > 0.0)) throw Error(ErrorKind::DegenerateSignal, "signal power is not positive");
    return power / std::pow(10.0, snr_db / 10.0);
}

double noise_var_to_snr(const LaplacianPair& lp, const StatePrior& prior, double noise_var) {
    const double power = signal_power(lp, prior);
    if (!(power > 0.0)) throw Error(ErrorKind::DegenerateSignal, "signal power is not positive");
    if (!(noise_var > 0.0)) throw Error(ErrorKind::DegenerateSignal, "SNR undefined for zero noise");
    return 10.0 * std::log10(power / noise_var);
}

}  // namespace mlbest
