#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mlbest/dcmodel.hpp"
#include "mlbest/error.hpp"

using namespace mlbest;

namespace {

LaplacianPair two_bus(double b) { return laplacian_from_graph(WeightedGraph(2, {{1, 2, b}})); }

LaplacianPair five_bus() {
    return laplacian_from_graph(
        WeightedGraph(5, {{1, 2, 1.2}, {2, 3, 0.7}, {3, 4, 1.4}, {4, 5, 0.9}, {1, 5, 0.6}, {2, 4, 1.1}}));
}

StatePrior random_prior(Eigen::Index m, unsigned seed) {
    std::srand(seed);
    const Matrix A = Matrix::Random(m, m);
    return StatePrior::from_covariance(A * A.transpose() + 0.5 * Matrix::Identity(m, m));
}

}  // namespace

TEST_CASE("isotropic prior reduces to c^2 (I + 11^T)") {
    const StatePrior p = StatePrior::isotropic(4, 2.0);
    const Matrix expected = 4.0 * (Matrix::Identity(3, 3) + Matrix::Ones(3, 3));
    CHECK((p.sigma_theta_reduced - expected).norm() < 1e-14);
    CHECK_THROWS_AS(StatePrior::from_covariance(-Matrix::Identity(3, 3)), Error);
}

TEST_CASE("noiseless simulation is exactly L Theta") {
    const LaplacianPair lp = five_bus();
    const Simulation sim = simulate(lp, StatePrior::isotropic(5, 1.0), 0.0, 50, 3);
    CHECK((sim.measurements.P - lp.L * sim.states).norm() == 0.0);
    CHECK(sim.measurements.seed == 3);
    CHECK_FALSE(sim.measurements.centered);
}

TEST_CASE("simulation is deterministic in the seed") {
    const LaplacianPair lp = five_bus();
    const StatePrior prior = StatePrior::isotropic(5, 1.0);
    const Simulation a = simulate(lp, prior, 0.3, 100, 99);
    const Simulation b = simulate(lp, prior, 0.3, 100, 99);
    const Simulation c = simulate(lp, prior, 0.3, 100, 100);
    CHECK(a.measurements.P == b.measurements.P);
    CHECK_FALSE(a.measurements.P == c.measurements.P);
    // prefix property: sample n does not depend on N
    const Simulation shorter = simulate(lp, prior, 0.3, 40, 99);
    CHECK(shorter.measurements.P == a.measurements.P.leftCols(40));
}

TEST_CASE("pure noise has identity covariance") {
    const LaplacianPair lp = laplacian_from_graph(WeightedGraph(3, {{1, 2, 1.0}, {2, 3, 1.0}}));
    LaplacianPair zero = lp;
    zero.L.setZero();
    const Simulation sim = simulate(zero, StatePrior::isotropic(3, 1.0), 1.0, 100000, 17);
    const Matrix S = sample_covariance(sim.measurements).full;
    CHECK((S - Matrix::Identity(3, 3)).norm() / std::sqrt(3.0) <= 0.05);
}

TEST_CASE("centering") {
    MeasurementSet ms;
    ms.P = Matrix::Random(4, 30);
    const MeasurementSet c = center(ms);
    CHECK(c.centered);
    CHECK(c.P.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((center(c).P - c.P).norm() <= 1e-12);

    MeasurementSet constant;
    constant.P = Vector::LinSpaced(3, 1.0, 3.0).replicate(1, 8);
    CHECK(center(constant).P.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample covariance small cases") {
    MeasurementSet ms;
    ms.P = Matrix(2, 1);
    ms.P << 1, -1;
    const CovariancePair c = sample_covariance(ms);
    Matrix expected(2, 2);
    expected << 1, -1, -1, 1;
    CHECK(c.full == expected);
    // reduced = 0.25 (S11 - 2 S12 + S22)
    CHECK(c.reduced(0, 0) == doctest::Approx(0.25 * (1 + 2 + 1)));

    ms.P = Matrix::Random(2, 20);
    const CovariancePair d = sample_covariance(ms);
    CHECK(d.reduced(0, 0) == doctest::Approx(0.25 * (d.full(0, 0) - 2 * d.full(0, 1) + d.full(1, 1))));
}

TEST_CASE("model covariance closed forms") {
    const LaplacianPair lp = two_bus(2.0);
    // Sigma_theta = 0.5 I gives Sigma_theta~ = 0.5 (1 + 1) = 1
    const StatePrior prior = StatePrior::isotropic(2, std::sqrt(0.5));
    REQUIRE(prior.sigma_theta_reduced(0, 0) == doctest::Approx(1.0));
    const CovariancePair c = model_covariance(lp, prior, 1.0);
    CHECK(c.reduced(0, 0) == doctest::Approx(4.5));
    CHECK(lp.noise_shape(0, 0) == doctest::Approx(0.5));

    LaplacianPair zero = lp;
    zero.L.setZero();
    zero.L_reduced.setZero();
    CHECK(model_covariance(zero, prior, 0.0).full.norm() == 0.0);
}

TEST_CASE("full and reduced model covariances agree under U^+") {
    const LaplacianPair lp = five_bus();
    for (double c : {0.5, 1.0, 3.0}) {
        const StatePrior prior = StatePrior::isotropic(5, c);
        const CovariancePair cov = model_covariance(lp, prior, 0.7);
        const Matrix mapped = lp.U_pinv * cov.full * lp.U_pinv.transpose();
        CHECK((mapped - cov.reduced).norm() <= 1e-10 * cov.reduced.norm());
        CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(cov.reduced).eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("model covariance matches simulation") {
    const LaplacianPair lp = five_bus();
    const StatePrior prior = random_prior(5, 4);
    const Simulation sim = simulate(lp, prior, 0.4, 1000000, 8);
    const Matrix S = sample_covariance(sim.measurements).full;
    const Matrix C = model_covariance(lp, prior, 0.4).full;
    CHECK((S - C).norm() / C.norm() <= 0.02);
}

TEST_CASE("sample covariance consistency improves with N") {
    const LaplacianPair lp = laplacian_from_graph(WeightedGraph(3, {{1, 2, 1.0}, {2, 3, 2.0}}));
    const StatePrior prior = StatePrior::isotropic(3, 1.0);
    const Matrix C = model_covariance(lp, prior, 0.5).full;
    std::vector<double> med;
    for (int n : {100, 1000, 10000, 100000}) {
        std::vector<double> err;
        for (int s = 0; s < 20; ++s) {
            const Simulation sim = simulate(lp, prior, 0.5, n, 1000 + s);
            err.push_back((sample_covariance(sim.measurements).full - C).norm() / C.norm());
        }
        std::nth_element(err.begin(), err.begin() + 10, err.end());
        med.push_back(err[10]);
    }
    for (std::size_t i = 1; i < med.size(); ++i) CHECK(med[i] < med[i - 1]);
    CHECK(med.back() <= 0.03);
}

TEST_CASE("snr conversions") {
    const LaplacianPair lp = two_bus(2.0);
    const StatePrior prior = StatePrior::isotropic(2, std::sqrt(0.5));
    CHECK(signal_power(lp, prior) == doctest::Approx(4.0));
    CHECK(snr_to_noise_var(lp, prior, 15.0) == doctest::Approx(4.0 / std::pow(10.0, 1.5)).epsilon(1e-12));
    CHECK(snr_to_noise_var(lp, prior, 15.0) == doctest::Approx(0.12649).epsilon(1e-4));
    CHECK(snr_to_noise_var(lp, prior, 0.0) == doctest::Approx(4.0));
    for (double snr : {-5.0, 0.0, 12.5, 30.0}) {
        CHECK(std::abs(noise_var_to_snr(lp, prior, snr_to_noise_var(lp, prior, snr)) - snr) < 1e-10);
    }
    // trace 10 at 10 dB gives 1
    const LaplacianPair big = two_bus(std::sqrt(10.0));
    CHECK(snr_to_noise_var(big, prior, 10.0) == doctest::Approx(1.0));

    LaplacianPair zero = lp;
    zero.L_reduced.setZero();
    try {
        snr_to_noise_var(zero, prior, 10.0);
        FAIL("expected DegenerateSignal");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateSignal);
    }
}

TEST_CASE("dimension mismatch") {
    CHECK_THROWS_AS(simulate(five_bus(), StatePrior::isotropic(3, 1.0), 1.0, 10, 1), Error);
    CHECK_THROWS_AS(model_covariance(five_bus(), StatePrior::isotropic(3, 1.0), 1.0), Error);
}
