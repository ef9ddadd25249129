#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mlbest/crb.hpp"
#include "mlbest/error.hpp"
#include "mlbest/estimators.hpp"
#include "oracles.hpp"

using namespace mlbest;

namespace {

const std::string kCase = std::string(MLBEST_SOURCE_DIR) + "/cases/ieee14.case";

using oracle::random_connected;
using oracle::random_spd;
using oracle::random_symmetric;

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no exception");
    return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("noise variance is the smallest eigenvalue") {
    Matrix d = Matrix::Zero(3, 3);
    d.diagonal() << 3, 2, 1;
    CHECK(estimate_noise_variance(d) == doctest::Approx(1.0));

    const LaplacianPair lp = laplacian_from_graph(load_case(kCase));
    const StatePrior prior = StatePrior::isotropic(14, 1.0);
    const Matrix S = model_covariance(lp, prior, 0.25).full;
    CHECK(std::abs(estimate_noise_variance(S) - 0.25) < 1e-10);
    CHECK(estimate_noise_variance(model_covariance(lp, prior, 0.0).full) >= 0.0);
}

TEST_CASE("PD mixing estimate") {
    SUBCASE("2-bus closed form") {
        Matrix sp(1, 1), st(1, 1);
        sp << 4.5;
        st << 1.0;
        CHECK(pd_mixing_estimate(sp, st, 1.0)(0, 0) == doctest::Approx(2.0));
    }
    SUBCASE("exact recovery from the model covariance") {
        std::mt19937_64 gen(21);
        for (int rep = 0; rep < 10; ++rep) {
            const LaplacianPair lp = random_connected(5, gen);
            const Matrix S = random_spd(4, gen);
            const Matrix C = lp.L_reduced * S * lp.L_reduced + 0.3 * lp.noise_shape;
            CHECK((pd_mixing_estimate(C, S, 0.3) - lp.L_reduced).norm() <= 1e-8);
        }
    }
    SUBCASE("slightly overestimated noise is clipped") {
        // M = 3: the noise shape I - 11^T/3 has eigenvectors (1,-1) and (1,1).
        // Build a covariance whose corrected part has eigenvalues 1 and -1e-12.
        Vector a(2), b(2);
        a << 1.0, -1.0;
        b << 1.0, 1.0;
        a /= std::sqrt(2.0);
        b /= std::sqrt(2.0);
        const Matrix A = a * a.transpose() - 1e-12 * b * b.transpose();
        const Matrix sp = A + reduced_noise_shape(3);
        const Matrix l = pd_mixing_estimate(sp, Matrix::Identity(2, 2), 1.0, 1e-8);
        CHECK(l.allFinite());
        CHECK((l - a * a.transpose()).norm() <= 1e-5);
        Matrix one(1, 1), st(1, 1);
        one << 0.5;
        st << 1.0;
        CHECK(kind_of([&] { pd_mixing_estimate(one, st, 3.0); }) == ErrorKind::NotApproxPSD);
    }
}

TEST_CASE("closest Laplacian: small closed forms") {
    Matrix T(2, 2);
    T << 1, 0.5, 0.5, 1;
    Matrix expected(2, 2);
    expected << 0.25, -0.25, -0.25, 0.25;
    CHECK((closest_laplacian(T).L - expected).norm() <= 1e-8);

    const LaplacianPair lp = laplacian_from_graph(load_case(kCase));
    const ProjectionResult fixed = closest_laplacian(lp.L);
    CHECK((fixed.L - lp.L).norm() <= 1e-8);
}

TEST_CASE("closest Laplacian matches the active-set QP oracle") {
    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::Index m = 3 + rep % 2;
        const Matrix T = random_symmetric(m, gen);
        const Matrix ref = oracle::qp_projection(T);
        const ProjectionResult p = closest_laplacian(T);
        CHECK((p.L - ref).norm() <= 1e-6);
    }
}

TEST_CASE("closest Laplacian output properties") {
    std::mt19937_64 gen(8);
    for (int rep = 0; rep < 30; ++rep) {
        const Eigen::Index m = 3 + rep % 8;
        const Matrix T = random_symmetric(m, gen, 2.0);
        const Matrix L = closest_laplacian(T).L;
        CHECK(L.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((L - L.transpose()).norm() == 0.0);
        double max_off = -INFINITY;
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index i = 0; i < m; ++i)
                if (i != j) max_off = std::max(max_off, L(i, j));
        CHECK(max_off <= 1e-10);
        const double norm2 = std::max(1e-300, Eigen::SelfAdjointEigenSolver<Matrix>(L).eigenvalues().cwiseAbs().maxCoeff());
        CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(L).eigenvalues().minCoeff() >= -1e-8 * norm2);
        // projection: idempotent
        CHECK((closest_laplacian(L).L - L).norm() <= 1e-8);
    }
}

TEST_CASE("closest Laplacian is nonexpansive") {
    std::mt19937_64 gen(13);
    for (int rep = 0; rep < 30; ++rep) {
        const Eigen::Index m = 3 + rep % 5;
        const Matrix a = random_symmetric(m, gen);
        const Matrix b = random_symmetric(m, gen);
        CHECK((closest_laplacian(a).L - closest_laplacian(b).L).norm() <= (a - b).norm() + 1e-8);
    }
}

TEST_CASE("closest Laplacian reports non-convergence") {
    std::mt19937_64 gen(2);
    SolverSettings s;
    s.dykstra_max_iters = 1;
    CHECK(kind_of([&] { closest_laplacian(random_symmetric(6, gen), s); }) == ErrorKind::NoConvergence);
}

TEST_CASE("two-phase recovery from exact statistics") {
    std::mt19937_64 gen(31);
    for (int rep = 0; rep < 5; ++rep) {
        const LaplacianPair lp = random_connected(6, gen);
        const StatePrior prior = StatePrior::isotropic(6, 1.3);
        const CovariancePair cov = model_covariance(lp, prior, 0.2);
        const RecoveryResult r = two_phase_recovery(cov.reduced, prior.sigma_theta_reduced, 0.2);
        CHECK((r.L_reduced - lp.L_reduced).norm() <= 1e-6);
        CHECK(r.converged);
    }
    Matrix sp(1, 1), st(1, 1);
    sp << 4.5;
    st << 1.0;
    CHECK(two_phase_recovery(sp, st, 1.0).L_reduced(0, 0) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("natural-gradient direction") {
    std::mt19937_64 gen(17);
    const LaplacianPair lp = random_connected(6, gen);
    const StatePrior prior = StatePrior::isotropic(6, 2.0);
    const Matrix& St = prior.sigma_theta_reduced;
    const Matrix A = lp.L_reduced * St * lp.L_reduced;
    const Matrix W = lp.L_reduced.inverse();
    const Multipliers zero = Multipliers::zeros(5);

    SUBCASE("stationary at the truth") {
        CHECK(natural_gradient_direction(W, zero, A, St).norm() <= 1e-10 * W.norm());
        // the first-term-as-printed variant is not
        CHECK(natural_gradient_direction_as_printed(W, zero, A, St).norm() > 1e-3);
    }
    SUBCASE("symmetric D drops out") {
        Multipliers m = zero;
        m.D = random_symmetric(5, gen);
        CHECK((natural_gradient_direction(W, m, A, St) - natural_gradient_direction(W, zero, A, St)).norm() <= 1e-12);
        CHECK((natural_gradient_direction_as_printed(W, m, A, St) -
               natural_gradient_direction_as_printed(W, zero, A, St))
                  .norm() <= 1e-12);
    }
    SUBCASE("matches an independent evaluation") {
        Multipliers m;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        m.mu = Vector::NullaryExpr(5, [&] { return u(gen); });
        m.Lambda = random_symmetric(5, gen).cwiseAbs();
        m.Lambda.diagonal().setZero();
        m.D = random_symmetric(5, gen) + 0.3 * Matrix::Random(5, 5);
        const Matrix Wr = W + 0.01 * random_symmetric(5, gen) + 0.001 * Matrix::Random(5, 5);
        const Matrix Si = numerics::pinv(St);
        Matrix expected(5, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                double v = 0.0;
                const Matrix left = Wr.transpose() * Si;
                const Matrix right = Wr * A * Wr.transpose();
                for (int k = 0; k < 5; ++k) v += left(i, k) * right(k, j);
                v -= Wr(j, i);
                v += 0.5 * (m.mu(j) + m.mu(i)) - m.Lambda(i, j);
                const Matrix dd = Wr.transpose() * (m.D.transpose() - m.D) * Wr.transpose();
                expected(i, j) = v + dd(i, j);
            }
        CHECK((natural_gradient_direction(Wr, m, A, St) - expected).norm() <= 1e-12 * expected.norm());
    }
    SUBCASE("natural gradient of the augmented objective") {
        // nu(W, updated multipliers) = W^T grad Q(W; old multipliers) W^T on symmetric W
        Multipliers before;
        std::uniform_real_distribution<double> u(0.0, 0.5);
        before.mu = Vector::NullaryExpr(5, [&] { return u(gen); });
        before.Lambda = random_symmetric(5, gen).cwiseAbs() * 0.1;
        before.Lambda.diagonal().setZero();
        before.D = Matrix::Random(5, 5);
        const double gamma = 0.05;
        Matrix Ws = W + 0.05 * random_symmetric(5, gen) * W.norm() / 5.0;
        Ws = numerics::symmetrize(Ws);
        Multipliers after = update_multipliers(Ws, before, gamma);
        Multipliers ref = before;
        ref.D = after.D;
        const double h = 1e-6;
        Matrix grad(5, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                Matrix up = Ws, dn = Ws;
                up(i, j) += h;
                dn(i, j) -= h;
                grad(i, j) = (augmented_objective(up, ref, A, St, gamma) - augmented_objective(dn, ref, A, St, gamma)) /
                             (2 * h);
            }
        const Matrix fd = Ws.transpose() * grad * Ws.transpose();
        const Matrix nu = natural_gradient_direction(Ws, after, A, St);
        CHECK((nu - fd).norm() <= 1e-5 * std::max(1.0, nu.norm()));
    }
    SUBCASE("singular W") {
        Matrix S = Matrix::Identity(5, 5);
        S(4, 4) = 1e-14;
        CHECK(kind_of([&] { natural_gradient_direction(S, zero, A, St); }) == ErrorKind::SingularW);
    }
}

TEST_CASE("augmented Lagrangian recovery") {
    SUBCASE("stationary start") {
        std::mt19937_64 gen(41);
        for (int rep = 0; rep < 5; ++rep) {
            const LaplacianPair lp = random_connected(7, gen);
            const StatePrior prior = StatePrior::isotropic(7, 1.5);
            const CovariancePair cov = model_covariance(lp, prior, 0.3);
            const RecoveryResult r = augmented_lagrangian_recovery(cov.reduced, prior.sigma_theta_reduced, 0.3, {},
                                                                   Matrix(lp.L_reduced.inverse()));
            CHECK(r.converged);
            CHECK(r.iterations <= 5);
            CHECK((r.L_reduced - lp.L_reduced).norm() <= 1e-6);
            CHECK(r.symmetry_residual <= 10 * SolverSettings{}.epsilon);
        }
    }
    SUBCASE("2-bus") {
        Matrix sp(1, 1), st(1, 1);
        sp << 4.5;
        st << 1.0;
        const RecoveryResult r = augmented_lagrangian_recovery(sp, st, 1.0);
        CHECK(std::abs(r.L_reduced(0, 0) - 2.0) <= 1e-6);
        CHECK(r.converged);
    }
    SUBCASE("IEEE-14 at 15 dB, N = 200") {
        const LaplacianPair lp = laplacian_from_graph(load_case(kCase));
        const StatePrior prior = StatePrior::isotropic(14, 1.0);
        const double s2 = snr_to_noise_var(lp, prior, 15.0);
        const Simulation sim = simulate(lp, prior, s2, 200, 7);
        const CovariancePair cov = sample_covariance(center(sim.measurements));
        const double s2_hat = estimate_noise_variance(cov.full);
        const Matrix pd = pd_mixing_estimate(cov.reduced, prior.sigma_theta_reduced, s2_hat);
        const RecoveryResult r = augmented_lagrangian_recovery(cov.reduced, prior.sigma_theta_reduced, s2_hat);
        CHECK(r.iterations <= 1000);
        CHECK(r.L_reduced.allFinite());
        // the refinement does not move away from the truth compared to its start
        CHECK((r.L_reduced - lp.L_reduced).norm() <= (pd - lp.L_reduced).norm());
        // step size has decayed by several orders of magnitude from the first step
        CHECK(r.final_residual < 1e-2);
        MESSAGE("iterations " << r.iterations << ", last step " << r.final_residual << ", converged " << r.converged);
    }
}

TEST_CASE("sparsify") {
    const LaplacianPair lp = laplacian_from_graph(load_case(kCase));
    SUBCASE("nothing below tau") {
        const SparsifyResult s = sparsify(lp.L, 1e-6);
        CHECK(s.L == lp.L);
        CHECK(s.tau == doctest::Approx(1e-6 * lp.L.diagonal().minCoeff()));
    }
    SUBCASE("spurious entry removed") {
        const double tau = 0.1 * lp.L.diagonal().minCoeff();
        Matrix noisy = lp.L;
        noisy(2, 10) = noisy(10, 2) = -tau / 2;
        const SparsifyResult s = sparsify(noisy, 0.1);
        CHECK(s.L(2, 10) == 0.0);
        CHECK(s.tau == doctest::Approx(tau));
        CHECK(fscore(s.L, lp.L) >= fscore(noisy, lp.L));
        CHECK(s.L.diagonal() == noisy.diagonal());
    }
    SUBCASE("never creates nonzeros and keeps connectivity") {
        std::mt19937_64 gen(4);
        for (int rep = 0; rep < 10; ++rep) {
            const Matrix noisy = lp.L + random_symmetric(14, gen, 0.5);
            Matrix pos = noisy;
            pos.diagonal() = pos.diagonal().cwiseAbs() + Vector::Ones(14);
            const SparsifyResult s = sparsify(pos, 4.0 / 14.0);
            CHECK(s.L.diagonal() == pos.diagonal());
            for (Eigen::Index j = 0; j < 14; ++j)
                for (Eigen::Index i = 0; i < 14; ++i) {
                    if (pos(i, j) == 0.0) CHECK(s.L(i, j) == 0.0);
                    if (s.L(i, j) != 0.0) CHECK(s.L(i, j) == pos(i, j));
                }
            CHECK(s.connected);
        }
    }
    SUBCASE("halving restores connectivity") {
        // path with a weak middle branch: tau = 0.5 * 1.0 would cut it
        const Matrix L =
            laplacian_from_graph(WeightedGraph(4, {{1, 2, 1.0}, {2, 3, 0.3}, {3, 4, 1.0}})).L;
        const SparsifyResult s = sparsify(L, 0.5);
        CHECK(s.halvings == 1);
        CHECK(s.tau == doctest::Approx(0.25));
        CHECK(s.L == L);
        CHECK(s.connected);
    }
    Matrix bad = lp.L;
    bad(3, 3) = 0.0;
    CHECK(kind_of([&] { sparsify(bad, 0.2); }) == ErrorKind::NonPositiveDiagonal);
}

TEST_CASE("MMSE state estimation") {
    SUBCASE("2-bus noiseless") {
        Matrix L(2, 2);
        L << 2, -2, -2, 2;
        Matrix P(2, 1);
        P << 0.4, -0.4;
        const Matrix th = mmse_states(P, L, Matrix::Identity(2, 2), 0.0);
        CHECK(th(0, 0) == doctest::Approx(0.1));
        CHECK(th(1, 0) == doctest::Approx(-0.1));
        // pseudo-inverse oracle L (L^2)^+ p
        CHECK((th - L * numerics::pinv(L * L) * P).norm() < 1e-12);
    }
    const LaplacianPair lp = laplacian_from_graph(
        WeightedGraph(5, {{1, 2, 1.2}, {2, 3, 0.7}, {3, 4, 1.4}, {4, 5, 0.9}, {1, 5, 0.6}, {2, 4, 1.1}}));
    const Matrix St = Matrix::Identity(5, 5);
    SUBCASE("infinite noise returns the prior mean") {
        const Matrix P = Matrix::Random(5, 10);
        CHECK(mmse_states(P, lp.L, St, 1e12).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("linear in P") {
        const Matrix P1 = Matrix::Random(5, 7);
        const Matrix P2 = Matrix::Random(5, 7);
        const Matrix lhs = mmse_states(2.5 * P1 - 0.7 * P2, lp.L, St, 0.3);
        const Matrix rhs = 2.5 * mmse_states(P1, lp.L, St, 0.3) - 0.7 * mmse_states(P2, lp.L, St, 0.3);
        CHECK((lhs - rhs).norm() <= 1e-10 * std::max(1.0, lhs.norm()));
    }
    SUBCASE("no perturbed linear estimator does better") {
        const StatePrior prior = StatePrior::from_covariance(St);
        const Simulation sim = simulate(lp, prior, 0.1, 200000, 77);
        const Matrix& P = sim.measurements.P;
        const double best = (mmse_states(P, lp.L, St, 0.1) - sim.states).squaredNorm();
        std::mt19937_64 gen(1);
        std::uniform_real_distribution<double> eps(0.02, 0.2);
        for (int k = 0; k < 10; ++k) {
            const double e = (k % 2 ? 1.0 : -1.0) * eps(gen);
            const Matrix C = lp.L.transpose() * St * lp.L + (0.1 + e) * Matrix::Identity(5, 5);
            const Matrix G = St * lp.L * C.inverse();
            CHECK(best <= (G * P - sim.states).squaredNorm());
        }
    }
    CHECK(kind_of([&] { mmse_states(Matrix::Zero(4, 2), lp.L, St, 0.1); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("ML-BEST pipeline") {
    SUBCASE("exact covariance bypass") {
        const LaplacianPair lp = laplacian_from_graph(
            WeightedGraph(5, {{1, 2, 1.0}, {2, 3, 1.0}, {3, 4, 1.0}, {4, 5, 1.0}, {1, 5, 1.0}, {2, 4, 1.0}}));
        const StatePrior prior = StatePrior::isotropic(5, 1.0);
        const Simulation sim = simulate(lp, prior, 0.0, 20, 5);
        for (Method method : {Method::two_phase, Method::augmented_lagrangian}) {
            const EstimationResult r = ml_best_from_covariance(model_covariance(lp, prior, 0.0).full, prior, method,
                                                               {}, 0.1, sim.measurements.P);
            CHECK(std::abs(r.sigma2_hat) <= 1e-8);
            CHECK((r.L_hat - lp.L).norm() <= 1e-6);
            // states are recovered up to the common (reference) offset
            Matrix centered = sim.states;
            centered.rowwise() -= sim.states.colwise().mean();
            CHECK((r.states_hat - centered).norm() <= 1e-6 * centered.norm());
        }
    }
    SUBCASE("IEEE-14, 15 dB, N = 200, two-phase") {
        const LaplacianPair lp = laplacian_from_graph(load_case(kCase));
        const StatePrior prior = StatePrior::isotropic(14, 1.0);
        const Simulation sim = simulate(lp, prior, snr_to_noise_var(lp, prior, 15.0), 200, 3);
        const EstimationResult r = ml_best(sim.measurements, prior, Method::two_phase, {}, 4.0 / 14.0);
        const LaplacianReport rep = validate_laplacian(r.L_hat_raw, 1e-6);
        CHECK(rep.core_properties());
        CHECK((r.L_hat_raw - expand_laplacian(r.L_reduced_raw)).norm() <= 1e-9 * r.L_hat_raw.norm());
        CHECK(r.L_reduced_hat == r.L_hat.bottomRightCorner(13, 13));
        CHECK(r.states_hat.rows() == 14);
        CHECK(r.states_hat.cols() == 200);
        CHECK(fscore(r.L_hat, lp.L) > 0.6);
        CHECK(r.diagnostics.threshold_used > 0.0);
    }
    SUBCASE("2-bus consistency") {
        const LaplacianPair lp = laplacian_from_graph(WeightedGraph(2, {{1, 2, 2.0}}));
        const StatePrior prior = StatePrior::isotropic(2, 1.0);
        const Simulation sim = simulate(lp, prior, 0.01, 10000, 12);
        for (Method method : {Method::two_phase, Method::augmented_lagrangian}) {
            const EstimationResult r = ml_best(sim.measurements, prior, method, {}, 0.5);
            CHECK(std::abs(r.L_hat(0, 0) - 2.0) <= 0.05 * 2.0);
        }
    }
    SUBCASE("too few samples") {
        MeasurementSet ms;
        ms.P = Matrix::Random(6, 4);
        CHECK(kind_of([&] { ml_best(ms, StatePrior::isotropic(6, 1.0), Method::two_phase, {}, 0.5); }) ==
              ErrorKind::InsufficientSamples);
    }
    SUBCASE("settings are validated") {
        SolverSettings s;
        s.eta = 1.5;
        CHECK(kind_of([&] { s.validate(); }) == ErrorKind::ConfigError);
        CHECK(parse_method("augmented") == Method::augmented_lagrangian);
        CHECK(kind_of([] { parse_method("cvx"); }) == ErrorKind::ConfigError);
    }
}

TEST_CASE("IEEE-14 noise-variance consistency") {
    const LaplacianPair lp = laplacian_from_graph(load_case(kCase));
    const StatePrior prior = StatePrior::isotropic(14, 1.0);
    std::vector<double> est;
    for (int s = 0; s < 20; ++s) {
        const Simulation sim = simulate(lp, prior, 1.0, 10000, 500 + s);
        est.push_back(estimate_noise_variance(sample_covariance(center(sim.measurements)).full));
    }
    std::sort(est.begin(), est.end());
    const double med = 0.5 * (est[9] + est[10]);
    CHECK(std::abs(med - 1.0) <= 0.05);
}
