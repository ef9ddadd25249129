#include "mlbest/estimators.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "mlbest/error.hpp"

namespace mlbest {

namespace {

constexpr double kMaxConditionW = 1e12;
constexpr int kMaxSigmaShrinks = 50;
constexpr double kSigmaShrink = 0.99;
constexpr int kMaxTauHalvings = 10;

// J S J with J = I - 11^T/M, in O(M^2).
Matrix double_center(const Matrix& s) {
    const Vector r = s.rowwise().mean();
    const Eigen::RowVectorXd c = s.colwise().mean();
    const double g = r.mean();
    Matrix out = s;
    out.colwise() -= r;
    out.rowwise() -= c;
    out.array() += g;
    return out;
}

Matrix clip_offdiag(const Matrix& s) {
    Matrix out = s.cwiseMin(0.0);
    out.diagonal() = s.diagonal();
    return out;
}

Matrix offdiag(const Matrix& s) {
    Matrix out = s;
    out.diagonal().setZero();
    return out;
}

void require_dims(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced) {
    numerics::require_symmetric(sigma_p_reduced, "reduced covariance");
    numerics::require_symmetric(sigma_theta_reduced, "reduced state covariance");
    if (sigma_p_reduced.rows() != sigma_theta_reduced.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "covariance and prior dimensions differ");
    }
    if (sigma_p_reduced.rows() < 1) throw Error(ErrorKind::ShapeMismatch, "empty reduced covariance");
}

Matrix spd_inverse(const Matrix& s, const char* what) {
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::NotApproxPSD, std::string(what) + " is not positive definite");
    return numerics::symmetrize(llt.solve(Matrix::Identity(s.rows(), s.cols())));
}

Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& W) {
    if (!W.allFinite()) throw Error(ErrorKind::NonFinite, "W has non-finite entries");
    Eigen::PartialPivLU<Matrix> lu(W);
    const double rcond = lu.rcond();
    if (!(rcond * kMaxConditionW > 1.0)) {
        std::ostringstream os;
        os << "condition number estimate " << (rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity())
           << " exceeds " << kMaxConditionW;
        throw Error(ErrorKind::SingularW, os.str());
    }
    return lu;
}

Matrix direction_impl(const Matrix& W, const Multipliers& m, const Matrix& A, const Matrix& sigma_inv) {
    const Eigen::Index n = W.rows();
    const Matrix Wt = W.transpose();
    const Vector ones = Vector::Ones(n);
    Matrix nu = Wt * sigma_inv * W * A * Wt - Wt;
    nu += 0.5 * (ones * m.mu.transpose() + m.mu * ones.transpose());
    nu -= m.Lambda;
    nu += Wt * (m.D.transpose() - m.D) * Wt;
    return nu;
}

double objective_impl(const Matrix& W, const Multipliers& m0, const Matrix& A, const Matrix& sigma_inv, double gamma) {
    if (!W.allFinite()) return std::numeric_limits<double>::infinity();
    Eigen::PartialPivLU<Matrix> lu(W);
    const Matrix& lu_mat = lu.matrixLU();
    double logdet = 0.0;
    double sign = lu.permutationP().determinant();
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        const double u = lu_mat(i, i);
        if (u == 0.0) return std::numeric_limits<double>::infinity();
        if (u < 0.0) sign = -sign;
        logdet += std::log(std::abs(u));
    }
    if (sign <= 0.0) return std::numeric_limits<double>::infinity();

    const Matrix Ls = numerics::symmetrize(lu.inverse());
    const Vector rows = Ls.rowwise().sum();
    double q = 0.5 * (A * W.transpose() * sigma_inv * W).trace() - logdet;

    double mu_term = 0.0;
    for (Eigen::Index j = 0; j < rows.size(); ++j) {
        const double v = std::max(m0.mu(j) - gamma * rows(j), 0.0);
        mu_term += v * v - m0.mu(j) * m0.mu(j);
    }
    double lambda_term = 0.0;
    for (Eigen::Index k = 0; k < Ls.cols(); ++k) {
        for (Eigen::Index i = 0; i < Ls.rows(); ++i) {
            if (i == k) continue;
            const double v = std::max(gamma * Ls(i, k) + m0.Lambda(i, k), 0.0);
            lambda_term += v * v - m0.Lambda(i, k) * m0.Lambda(i, k);
        }
    }
    q += (mu_term + lambda_term) / (2.0 * gamma);
    q -= (m0.D.array() * (W - W.transpose()).array()).sum();
    return q;
}

std::size_t count_components(const Matrix& L) {
    const Eigen::Index m = L.rows();
    std::vector<int> seen(static_cast<std::size_t>(m), 0);
    std::vector<Eigen::Index> stack;
    std::size_t components = 0;
    for (Eigen::Index s = 0; s < m; ++s) {
        if (seen[s]) continue;
        ++components;
        seen[s] = 1;
        stack.push_back(s);
        while (!stack.empty()) {
            const Eigen::Index v = stack.back();
            stack.pop_back();
            for (Eigen::Index u = 0; u < m; ++u) {
                if (u != v && !seen[u] && (L(v, u) != 0.0 || L(u, v) != 0.0)) {
                    seen[u] = 1;
                    stack.push_back(u);
                }
            }
        }
    }
    return components;
}

EstimationResult estimate_from(const CovariancePair& cov, const StatePrior& prior, Method method,
                               const SolverSettings& settings, double alpha, const Matrix& P) {
    settings.validate();
    const Eigen::Index m = cov.full.rows();
    if (prior.bus_count() != m) throw Error(ErrorKind::ShapeMismatch, "prior and covariance dimensions differ");

    EstimationResult out;
    out.method = method;
    double sigma2 = estimate_noise_variance(cov.full);

    RecoveryResult rec;
    for (int shrink = 0;; ++shrink) {
        try {
            if (method == Method::two_phase) {
                rec = two_phase_recovery(cov.reduced, prior.sigma_theta_reduced, sigma2, settings);
            } else {
                rec = augmented_lagrangian_recovery(cov.reduced, prior.sigma_theta_reduced, sigma2, settings);
            }
            out.diagnostics.sigma2_shrinks = shrink;
            break;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NotApproxPSD || shrink >= kMaxSigmaShrinks) throw;
            sigma2 *= kSigmaShrink;
        }
    }
    out.sigma2_hat = sigma2;
    out.L_reduced_raw = numerics::symmetrize(rec.L_reduced);
    out.L_hat_raw = expand_laplacian(out.L_reduced_raw);

    const SparsifyResult sp = sparsify(out.L_hat_raw, alpha);
    out.L_hat = sp.L;
    out.L_reduced_hat = reduce_laplacian(out.L_hat);

    Diagnostics& d = out.diagnostics;
    d.iterations = rec.iterations;
    d.final_residual = rec.final_residual;
    d.projection_residual = rec.projection_residual;
    d.symmetry_residual = rec.symmetry_residual;
    d.converged = rec.converged;
    d.backtracks = rec.backtracks;
    d.threshold_used = sp.tau;
    if (!sp.connected) d.warnings.emplace_back("thresholded support stays disconnected; threshold disabled");
    if (!rec.converged) d.warnings.emplace_back("topology solver stopped at the iteration limit");

    if (P.size() > 0) out.states_hat = mmse_states(P, out.L_hat, prior.sigma_theta, sigma2);
    return out;
}

}  // namespace

std::string_view to_string(Method m) noexcept {
    return m == Method::two_phase ? "two_phase" : "augmented_lagrangian";
}

Method parse_method(std::string_view name) {
    if (name == "two_phase") return Method::two_phase;
    if (name == "augmented_lagrangian" || name == "augmented") return Method::augmented_lagrangian;
    throw Error(ErrorKind::ConfigError, "unknown method '" + std::string(name) + "'");
}

void SolverSettings::validate() const {
    auto fail = [](const char* what) { throw Error(ErrorKind::ConfigError, what); };
    if (!(eta > 0.0 && eta <= 1.0)) fail("eta must lie in (0, 1]");
    if (!(gamma > 0.0)) fail("gamma must be positive");
    if (max_iters < 1) fail("max_iters must be positive");
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (max_backtracks < 0) fail("max_backtracks must be nonnegative");
    if (dykstra_max_iters < 1) fail("dykstra_max_iters must be positive");
    if (!(dykstra_tol > 0.0)) fail("dykstra_tol must be positive");
    if (!(clip_tol >= 0.0)) fail("clip_tol must be nonnegative");
}

double estimate_noise_variance(const Matrix& sigma_p) {
    numerics::require_symmetric(sigma_p, "sample covariance");
    if (sigma_p.rows() == 0) throw Error(ErrorKind::ShapeMismatch, "empty covariance");
    const Vector ev =
        Eigen::SelfAdjointEigenSolver<Matrix>(numerics::symmetrize(sigma_p), Eigen::EigenvaluesOnly).eigenvalues();
    return std::max(ev.minCoeff(), 0.0);
}

Matrix corrected_covariance(const Matrix& sigma_p_reduced, double sigma2_hat) {
    return numerics::symmetrize(sigma_p_reduced - sigma2_hat * reduced_noise_shape(sigma_p_reduced.rows() + 1));
}

Matrix pd_mixing_estimate(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced, double sigma2_hat,
                          double clip_tol) {
    require_dims(sigma_p_reduced, sigma_theta_reduced);
    const numerics::SymEig eig = numerics::sym_eig(sigma_theta_reduced);
    if (!(eig.eigenvalues.minCoeff() > 0.0)) {
        throw Error(ErrorKind::NotApproxPSD, "reduced state covariance is not positive definite");
    }
    const Vector root = eig.eigenvalues.cwiseSqrt();
    const Matrix& V = eig.eigenvectors;
    const Matrix s_half = V * root.asDiagonal() * V.transpose();
    const Matrix s_inv_half = V * root.cwiseInverse().asDiagonal() * V.transpose();

    const Matrix A = corrected_covariance(sigma_p_reduced, sigma2_hat);
    const Matrix inner = numerics::symmetrize(s_half * A * s_half);
    const Matrix middle = numerics::psd_sqrt(inner, clip_tol);
    return numerics::symmetrize(s_inv_half * middle * s_inv_half);
}

ProjectionResult closest_laplacian(const Matrix& T, const SolverSettings& settings) {
    numerics::require_symmetric(T, "projection input");
    const Eigen::Index m = T.rows();
    ProjectionResult out;
    if (m <= 1) {
        out.L = Matrix::Zero(m, m);
        out.converged = true;
        return out;
    }
    const double scale = std::max(1.0, T.norm());
    const double tol = settings.dykstra_tol * scale;

    Matrix x = numerics::symmetrize(T);
    Matrix p = Matrix::Zero(m, m);
    Matrix q = Matrix::Zero(m, m);
    double change = 0.0;
    double gap = 0.0;
    for (int it = 1; it <= settings.dykstra_max_iters; ++it) {
        const Matrix y = double_center(x + p);
        p += x - y;
        const Matrix x_next = clip_offdiag(y + q);
        q += y - x_next;
        change = (x_next - x).norm();
        gap = (x_next - y).norm();
        x = x_next;
        if (change <= tol && gap <= tol) {
            out.iterations = it;
            out.converged = true;
            break;
        }
    }
    out.residual = gap;
    if (!out.converged) {
        std::ostringstream os;
        os << "Dykstra projection did not converge in " << settings.dykstra_max_iters << " iterations (gap " << gap
           << ", change " << change << ")";
        throw Error(ErrorKind::NoConvergence, os.str());
    }
    // Exact feasibility: symmetric nonpositive off-diagonals, diagonal from row sums.
    Matrix L = offdiag(numerics::symmetrize(x)).cwiseMin(0.0);
    L.diagonal() = -L.rowwise().sum();
    out.L = L;
    return out;
}

RecoveryResult two_phase_recovery(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced,
                                  double sigma2_hat, const SolverSettings& settings) {
    const Matrix l_pd = pd_mixing_estimate(sigma_p_reduced, sigma_theta_reduced, sigma2_hat, settings.clip_tol);
    const Matrix full = numerics::symmetrize(expand_laplacian(l_pd));
    const ProjectionResult proj = closest_laplacian(full, settings);
    RecoveryResult out;
    out.L_reduced = reduce_laplacian(proj.L);
    out.iterations = proj.iterations;
    out.projection_residual = proj.residual;
    out.final_residual = proj.residual;
    out.converged = proj.converged;
    return out;
}

Multipliers Multipliers::zeros(Eigen::Index n) {
    return {Vector::Zero(n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
}

Multipliers update_multipliers(const Matrix& W, const Multipliers& current, double gamma) {
    const Eigen::PartialPivLU<Matrix> lu = checked_lu(W);
    const Matrix Ls = numerics::symmetrize(lu.inverse());
    Multipliers next;
    next.mu = (current.mu - gamma * Ls.rowwise().sum()).cwiseMax(0.0);
    next.Lambda = (current.Lambda + gamma * offdiag(Ls)).cwiseMax(0.0);
    next.Lambda.diagonal().setZero();
    next.D = current.D - gamma * (W - W.transpose());
    return next;
}

Matrix natural_gradient_direction(const Matrix& W, const Multipliers& m, const Matrix& A,
                                  const Matrix& sigma_theta_reduced) {
    checked_lu(W);
    return direction_impl(W, m, A, spd_inverse(sigma_theta_reduced, "reduced state covariance"));
}

Matrix natural_gradient_direction_as_printed(const Matrix& W, const Multipliers& m, const Matrix& A,
                                             const Matrix& sigma_theta_reduced) {
    const Eigen::PartialPivLU<Matrix> lu = checked_lu(W);
    const Matrix sigma_inv = spd_inverse(sigma_theta_reduced, "reduced state covariance");
    const Eigen::Index n = W.rows();
    const Matrix Wt = W.transpose();
    Matrix nu = A * lu.inverse() * sigma_inv - Wt;
    nu += Vector::Ones(n) * m.mu.transpose();
    nu -= m.Lambda;
    nu -= Wt * (m.D.transpose() - m.D) * Wt;
    return nu;
}

double augmented_objective(const Matrix& W, const Multipliers& before_update, const Matrix& A,
                           const Matrix& sigma_theta_reduced, double gamma) {
    return objective_impl(W, before_update, A, spd_inverse(sigma_theta_reduced, "reduced state covariance"), gamma);
}

RecoveryResult augmented_lagrangian_recovery(const Matrix& sigma_p_reduced, const Matrix& sigma_theta_reduced,
                                             double sigma2_hat, const SolverSettings& settings,
                                             const std::optional<Matrix>& W_init) {
    settings.validate();
    require_dims(sigma_p_reduced, sigma_theta_reduced);
    const Eigen::Index n = sigma_p_reduced.rows();
    const Matrix sigma_inv = spd_inverse(sigma_theta_reduced, "reduced state covariance");

    Matrix W;
    double s = 1.0;
    if (W_init) {
        if (W_init->rows() != n || W_init->cols() != n) throw Error(ErrorKind::ShapeMismatch, "W_init has wrong shape");
        const Eigen::PartialPivLU<Matrix> lu = checked_lu(*W_init);
        s = Eigen::JacobiSVD<Matrix>(lu.inverse()).singularValues()(0);
        W = s * *W_init;
    } else {
        const Matrix l_pd = pd_mixing_estimate(sigma_p_reduced, sigma_theta_reduced, sigma2_hat, settings.clip_tol);
        s = Eigen::SelfAdjointEigenSolver<Matrix>(l_pd, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
        if (!(s > 0.0)) throw Error(ErrorKind::SingularW, "initial Laplacian estimate is zero");
        W = checked_lu(l_pd / s).inverse();
    }
    // In scaled coordinates L/s the data term is A/s^2 and W is s W.
    const Matrix A = corrected_covariance(sigma_p_reduced, sigma2_hat) / (s * s);

    RecoveryResult out;
    Multipliers mult = Multipliers::zeros(n);
    for (int t = 0; t < settings.max_iters; ++t) {
        Multipliers reference = mult;
        mult = update_multipliers(W, mult, settings.gamma);
        reference.D = mult.D;
        const Matrix nu = direction_impl(W, mult, A, sigma_inv);

        const double q0 = objective_impl(W, reference, A, sigma_inv, settings.gamma);
        double step = settings.eta;
        Matrix W_next = W - step * nu;
        bool accepted = false;
        for (int k = 0; k <= settings.max_backtracks; ++k) {
            if (objective_impl(W_next, reference, A, sigma_inv, settings.gamma) <= q0) {
                accepted = true;
                break;
            }
            if (k == settings.max_backtracks) break;
            step *= 0.5;
            ++out.backtracks;
            W_next = W - step * nu;
        }
        out.iterations = t + 1;
        if (!accepted) break;  // no descent along nu; keep the current iterate
        out.final_residual = (W_next - W).norm();
        W = std::move(W_next);
        if (out.final_residual <= settings.epsilon) {
            out.converged = true;
            break;
        }
    }
    out.symmetry_residual = (W - W.transpose()).norm();
    out.L_reduced = numerics::symmetrize(s * checked_lu(W).inverse());
    return out;
}

SparsifyResult sparsify(const Matrix& L_hat, double alpha) {
    numerics::require_square(L_hat, "Laplacian estimate");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorKind::ConfigError, "alpha must lie in [0, 1)");
    const double dmin = L_hat.diagonal().minCoeff();
    if (!(dmin > 0.0)) throw Error(ErrorKind::NonPositiveDiagonal, "estimate has a non-positive diagonal entry");

    SparsifyResult out;
    const double tau0 = alpha * dmin;
    for (int h = 0; h <= kMaxTauHalvings; ++h) {
        const double tau = std::ldexp(tau0, -h);
        Matrix L = L_hat;
        for (Eigen::Index j = 0; j < L.cols(); ++j) {
            for (Eigen::Index i = 0; i < L.rows(); ++i) {
                if (i != j && std::abs(L(i, j)) <= tau) L(i, j) = 0.0;
            }
        }
        if (count_components(L) == 1) {
            out.L = std::move(L);
            out.tau = tau;
            out.halvings = h;
            return out;
        }
    }
    out.L = L_hat;
    out.tau = 0.0;
    out.halvings = kMaxTauHalvings;
    out.connected = count_components(L_hat) == 1;
    return out;
}

Matrix mmse_states(const Matrix& P, const Matrix& L, const Matrix& sigma_theta, double noise_var) {
    numerics::require_square(L, "Laplacian");
    numerics::require_square(sigma_theta, "state covariance");
    if (P.rows() != L.rows() || sigma_theta.rows() != L.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "MMSE dimensions disagree");
    }
    if (!(noise_var >= 0.0)) throw Error(ErrorKind::NonFinite, "noise variance must be nonnegative");
    const Eigen::Index m = L.rows();
    const Matrix C = numerics::symmetrize(L.transpose() * sigma_theta * L + noise_var * Matrix::Identity(m, m));
    const Matrix gain = sigma_theta * L * numerics::sym_pinv(C);
    return gain * P;
}

EstimationResult ml_best(const MeasurementSet& ms, const StatePrior& prior, Method method,
                         const SolverSettings& settings, double alpha) {
    const Eigen::Index m = ms.bus_count();
    const Eigen::Index n = ms.sample_count();
    if (m < 2) throw Error(ErrorKind::ShapeMismatch, "need at least 2 buses");
    if (n < m - 1) {
        std::ostringstream os;
        os << "N=" << n << " samples is below M-1=" << m - 1;
        throw Error(ErrorKind::InsufficientSamples, os.str());
    }
    const MeasurementSet data = settings.center ? center(ms) : ms;
    EstimationResult out = estimate_from(sample_covariance(data), prior, method, settings, alpha, data.P);
    if (n < 3 * m) out.diagnostics.warnings.emplace_back("N < 3M: covariance estimate is poorly conditioned");
    return out;
}

EstimationResult ml_best_from_covariance(const Matrix& sigma_p, const StatePrior& prior, Method method,
                                         const SolverSettings& settings, double alpha, const Matrix& P) {
    numerics::require_symmetric(sigma_p, "covariance");
    if (sigma_p.rows() < 2) throw Error(ErrorKind::ShapeMismatch, "need at least 2 buses");
    CovariancePair cov;
    cov.full = numerics::symmetrize(sigma_p);
    const Matrix up = reduction_pinv(sigma_p.rows());
    cov.reduced = numerics::symmetrize(up * cov.full * up.transpose());
    return estimate_from(cov, prior, method, settings, alpha, P);
}

}  // namespace mlbest
