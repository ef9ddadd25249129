#include "mlbest/crb.hpp"

#include <cmath>
#include <sstream>

#include "mlbest/error.hpp"
#include "mlbest/graph.hpp"

namespace mlbest {

namespace {

constexpr Eigen::Index kDenseKroneckerLimit = 20;

void require_inputs(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double samples) {
    numerics::require_symmetric(L_reduced, "reduced Laplacian");
    numerics::require_symmetric(sigma_theta_reduced, "reduced state covariance");
    if (L_reduced.rows() != sigma_theta_reduced.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "Laplacian and prior dimensions differ");
    }
    if (L_reduced.rows() < 1) throw Error(ErrorKind::ShapeMismatch, "empty reduced Laplacian");
    if (!(samples > 0.0)) throw Error(ErrorKind::InsufficientSamples, "sample count must be positive");
}

Matrix inverse_covariance(const Matrix& C) {
    Eigen::LLT<Matrix> llt(C);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularCovariance, "model covariance is not invertible");
    const Matrix inv = llt.solve(Matrix::Identity(C.rows(), C.cols()));
    if (!inv.allFinite()) throw Error(ErrorKind::SingularCovariance, "model covariance is not invertible");
    return numerics::symmetrize(inv);
}

Eigen::Map<const Matrix> as_matrix(const Matrix& psi, Eigen::Index col, Eigen::Index n) {
    return Eigen::Map<const Matrix>(psi.col(col).data(), n, n);
}

Matrix trace_fim(const std::vector<Matrix>& derivs, const Matrix& c_inv, double samples) {
    const auto d = static_cast<Eigen::Index>(derivs.size());
    std::vector<Matrix> left(derivs.size());
    for (Eigen::Index a = 0; a < d; ++a) left[a] = c_inv * derivs[a];
    Matrix J(d, d);
    for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a; b < d; ++b) {
            // Tr{X Y} = sum_ij X_ij Y_ji
            const double t = (left[a].array() * left[b].transpose().array()).sum();
            J(a, b) = J(b, a) = 0.5 * samples * t;
        }
    }
    return J;
}

}  // namespace

Eigen::Index vech_size(Eigen::Index n) { return n * (n + 1) / 2; }

std::vector<std::pair<Eigen::Index, Eigen::Index>> vech_order(Eigen::Index n) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> order;
    order.reserve(static_cast<std::size_t>(vech_size(n)));
    for (Eigen::Index col = 0; col < n; ++col) {
        for (Eigen::Index row = col; row < n; ++row) order.emplace_back(row, col);
    }
    return order;
}

Vector vech(const Matrix& S) {
    numerics::require_square(S, "vech input");
    Vector v(vech_size(S.rows()));
    Eigen::Index i = 0;
    for (const auto& [row, col] : vech_order(S.rows())) v(i++) = S(row, col);
    return v;
}

Matrix unvech(const Vector& v, Eigen::Index n) {
    if (v.size() != vech_size(n)) throw Error(ErrorKind::ShapeMismatch, "vech length does not match dimension");
    Matrix S(n, n);
    Eigen::Index i = 0;
    for (const auto& [row, col] : vech_order(n)) {
        S(row, col) = v(i);
        S(col, row) = v(i);
        ++i;
    }
    return S;
}

Matrix reduced_model_covariance(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var) {
    return numerics::symmetrize(L_reduced * sigma_theta_reduced * L_reduced +
                                noise_var * reduced_noise_shape(L_reduced.rows() + 1));
}

Matrix fim_psi(const Matrix& L_reduced, const Matrix& sigma_theta_reduced) {
    const Eigen::Index n = L_reduced.rows();
    const Eigen::Index d = vech_size(n) + 1;
    const Matrix SL = sigma_theta_reduced * L_reduced;
    Matrix psi(n * n, d);
    Eigen::Index c = 0;
    for (const auto& [k, l] : vech_order(n)) {
        Matrix E = Matrix::Zero(n, n);
        E(k, l) += 1.0;
        E(l, k) += 1.0;
        const double factor = k == l ? 0.5 : 1.0;
        const Matrix m = factor * (E * SL + SL.transpose() * E);
        psi.col(c++) = Eigen::Map<const Vector>(m.data(), n * n);
    }
    const Matrix shape = reduced_noise_shape(n + 1);
    psi.col(c) = Eigen::Map<const Vector>(shape.data(), n * n);
    return psi;
}

Matrix fim(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var, double samples) {
    require_inputs(L_reduced, sigma_theta_reduced, samples);
    const Eigen::Index n = L_reduced.rows();
    const Matrix c_inv = inverse_covariance(reduced_model_covariance(L_reduced, sigma_theta_reduced, noise_var));
    const Matrix psi = fim_psi(L_reduced, sigma_theta_reduced);

    Matrix QPsi(psi.rows(), psi.cols());
    if (n <= kDenseKroneckerLimit) {
        // vec index i + n j; (A kron B)(n j1 + i1, n j2 + i2) = A(j1,j2) B(i1,i2).
        Matrix Q(n * n, n * n);
        for (Eigen::Index j1 = 0; j1 < n; ++j1) {
            for (Eigen::Index j2 = 0; j2 < n; ++j2) Q.block(n * j1, n * j2, n, n) = c_inv(j1, j2) * c_inv;
        }
        QPsi.noalias() = Q * psi;
    } else {
        for (Eigen::Index col = 0; col < psi.cols(); ++col) {
            const Matrix y = c_inv * as_matrix(psi, col, n) * c_inv;
            QPsi.col(col) = Eigen::Map<const Vector>(y.data(), n * n);
        }
    }
    Matrix J = 0.5 * samples * (psi.transpose() * QPsi);
    return numerics::symmetrize(J);
}

Matrix fim_entrywise(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var, double samples) {
    require_inputs(L_reduced, sigma_theta_reduced, samples);
    const Eigen::Index n = L_reduced.rows();
    const Matrix c_inv = inverse_covariance(reduced_model_covariance(L_reduced, sigma_theta_reduced, noise_var));
    std::vector<Matrix> derivs;
    for (const auto& [k, l] : vech_order(n)) {
        // dC/dL_kl with L_kl = L_lk tied: E S L + L S E, E the symmetric unit pattern.
        Matrix E = Matrix::Zero(n, n);
        E(k, l) = 1.0;
        E(l, k) = 1.0;
        derivs.push_back(E * sigma_theta_reduced * L_reduced + L_reduced * sigma_theta_reduced * E);
    }
    derivs.push_back(reduced_noise_shape(n + 1));
    return trace_fim(derivs, c_inv, samples);
}

Matrix fim_numeric_oracle(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var,
                          double samples, double step) {
    require_inputs(L_reduced, sigma_theta_reduced, samples);
    if (!(step > 0.0)) throw Error(ErrorKind::ConfigError, "finite-difference step must be positive");
    const Eigen::Index n = L_reduced.rows();
    const Eigen::Index d = vech_size(n) + 1;
    Vector alpha(d);
    alpha.head(d - 1) = vech(L_reduced);
    alpha(d - 1) = noise_var;

    auto model = [&](const Vector& a) {
        const Matrix L = unvech(a.head(d - 1), n);
        return Matrix(L * sigma_theta_reduced * L + a(d - 1) * reduced_noise_shape(n + 1));
    };
    const Matrix c_inv = inverse_covariance(model(alpha));
    std::vector<Matrix> derivs;
    for (Eigen::Index i = 0; i < d; ++i) {
        Vector up = alpha;
        Vector down = alpha;
        up(i) += step;
        down(i) -= step;
        derivs.push_back((model(up) - model(down)) / (2.0 * step));
    }
    return trace_fim(derivs, c_inv, samples);
}

Vector CrbReport::topology_bounds() const {
    const Eigen::Index d = B.rows();
    return B.diagonal().head(d - 1);
}

CrbReport crb_bound(const Matrix& J, double samples, double rank_tol) {
    numerics::require_symmetric(J, "Fisher information");
    const Eigen::Index d = J.rows();
    // d = n(n+1)/2 + 1
    const auto n = static_cast<Eigen::Index>(std::lround((std::sqrt(8.0 * static_cast<double>(d - 1) + 1.0) - 1.0) / 2.0));
    if (d < 2 || vech_size(n) + 1 != d) {
        std::ostringstream os;
        os << "FIM dimension " << d << " is not n(n+1)/2 + 1";
        throw Error(ErrorKind::ShapeMismatch, os.str());
    }
    CrbReport r;
    r.J = J;
    r.B = numerics::sym_pinv(J, rank_tol);
    r.order = vech_order(n);
    r.topology_bound_trace = r.B.diagonal().head(d - 1).sum();
    r.noise_var_bound = r.B(d - 1, d - 1);
    r.samples = samples;
    return r;
}

CrbReport crb(const Matrix& L_reduced, const Matrix& sigma_theta_reduced, double noise_var, double samples) {
    return crb_bound(fim(L_reduced, sigma_theta_reduced, noise_var, samples), samples);
}

}  // namespace mlbest
