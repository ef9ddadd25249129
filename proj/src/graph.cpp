#include "mlbest/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <utility>

#include "mlbest/error.hpp"
#include "mlbest/rng.hpp"

namespace mlbest {

namespace {

class DisjointSets {
public:
    explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)), rank_(static_cast<std::size_t>(n), 0) {
        std::iota(parent_.begin(), parent_.end(), 0);
    }

    int find(int x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
        return true;
    }

private:
    std::vector<int> parent_;
    std::vector<int> rank_;
};

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
    std::ostringstream os;
    os << "line " << line << ": " << what;
    throw Error(ErrorKind::ParseError, os.str());
}

}  // namespace

WeightedGraph::WeightedGraph(int bus_count, std::vector<Branch> branches)
    : bus_count_(bus_count), branches_(std::move(branches)) {
    if (bus_count_ < 1) throw Error(ErrorKind::InvalidBranch, "bus count must be positive");
    for (const Branch& b : branches_) {
        std::ostringstream os;
        os << "branch (" << b.from << "," << b.to << ")";
        if (b.from < 1 || b.to > bus_count_ || b.from >= b.to) {
            throw Error(ErrorKind::InvalidBranch, os.str() + " needs 1 <= from < to <= M");
        }
        if (!(b.susceptance > 0.0) || !std::isfinite(b.susceptance)) {
            throw Error(ErrorKind::InvalidBranch, os.str() + " has non-positive susceptance");
        }
    }
    std::sort(branches_.begin(), branches_.end(), [](const Branch& a, const Branch& b) {
        return std::tie(a.from, a.to) < std::tie(b.from, b.to);
    });
    for (std::size_t i = 1; i < branches_.size(); ++i) {
        if (branches_[i].from == branches_[i - 1].from && branches_[i].to == branches_[i - 1].to) {
            std::ostringstream os;
            os << "duplicate branch (" << branches_[i].from << "," << branches_[i].to << ")";
            throw Error(ErrorKind::InvalidBranch, os.str());
        }
    }
}

bool WeightedGraph::is_connected() const {
    DisjointSets sets(bus_count_);
    int components = bus_count_;
    for (const Branch& b : branches_) {
        if (sets.unite(b.from - 1, b.to - 1)) --components;
    }
    return components == 1;
}

Matrix reduction_operator(Eigen::Index bus_count) {
    Matrix u = Matrix::Zero(bus_count, bus_count - 1);
    u.row(0).setConstant(-1.0);
    u.bottomRows(bus_count - 1).setIdentity();
    return u;
}

Matrix reduction_pinv(Eigen::Index bus_count) {
    // (U^T U)^{-1} = I - 11^T/M, so U^+ = [-1/M, I - 11^T/M].
    const double m = static_cast<double>(bus_count);
    Matrix up(bus_count - 1, bus_count);
    up.col(0).setConstant(-1.0 / m);
    up.rightCols(bus_count - 1) = Matrix::Identity(bus_count - 1, bus_count - 1);
    up.rightCols(bus_count - 1).array() -= 1.0 / m;
    return up;
}

Matrix reduced_noise_shape(Eigen::Index bus_count) {
    Matrix s = Matrix::Identity(bus_count - 1, bus_count - 1);
    s.array() -= 1.0 / static_cast<double>(bus_count);
    return s;
}

LaplacianPair LaplacianPair::from_laplacian(const Matrix& L) {
    numerics::require_square(L, "Laplacian");
    if (L.rows() < 2) throw Error(ErrorKind::ShapeMismatch, "Laplacian needs at least 2 buses");
    LaplacianPair lp;
    lp.L = L;
    lp.L_reduced = reduce_laplacian(L);
    lp.U = reduction_operator(L.rows());
    lp.U_pinv = reduction_pinv(L.rows());
    lp.noise_shape = reduced_noise_shape(L.rows());
    return lp;
}

LaplacianPair laplacian_from_graph(const WeightedGraph& g) {
    if (g.bus_count() < 2) throw Error(ErrorKind::ShapeMismatch, "graph needs at least 2 buses");
    if (!g.is_connected()) throw Error(ErrorKind::DisconnectedGraph, "graph has islands");
    const int m = g.bus_count();
    Matrix L = Matrix::Zero(m, m);
    for (const Branch& b : g.branches()) {
        const int i = b.from - 1;
        const int j = b.to - 1;
        L(i, j) -= b.susceptance;
        L(j, i) -= b.susceptance;
        L(i, i) += b.susceptance;
        L(j, j) += b.susceptance;
    }
    return LaplacianPair::from_laplacian(L);
}

Matrix reduce_laplacian(const Matrix& L) {
    numerics::require_square(L, "Laplacian");
    if (L.rows() < 2) throw Error(ErrorKind::ShapeMismatch, "Laplacian needs at least 2 buses");
    return L.bottomRightCorner(L.rows() - 1, L.cols() - 1);
}

Matrix expand_laplacian(const Matrix& L_reduced) {
    numerics::require_square(L_reduced, "reduced Laplacian");
    const Matrix u = reduction_operator(L_reduced.rows() + 1);
    return u * L_reduced * u.transpose();
}

LaplacianReport validate_laplacian(const Matrix& L, double tol) {
    numerics::require_square(L, "Laplacian");
    LaplacianReport r;
    const Eigen::Index m = L.rows();
    const double scale = std::max(1.0, L.cwiseAbs().maxCoeff());
    const double atol = tol * scale;
    auto note = [&r](const std::string& s) { r.violations.push_back(s); };

    r.symmetric = numerics::max_asymmetry(L) <= atol;
    if (!r.symmetric) note("matrix is not symmetric");

    const Vector row_sums = L.rowwise().sum();
    r.null_space = true;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (std::abs(row_sums(i)) > atol) {
            r.null_space = false;
            std::ostringstream os;
            os << "row " << i + 1 << " sums to " << row_sums(i);
            note(os.str());
        }
    }

    r.p3_nonpositive_offdiag = true;
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (i != j && L(i, j) > atol) {
                r.p3_nonpositive_offdiag = false;
                std::ostringstream os;
                os << "P.3: entry (" << i + 1 << "," << j + 1 << ") = " << L(i, j) << " > 0";
                note(os.str());
            }
        }
    }

    const Matrix S = numerics::symmetrize(L);
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(S, Eigen::EigenvaluesOnly).eigenvalues();
    const double norm2 = std::max(ev.cwiseAbs().maxCoeff(), 1.0);
    r.p2_psd = ev.minCoeff() >= -tol * norm2;
    if (!r.p2_psd) note("P.2: negative eigenvalue " + std::to_string(ev.minCoeff()));

    if (m >= 2) {
        const Matrix R = S.bottomRightCorner(m - 1, m - 1);
        const Vector rev = Eigen::SelfAdjointEigenSolver<Matrix>(R, Eigen::EigenvaluesOnly).eigenvalues();
        r.p1_full_rank = rev.minCoeff() > tol * norm2;
        if (!r.p1_full_rank) note("P.1: reduced Laplacian is singular");

        r.p4_diag_dominant = true;
        for (Eigen::Index i = 0; i < m - 1; ++i) {
            const double off = R.row(i).cwiseAbs().sum() - std::abs(R(i, i));
            if (off > std::abs(R(i, i)) + atol) {
                r.p4_diag_dominant = false;
                std::ostringstream os;
                os << "P.4: reduced row " << i + 1 << " not diagonally dominant";
                note(os.str());
            }
        }
        for (Eigen::Index j = 0; j < m - 1; ++j) {
            for (Eigen::Index i = 0; i < m - 1; ++i) {
                if (i != j && std::abs(R(i, j)) > atol) ++r.reduced_offdiag_nonzeros;
            }
        }
        r.reduced_offdiag_capacity = static_cast<std::size_t>((m - 1) * (m - 2));
        r.p5_sparse = 2 * r.reduced_offdiag_nonzeros <= r.reduced_offdiag_capacity;
    }
    return r;
}

WeightedGraph watts_strogatz(int bus_count, int mean_degree, double rewire_prob, WeightRange weights,
                             std::optional<double> target_frobenius, std::uint64_t seed) {
    if (bus_count < 3 || mean_degree < 2 || mean_degree % 2 != 0 || mean_degree >= bus_count) {
        throw Error(ErrorKind::GenerationFailed, "need even mean_degree with 2 <= degree < M");
    }
    if (rewire_prob < 0.0 || rewire_prob > 1.0) {
        throw Error(ErrorKind::GenerationFailed, "rewire probability outside [0,1]");
    }
    if (!(weights.low > 0.0) || weights.high < weights.low) {
        throw Error(ErrorKind::GenerationFailed, "weight range must be positive");
    }
    constexpr int kMaxAttempts = 100;
    const int half = mean_degree / 2;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::mt19937_64 gen(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<int> pick(0, bus_count - 1);

        std::set<std::pair<int, int>> edges;
        auto key = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
        for (int i = 0; i < bus_count; ++i) {
            for (int j = 1; j <= half; ++j) edges.insert(key(i, (i + j) % bus_count));
        }
        // Rewire each lattice edge (i, i+j) in the classic order.
        for (int j = 1; j <= half; ++j) {
            for (int i = 0; i < bus_count; ++i) {
                const auto old_edge = key(i, (i + j) % bus_count);
                if (unit(gen) >= rewire_prob || !edges.count(old_edge)) continue;
                int target = pick(gen);
                int guard = 0;
                while ((target == i || edges.count(key(i, target))) && guard++ < 10 * bus_count) {
                    target = pick(gen);
                }
                if (target == i || edges.count(key(i, target))) continue;
                edges.erase(old_edge);
                edges.insert(key(i, target));
            }
        }
        std::uniform_real_distribution<double> weight(weights.low, weights.high);
        std::vector<Branch> branches;
        branches.reserve(edges.size());
        for (const auto& [a, b] : edges) branches.push_back({a + 1, b + 1, weight(gen)});

        WeightedGraph g(bus_count, branches);
        if (!g.is_connected()) continue;
        if (target_frobenius) {
            if (!(*target_frobenius > 0.0)) throw Error(ErrorKind::GenerationFailed, "target norm must be positive");
            const double norm = laplacian_from_graph(g).L.norm();
            const double factor = *target_frobenius / norm;
            for (Branch& b : branches) b.susceptance *= factor;
            return WeightedGraph(bus_count, std::move(branches));
        }
        return g;
    }
    throw Error(ErrorKind::GenerationFailed, "no connected graph after 100 attempts");
}

double fscore(const Matrix& L_hat, const Matrix& L_true, double edge_tol) {
    if (L_hat.rows() != L_true.rows() || L_hat.cols() != L_true.cols() || L_hat.rows() != L_hat.cols()) {
        throw Error(ErrorKind::ShapeMismatch, "fscore needs equal square shapes");
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (Eigen::Index j = 0; j < L_true.cols(); ++j) {
        for (Eigen::Index i = j + 1; i < L_true.rows(); ++i) {
            const bool truth = std::abs(L_true(i, j)) > edge_tol;
            const bool found = std::abs(L_hat(i, j)) > edge_tol;
            if (truth && found) ++tp;
            else if (found) ++fp;
            else if (truth) ++fn;
        }
    }
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fn + fp);
}

WeightedGraph parse_case(const std::string& text) {
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::optional<int> buses;
    bool in_branch = false;
    std::map<std::pair<int, int>, double> merged;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.rfind("buses:", 0) == 0) {
            std::istringstream ls(line.substr(6));
            int m = 0;
            if (!(ls >> m) || m < 1) parse_fail(line_no, "bad bus count");
            buses = m;
            in_branch = false;
            continue;
        }
        if (line == "branch:") {
            in_branch = true;
            continue;
        }
        if (!in_branch) parse_fail(line_no, "row outside a branch: section");
        if (!buses) parse_fail(line_no, "branch rows before buses: header");

        std::istringstream ls(line);
        int f = 0, t = 0;
        double r = 0.0, x = 0.0;
        if (!(ls >> f >> t >> r >> x)) parse_fail(line_no, "expected `fbus tbus r x`");
        std::string extra;
        if (ls >> extra) parse_fail(line_no, "trailing fields");
        if (f < 1 || t < 1 || f > *buses || t > *buses || f == t) {
            parse_fail(line_no, "bus index out of range or self-loop");
        }
        if (!(x > 0.0)) {
            std::ostringstream os;
            os << "line " << line_no << ": reactance x=" << x << " must be positive";
            throw Error(ErrorKind::InvalidBranch, os.str());
        }
        merged[{std::min(f, t), std::max(f, t)}] += 1.0 / x;
    }
    if (!buses) throw Error(ErrorKind::ParseError, "missing buses: header");
    std::vector<Branch> branches;
    branches.reserve(merged.size());
    for (const auto& [k, b] : merged) branches.push_back({k.first, k.second, b});
    return WeightedGraph(*buses, std::move(branches));
}

WeightedGraph load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open case file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_case(buf.str());
}

}  // namespace mlbest
