#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlbest/numerics.hpp"

namespace mlbest {

/// Undirected transmission branch. Buses are 1-indexed with from < to.
struct Branch {
    int from = 0;
    int to = 0;
    double susceptance = 0.0;  // p.u., strictly positive

    friend bool operator==(const Branch&, const Branch&) = default;
};

/// Bus set plus undirected branches with positive susceptances.
///
/// Branches are kept lexicographically sorted by (from, to). Construction
/// rejects self-loops, out-of-range buses, non-positive susceptances and
/// duplicate pairs.
class WeightedGraph {
public:
    WeightedGraph(int bus_count, std::vector<Branch> branches);

    int bus_count() const noexcept { return bus_count_; }
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    bool is_connected() const;

private:
    int bus_count_;
    std::vector<Branch> branches_;
};

/// Full Laplacian, reduced Laplacian (reference bus 1 removed) and the
/// reduction operator U = [-1^T; I] with its pseudo-inverse.
struct LaplacianPair {
    Matrix L;
    Matrix L_reduced;
    Matrix U;
    Matrix U_pinv;
    /// U^+ (U^+)^T = I - 11^T / M; the reduced-coordinate noise shape.
    Matrix noise_shape;

    Eigen::Index bus_count() const noexcept { return L.rows(); }

    static LaplacianPair from_laplacian(const Matrix& L);
};

Matrix reduction_operator(Eigen::Index bus_count);
/// Closed form (U^T U)^{-1} U^T.
Matrix reduction_pinv(Eigen::Index bus_count);
Matrix reduced_noise_shape(Eigen::Index bus_count);

LaplacianPair laplacian_from_graph(const WeightedGraph& g);

Matrix reduce_laplacian(const Matrix& L);
Matrix expand_laplacian(const Matrix& L_reduced);

struct LaplacianReport {
    bool symmetric = false;
    bool null_space = false;           // L 1 = 0
    bool p1_full_rank = false;         // rank(L_reduced) = M - 1
    bool p2_psd = false;
    bool p3_nonpositive_offdiag = false;
    bool p4_diag_dominant = false;     // on L_reduced
    bool p5_sparse = false;            // off-diagonal nonzeros well below (M-1)(M-2)
    std::size_t reduced_offdiag_nonzeros = 0;
    std::size_t reduced_offdiag_capacity = 0;  // (M-1)(M-2)
    std::vector<std::string> violations;

    bool core_properties() const noexcept {
        return symmetric && null_space && p1_full_rank && p2_psd && p3_nonpositive_offdiag &&
               p4_diag_dominant;
    }
};

LaplacianReport validate_laplacian(const Matrix& L, double tol = 1e-9);

struct WeightRange {
    double low = 0.5;
    double high = 1.5;
};

WeightedGraph watts_strogatz(int bus_count, int mean_degree, double rewire_prob, WeightRange weights,
                             std::optional<double> target_frobenius, std::uint64_t seed);

inline constexpr double kDefaultEdgeTol = 1e-6;

/// F-score 2tp / (2tp + fn + fp) over unordered off-diagonal pairs. An edge is
/// present when |entry| > edge_tol. Returns 1 when both edge sets are empty.
double fscore(const Matrix& L_hat, const Matrix& L_true, double edge_tol = kDefaultEdgeTol);

/// Reads the text case format:
///
///     # comment
///     buses: 14
///     branch:
///     1 2 0.01938 0.05917
///
/// Rows under `branch:` are `fbus tbus r x`. The DC susceptance is 1/x and
/// parallel branches are merged by adding susceptances.
WeightedGraph load_case(const std::filesystem::path& path);
WeightedGraph parse_case(const std::string& text);

}  // namespace mlbest
