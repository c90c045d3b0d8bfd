#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ksem/error.hpp"
#include "ksem/kernel.hpp"

namespace ksem {

using MatrixXi = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Endogenous measurements Y and exogenous inputs X, both M x N
/// (rows are samples, columns are nodes; x_j pairs with node j).
struct Dataset
{
    MatrixXd Y;
    MatrixXd X;
    std::vector<std::string> node_names;

    Index samples() const { return Y.rows(); }
    Index nodes() const { return Y.cols(); }
};

/// Validates raw matrices; throws a validation error listing every violation.
inline Dataset validate_dataset(MatrixXd Y, MatrixXd X, std::vector<std::string> node_names = {})
{
    std::vector<std::string> problems;
    if (Y.rows() != X.rows() || Y.cols() != X.cols()) {
        problems.push_back("dimension mismatch: Y is " + std::to_string(Y.rows()) + "x" + std::to_string(Y.cols()) +
                           ", X is " + std::to_string(X.rows()) + "x" + std::to_string(X.cols()));
    } else {
        if (Y.rows() < 2) problems.push_back("need at least 2 samples (M >= 2)");
        if (Y.cols() < 2) problems.push_back("need at least 2 nodes (N >= 2)");
        for (Index j = 0; j < Y.cols(); ++j) {
            for (Index m = 0; m < Y.rows(); ++m) {
                if (!std::isfinite(Y(m, j)))
                    problems.push_back("non-finite Y entry at row " + std::to_string(m) + ", column " + std::to_string(j));
                if (!std::isfinite(X(m, j)))
                    problems.push_back("non-finite X entry at row " + std::to_string(m) + ", column " + std::to_string(j));
            }
            if (X.col(j).allFinite() && X.col(j).squaredNorm() == 0.0)
                problems.push_back("zero exogenous column j=" + std::to_string(j));
        }
        if (!node_names.empty() && static_cast<Index>(node_names.size()) != Y.cols())
            problems.push_back("node name count does not match column count");
    }
    if (!problems.empty()) {
        std::string msg = "invalid dataset:";
        for (const auto& p : problems) msg += "\n  " + p;
        fail(ErrorKind::validation, msg);
    }
    return Dataset{std::move(Y), std::move(X), std::move(node_names)};
}

/// N x N grid of length-d coefficient blocks. Column j of the grid is stored
/// as a d x N matrix whose column i is block (i, j); diagonal blocks are kept
/// at exactly zero.
class BlockGrid
{
public:
    BlockGrid() = default;

    BlockGrid(Index nodes, Index block_size)
        : block_size_(block_size), columns_(static_cast<std::size_t>(nodes), MatrixXd::Zero(block_size, nodes))
    {}

    Index nodes() const { return static_cast<Index>(columns_.size()); }
    Index block_size() const { return block_size_; }

    auto block(Index i, Index j) { return columns_[static_cast<std::size_t>(j)].col(i); }
    auto block(Index i, Index j) const { return columns_[static_cast<std::size_t>(j)].col(i); }

    MatrixXd& column(Index j) { return columns_[static_cast<std::size_t>(j)]; }
    const MatrixXd& column(Index j) const { return columns_[static_cast<std::size_t>(j)]; }

    // column j stacked as an N*d vector (block j included, zero)
    VectorXd stacked(Index j) const
    {
        const MatrixXd& c = column(j);
        return Eigen::Map<const VectorXd>(c.data(), c.size());
    }

    // stacked column j with block j removed, length (N-1)*d
    VectorXd stacked_off_diagonal(Index j) const
    {
        VectorXd out((nodes() - 1) * block_size_);
        Index at = 0;
        for (Index i = 0; i < nodes(); ++i) {
            if (i == j) continue;
            out.segment(at, block_size_) = block(i, j);
            at += block_size_;
        }
        return out;
    }

    // inverse of stacked_off_diagonal; block j is zero-padded
    void set_off_diagonal(Index j, const Eigen::Ref<const VectorXd>& v)
    {
        Index at = 0;
        for (Index i = 0; i < nodes(); ++i) {
            if (i == j) {
                block(i, j).setZero();
                continue;
            }
            block(i, j) = v.segment(at, block_size_);
            at += block_size_;
        }
    }

    // matrix of block Euclidean norms, entry (i, j) = ||block(i, j)||
    MatrixXd block_norms() const
    {
        MatrixXd out = MatrixXd::Zero(nodes(), nodes());
        for (Index j = 0; j < nodes(); ++j) out.col(j) = column(j).colwise().norm().transpose();
        return out;
    }

    bool diagonal_is_zero() const
    {
        for (Index j = 0; j < nodes(); ++j)
            if ((block(j, j).array() != 0.0).any()) return false;
        return true;
    }

    bool all_finite() const
    {
        for (const auto& c : columns_)
            if (!c.allFinite()) return false;
        return true;
    }

    bool operator==(const BlockGrid& other) const
    {
        if (block_size_ != other.block_size_ || columns_.size() != other.columns_.size()) return false;
        for (std::size_t j = 0; j < columns_.size(); ++j)
            if (columns_[j] != other.columns_[j]) return false;
        return true;
    }

private:
    Index block_size_ = 0;
    std::vector<MatrixXd> columns_;
};

/// Kernel-space coefficients alpha_ij (block size M).
using DualCoefficients = BlockGrid;

/// Which variable an estimate's coefficient grid holds.
enum class CoefficientKind {
    dual_alpha,  // alpha_ij
    transformed, // zeta_ij = K_i^{1/2} alpha_ij
    polynomial,  // w_ij
};

enum class ScoreRule {
    native,          // norm of the solver's own variable
    kernel_weighted, // ||K_i^{1/2} alpha_ij||
};

inline std::string to_string(ScoreRule rule)
{
    return rule == ScoreRule::native ? "native" : "kernel_weighted";
}

inline ScoreRule parse_score_rule(const std::string& text)
{
    if (text == "native") return ScoreRule::native;
    if (text == "kernel_weighted" || text == "kernel-weighted") return ScoreRule::kernel_weighted;
    fail(ErrorKind::configuration, "score rule must be native or kernel_weighted, got '" + text + "'");
}

struct SolverConfig
{
    double lambda = 0.1;
    double rho = 1.0;       // ADMM only
    double tau = 1e-6;      // edge threshold; exact zero would mark every pair
    int max_iters = 2000;
    double tol = 1e-6;
    double ridge = default_relative_ridge; // relative factor: ridge_i = ridge * trace(K_i) / M
    ScoreRule score_rule = ScoreRule::native;
    std::uint64_t rng_seed = 0;
    unsigned jobs = 1;
    bool restart = false; // APG function-value restart

    void validate() const
    {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorKind::configuration, "lambda must be >= 0");
        if (!(rho > 0.0) || !std::isfinite(rho)) fail(ErrorKind::configuration, "rho must be > 0");
        if (!(tau >= 0.0)) fail(ErrorKind::configuration, "threshold must be >= 0");
        if (!(tol > 0.0)) fail(ErrorKind::configuration, "tol must be > 0");
        if (max_iters < 1) fail(ErrorKind::configuration, "max_iters must be positive");
        if (!(ridge >= 0.0)) fail(ErrorKind::configuration, "ridge must be >= 0");
    }
};

struct EstimateMeta
{
    std::string solver;
    int iterations = 0;
    double objective = 0.0;
    bool converged = false;
    double lambda = 0.0;
    double threshold = 0.0;
    ScoreRule score_rule = ScoreRule::native;
};

struct TopologyEstimate
{
    MatrixXi adjacency;
    VectorXd b_diag;
    MatrixXd scores;
    BlockGrid coefficients;
    CoefficientKind kind = CoefficientKind::dual_alpha;
    EstimateMeta meta;
    std::vector<double> objective_trace;
};

/// a_ij = 1 iff scores(i, j) >= tau; the diagonal is always 0.
inline MatrixXi edges_from_scores(const MatrixXd& scores, double tau)
{
    MatrixXi A = (scores.array() >= tau).cast<int>();
    A.diagonal().setZero();
    return A;
}

/// Y-hat column j from dual coefficients: sum_{i != j} K_i alpha_ij.
inline VectorXd kernel_fit(const KernelSet& kernels, const DualCoefficients& coeffs, Index j)
{
    VectorXd fit = VectorXd::Zero(kernels.samples());
    for (Index i = 0; i < coeffs.nodes(); ++i) {
        if (i == j) continue;
        fit.noalias() += kernels.gram(i) * coeffs.block(i, j);
    }
    return fit;
}

/// 1/2 ||Y - K~ W_alpha - X B||_F^2 + lambda sum_{i != j} ||K_i^{1/2} alpha_ij||
inline double objective_value(const Dataset& data, const KernelSet& kernels, const DualCoefficients& coeffs,
                              const VectorXd& b_diag, double lambda)
{
    const Index n = data.nodes();
    if (kernels.nodes() != n || coeffs.nodes() != n || b_diag.size() != n ||
        coeffs.block_size() != data.samples() || kernels.samples() != data.samples())
        fail(ErrorKind::invalid_input, "objective_value: inconsistent dimensions");
    double loss = 0.0;
    double penalty = 0.0;
    for (Index j = 0; j < n; ++j) {
        const VectorXd r = data.Y.col(j) - kernel_fit(kernels, coeffs, j) - b_diag(j) * data.X.col(j);
        loss += 0.5 * r.squaredNorm();
        for (Index i = 0; i < n; ++i) {
            if (i == j) continue;
            penalty += (kernels.sqrt(i) * coeffs.block(i, j)).norm();
        }
    }
    return loss + lambda * penalty;
}

} // namespace ksem
