#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

#include "ksem/datamodel.hpp"
#include "ksem/group_lasso.hpp"
#include "ksem/kernel.hpp"

namespace ksem {

/// Monomial features: per node an M x P matrix with row m = [y_im, y_im^2, ..., y_im^P].
struct PolyFeatures
{
    int order = 1;
    std::vector<MatrixXd> per_node;

    Index nodes() const { return static_cast<Index>(per_node.size()); }

    // M x NP concatenation
    MatrixXd concat() const
    {
        if (per_node.empty()) return {};
        const Index m = per_node.front().rows();
        MatrixXd out(m, order * nodes());
        for (Index i = 0; i < nodes(); ++i) out.middleCols(i * order, order) = per_node[static_cast<std::size_t>(i)];
        return out;
    }
};

/// Coefficient blocks w_ij of length P (diagonal zero) with loadings b_jj.
struct PolyCoefficients
{
    BlockGrid blocks;
    VectorXd b_diag;
};

inline PolyFeatures build_poly_features(const MatrixXd& Y, int order, bool standardize = false)
{
    if (order < 1) fail(ErrorKind::configuration, "polynomial order must be >= 1");
    PolyFeatures f;
    f.order = order;
    f.per_node.reserve(static_cast<std::size_t>(Y.cols()));
    for (Index i = 0; i < Y.cols(); ++i) {
        MatrixXd F(Y.rows(), order);
        F.col(0) = Y.col(i);
        for (int p = 1; p < order; ++p) F.col(p) = F.col(p - 1).cwiseProduct(Y.col(i));
        if (!F.allFinite())
            fail(ErrorKind::feature_overflow,
                 "polynomial features of node " + std::to_string(i) + " overflow; standardize the measurements");
        if (standardize) {
            for (int p = 0; p < order; ++p) {
                auto c = F.col(p);
                c.array() -= c.mean();
                const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(c.size()));
                if (sd > 0.0) c /= sd;
            }
        }
        f.per_node.push_back(std::move(F));
    }
    return f;
}

inline GroupLassoColumn poly_column(const Dataset& data, const PolyFeatures& features, Index j)
{
    if (j < 0 || j >= data.nodes()) fail(ErrorKind::invalid_input, "node index out of range");
    if (features.nodes() != data.nodes()) fail(ErrorKind::invalid_input, "features do not match dataset");
    return GroupLassoColumn(features.per_node, j, data.Y.col(j), data.X.col(j));
}

/// Gradients of 1/2 ||y_j - Y~_j w_j - b_jj x_j||^2: stacked off-diagonal w gradient and the b_jj gradient.
inline std::pair<VectorXd, double> poly_gradients(const PolyCoefficients& coeffs, const PolyFeatures& features,
                                                  const Dataset& data, Index j)
{
    const auto col = poly_column(data, features, j);
    const VectorXd r = col.residual(coeffs.blocks.column(j), coeffs.b_diag(j));
    BlockGrid tmp(col.nodes(), col.block_size());
    tmp.column(j) = col.block_gradient(r);
    return {tmp.stacked_off_diagonal(j), r.dot(col.x())};
}

/// 1/2 ||Y - Y~ W - X B||_F^2 + lambda sum_{i != j} ||w_ij||
inline double poly_objective(const Dataset& data, const PolyFeatures& features, const BlockGrid& w,
                             const VectorXd& b, double lambda)
{
    double total = 0.0;
    for (Index j = 0; j < data.nodes(); ++j) total += poly_column(data, features, j).objective(w.column(j), b(j), lambda);
    return total;
}

inline double poly_lambda_max(const Dataset& data, const PolyFeatures& features)
{
    double top = 0.0;
    for (Index j = 0; j < data.nodes(); ++j) top = std::max(top, poly_column(data, features, j).lambda_max());
    return top;
}

namespace detail {

inline TopologyEstimate poly_estimate(GroupLassoResult res, const SolverConfig& config, const char* name)
{
    // ||w_ij|| = ||K_i^{1/2} alpha_ij|| under the matching polynomial kernel
    MatrixXd scores = res.coefficients.block_norms();
    EstimateMeta meta;
    meta.solver = name;
    meta.iterations = res.iterations;
    meta.objective = res.objective;
    meta.converged = res.converged;
    return make_estimate(std::move(res.coefficients), CoefficientKind::polynomial, std::move(res.b),
                         std::move(scores), config, std::move(meta), std::move(res.trace));
}

} // namespace detail

inline TopologyEstimate run_poly_pg(const Dataset& data, const PolyFeatures& features, const SolverConfig& config,
                                    const WarmStart* warm = nullptr)
{
    config.validate();
    if (features.nodes() != data.nodes()) fail(ErrorKind::invalid_input, "features do not match dataset");
    return detail::poly_estimate(solve_group_lasso(features.per_node, data, config, Acceleration::none, warm),
                                 config, features.order == 1 ? "linear" : "poly");
}

inline TopologyEstimate run_poly_pg(const Dataset& data, int order, const SolverConfig& config,
                                    const WarmStart* warm = nullptr)
{
    return run_poly_pg(data, build_poly_features(data.Y, order), config, warm);
}

inline TopologyEstimate run_poly_apg(const Dataset& data, const PolyFeatures& features, const SolverConfig& config,
                                     const WarmStart* warm = nullptr)
{
    config.validate();
    if (features.nodes() != data.nodes()) fail(ErrorKind::invalid_input, "features do not match dataset");
    return detail::poly_estimate(solve_group_lasso(features.per_node, data, config, Acceleration::fista, warm),
                                 config, features.order == 1 ? "linear" : "poly");
}

/// Linear SEM baseline: the polynomial solver with P = 1.
inline TopologyEstimate run_linear(const Dataset& data, const SolverConfig& config, const WarmStart* warm = nullptr)
{
    return run_poly_pg(data, 1, config, warm);
}

/// w_ij = Y~_i^T alpha_ij for dual coefficients from a polynomial kernel of the same order.
inline PolyCoefficients kernel_equivalence_map(const DualCoefficients& alpha, const VectorXd& b_diag,
                                               const KernelSpec& spec, const PolyFeatures& features)
{
    if (!spec.is_polynomial() || spec.order() != features.order)
        fail(ErrorKind::configuration, "kernel " + spec.to_string() + " does not match polynomial order " +
                                           std::to_string(features.order));
    if (alpha.nodes() != features.nodes()) fail(ErrorKind::invalid_input, "coefficient grid does not match features");
    PolyCoefficients out{BlockGrid(alpha.nodes(), features.order), b_diag};
    for (Index j = 0; j < alpha.nodes(); ++j)
        for (Index i = 0; i < alpha.nodes(); ++i)
            if (i != j)
                out.blocks.block(i, j) = features.per_node[static_cast<std::size_t>(i)].transpose() * alpha.block(i, j);
    return out;
}

} // namespace ksem
