#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "ksem/datamodel.hpp"
#include "ksem/group_lasso.hpp"
#include "ksem/kernel.hpp"

namespace ksem {

/// Proximal-gradient state over zeta_ij = K_i^{1/2} alpha_ij.
struct PgState
{
    BlockGrid zeta;
    VectorXd b_diag;
    VectorXd lipschitz;
    int iter = 0;
    std::vector<double> objective_trace;
};

struct ApgState : PgState
{
    BlockGrid prev_zeta;
    VectorXd prev_b;
    double beta_prev = 1.0; // beta_{k-1}
    double beta = 1.0;      // beta_k
};

inline GroupLassoColumn kernel_column(const Dataset& data, const KernelSet& kernels, Index j)
{
    if (j < 0 || j >= data.nodes()) fail(ErrorKind::invalid_input, "node index out of range");
    return GroupLassoColumn(kernels.sqrts(), j, data.Y.col(j), data.X.col(j), &kernels.compact_sqrts());
}

/// lambda_max(P_j^T P_j) * 1.01 with P_j = [K~_j^{1/2} x_j], block j removed.
inline double lipschitz_constant(const KernelSet& kernels, const Dataset& data, Index j)
{
    return kernel_column(data, kernels, j).lipschitz();
}

inline PgState make_pg_state(const Dataset& data, const KernelSet& kernels)
{
    PgState s;
    s.zeta = BlockGrid(data.nodes(), data.samples());
    s.b_diag = VectorXd::Zero(data.nodes());
    s.lipschitz.resize(data.nodes());
    for (Index j = 0; j < data.nodes(); ++j) s.lipschitz(j) = lipschitz_constant(kernels, data, j);
    return s;
}

inline ApgState make_apg_state(const Dataset& data, const KernelSet& kernels)
{
    ApgState s;
    static_cast<PgState&>(s) = make_pg_state(data, kernels);
    s.prev_zeta = s.zeta;
    s.prev_b = s.b_diag;
    return s;
}

/// Gradients of 1/2 ||y_j - K~_j^{1/2} zeta_j - b_jj x_j||^2 at (zeta_j, b_jj):
/// stacked off-diagonal zeta gradient and the b_jj gradient.
inline std::pair<VectorXd, double> column_gradients(const GroupLassoColumn& col, const MatrixXd& U, double b)
{
    const VectorXd r = col.residual(U, b);
    const MatrixXd G = col.block_gradient(r);
    BlockGrid tmp(col.nodes(), col.block_size());
    tmp.column(col.node()) = G;
    return {tmp.stacked_off_diagonal(col.node()), r.dot(col.x())};
}

inline std::pair<VectorXd, double> pg_gradients(const PgState& state, const Dataset& data, const KernelSet& kernels,
                                                Index j)
{
    return column_gradients(kernel_column(data, kernels, j), state.zeta.column(j), state.b_diag(j));
}

/// Extrapolated point z_j = zeta_j[k] + ((beta_{k-1} - 1) / beta_k) (zeta_j[k] - zeta_j[k-1]), same for b.
inline std::pair<MatrixXd, double> apg_extrapolate(const ApgState& state, Index j)
{
    const double w = (state.beta_prev - 1.0) / state.beta;
    const MatrixXd& cur = state.zeta.column(j);
    return {cur + w * (cur - state.prev_zeta.column(j)),
            state.b_diag(j) + w * (state.b_diag(j) - state.prev_b(j))};
}

/// Gradients at the extrapolated point.
inline std::pair<VectorXd, double> apg_gradients(const ApgState& state, const Dataset& data,
                                                 const KernelSet& kernels, Index j)
{
    const auto [Z, d] = apg_extrapolate(state, j);
    return column_gradients(kernel_column(data, kernels, j), Z, d);
}

/// One PG update of column j in place.
inline void pg_step(PgState& state, const Dataset& data, const KernelSet& kernels, const SolverConfig& config, Index j)
{
    const auto col = kernel_column(data, kernels, j);
    MatrixXd next;
    double b = 0.0;
    col.prox_step(state.zeta.column(j), state.b_diag(j), state.lipschitz(j), config.lambda, next, b);
    state.zeta.column(j) = std::move(next);
    state.b_diag(j) = b;
}

/// One APG update of column j in place; the momentum scalars are shared by
/// all columns and advanced by advance_beta once per sweep.
inline void apg_step(ApgState& state, const Dataset& data, const KernelSet& kernels, const SolverConfig& config,
                     Index j)
{
    const auto col = kernel_column(data, kernels, j);
    const auto [Z, d] = apg_extrapolate(state, j);
    MatrixXd next;
    double b = 0.0;
    col.prox_step(Z, d, state.lipschitz(j), config.lambda, next, b);
    state.prev_zeta.column(j) = state.zeta.column(j);
    state.prev_b(j) = state.b_diag(j);
    state.zeta.column(j) = std::move(next);
    state.b_diag(j) = b;
}

inline void advance_beta(ApgState& state)
{
    state.beta_prev = state.beta;
    state.beta = next_beta(state.beta);
}

/// Objective written in zeta: 1/2 sum_j ||y_j - K~_j^{1/2} zeta_j - b_jj x_j||^2 + lambda sum ||zeta_ij||.
inline double zeta_objective(const Dataset& data, const KernelSet& kernels, const BlockGrid& zeta, const VectorXd& b,
                             double lambda)
{
    double total = 0.0;
    for (Index j = 0; j < data.nodes(); ++j)
        total += kernel_column(data, kernels, j).objective(zeta.column(j), b(j), lambda);
    return total;
}

/// alpha_ij = (K_i^{1/2})^+ zeta_ij
inline DualCoefficients zeta_to_alpha(const KernelSet& kernels, const BlockGrid& zeta)
{
    DualCoefficients alpha(zeta.nodes(), zeta.block_size());
    for (Index i = 0; i < zeta.nodes(); ++i) {
        const MatrixXd inv_sqrt = kernels.spectrum(i).pinv_sqrt();
        for (Index j = 0; j < zeta.nodes(); ++j)
            if (i != j) alpha.block(i, j) = inv_sqrt * zeta.block(i, j);
    }
    return alpha;
}

inline BlockGrid alpha_to_zeta(const KernelSet& kernels, const DualCoefficients& alpha)
{
    BlockGrid zeta(alpha.nodes(), alpha.block_size());
    for (Index j = 0; j < alpha.nodes(); ++j)
        for (Index i = 0; i < alpha.nodes(); ++i)
            if (i != j) zeta.block(i, j) = kernels.sqrt(i) * alpha.block(i, j);
    return zeta;
}

/// Smallest lambda for which the kernel estimator has no edges.
inline double kernel_lambda_max(const Dataset& data, const KernelSet& kernels)
{
    double top = 0.0;
    for (Index j = 0; j < data.nodes(); ++j) top = std::max(top, kernel_column(data, kernels, j).lambda_max());
    return top;
}

namespace detail {

inline TopologyEstimate zeta_estimate(GroupLassoResult res, const SolverConfig& config, const char* name)
{
    // zeta is already the kernel-weighted variable, so both score rules coincide
    MatrixXd scores = res.coefficients.block_norms();
    EstimateMeta meta;
    meta.solver = name;
    meta.iterations = res.iterations;
    meta.objective = res.objective;
    meta.converged = res.converged;
    return make_estimate(std::move(res.coefficients), CoefficientKind::transformed, std::move(res.b),
                         std::move(scores), config, std::move(meta), std::move(res.trace));
}

} // namespace detail

inline TopologyEstimate run_pg(const Dataset& data, const KernelSet& kernels, const SolverConfig& config,
                               const WarmStart* warm = nullptr)
{
    config.validate();
    return detail::zeta_estimate(
        solve_group_lasso(kernels.sqrts(), data, config, Acceleration::none, warm, &kernels.compact_sqrts()), config,
        "pg");
}

inline TopologyEstimate run_apg(const Dataset& data, const KernelSet& kernels, const SolverConfig& config,
                                const WarmStart* warm = nullptr)
{
    config.validate();
    return detail::zeta_estimate(
        solve_group_lasso(kernels.sqrts(), data, config, Acceleration::fista, warm, &kernels.compact_sqrts()), config,
        "apg");
}

} // namespace ksem
