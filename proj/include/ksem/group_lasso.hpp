#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "ksem/datamodel.hpp"
#include "ksem/error.hpp"
#include "ksem/parallel.hpp"
#include "ksem/rng.hpp"

namespace ksem {

/// Group soft-threshold P_t(z) = z / ||z|| * max(||z|| - t, 0), with P_t(0) = 0.
/// Returns the norm of the result.
inline double group_shrink_in_place(Eigen::Ref<VectorXd> z, double t)
{
    if (!(t >= 0.0)) fail(ErrorKind::invalid_input, "shrinkage threshold must be >= 0");
    const double norm = z.norm();
    if (norm <= t || norm == 0.0) {
        z.setZero();
        return 0.0;
    }
    z *= (norm - t) / norm;
    return norm - t;
}

inline VectorXd group_shrinkage(const Eigen::Ref<const VectorXd>& z, double t)
{
    VectorXd u = z;
    group_shrink_in_place(u, t);
    return u;
}

/// Largest eigenvalue of the symmetric PSD matrix G by power iteration
/// (relative tolerance 1e-6, at most 10 * dim iterations). Falls back to
/// trace(G), which always bounds it, when the iteration does not settle.
inline double power_max_eigenvalue(const MatrixXd& G)
{
    const Index dim = G.rows();
    if (dim == 0) return 0.0;
    Rng rng(0x9a7e1ULL);
    VectorXd v(dim);
    for (Index k = 0; k < dim; ++k) v(k) = 1.0 + 0.5 * rng.normal();
    v.normalize();
    double estimate = 0.0;
    const int max_iters = static_cast<int>(10 * dim) + 10;
    for (int it = 0; it < max_iters; ++it) {
        VectorXd w = G * v;
        const double next = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
        if (it > 0 && std::abs(next - estimate) <= 1e-6 * std::abs(next)) return next;
        estimate = next;
    }
    return G.trace();
}

/// Step-size constant lambda_max(P^T P) * 1.01 for a dense design P.
inline double lipschitz_from_design(const MatrixXd& P)
{
    const MatrixXd G = P.rows() <= P.cols() ? MatrixXd(P * P.transpose()) : MatrixXd(P.transpose() * P);
    return 1.01 * power_max_eigenvalue(G);
}

/// One node's regression in a block design:
///
///   minimize  1/2 || y - sum_{i != j} F_i u_i - b x ||^2 + lambda sum_{i != j} ||u_i||
///
/// F_i are M x d factors (K_i^{1/2} for kernels, the monomial features for
/// polynomial SEMs). Coefficients for the column are a d x N matrix U whose
/// column i is u_i; column j stays zero.
class GroupLassoColumn
{
public:
    /// `compact`, when given, holds cheaper forms of some square symmetric factors.
    /// prox_step and residual_into keep scratch space: one object must not be
    /// used from two threads at once.
    GroupLassoColumn(const std::vector<MatrixXd>& factors, Index j, VectorXd y, VectorXd x,
                     const std::vector<ShiftedLowRank>* compact = nullptr)
        : factors_(&factors), compact_(compact), j_(j), y_(std::move(y)), x_(std::move(x))
    {
        if (compact_ && compact_->size() != factors_->size())
            fail(ErrorKind::invalid_input, "compact factor count differs from factor count");
        // low-rank parts of all compact blocks side by side, so their
        // projections are one matrix-vector product per step
        offset_.assign(factors.size(), -1);
        Index width = 0;
        for (Index i = 0; i < nodes(); ++i)
            if (const ShiftedLowRank* f = this->compact(i); f && i != j_) {
                offset_[static_cast<std::size_t>(i)] = width;
                width += f->V.cols();
            }
        stacked_.resize(y_.size(), width);
        scale_.resize(width);
        for (Index i = 0; i < nodes(); ++i)
            if (const Index at = offset_[static_cast<std::size_t>(i)]; at >= 0) {
                const ShiftedLowRank& f = *this->compact(i);
                stacked_.middleCols(at, f.V.cols()) = f.V;
                scale_.segment(at, f.d.size()) = f.d;
            }
        proj_.resize(width);
        coef_.resize(width);
    }

    Index node() const { return j_; }
    Index nodes() const { return static_cast<Index>(factors_->size()); }
    Index block_size() const { return factors_->front().cols(); }
    const VectorXd& y() const { return y_; }
    const VectorXd& x() const { return x_; }
    const MatrixXd& factor(Index i) const { return (*factors_)[static_cast<std::size_t>(i)]; }

    // F U + b x - y  (zero blocks skipped)
    VectorXd residual(const MatrixXd& U, double b) const
    {
        VectorXd r;
        residual_into(U, b, r);
        return r;
    }

    void residual_into(const MatrixXd& U, double b, VectorXd& r) const
    {
        r = b * x_ - y_;
        const Index m = r.size();
        coef_.setZero();
        for (Index i = 0; i < nodes(); ++i) {
            if (i == j_) continue;
            const auto u = U.col(i);
            if (!(u.array() != 0.0).any()) continue;
            if (const Index at = offset_[static_cast<std::size_t>(i)]; at >= 0) {
                const ShiftedLowRank& f = *compact(i);
                const Eigen::Map<const VectorXd> uu(u.data(), m);
                r += f.shift * uu;
                for (Index k = 0; k < f.V.cols(); ++k)
                    coef_(at + k) = scale_(at + k) * Eigen::Map<const VectorXd>(stacked_.col(at + k).data(), m).dot(uu);
            } else {
                r.noalias() += factor(i) * u;
            }
        }
        if (coef_.size() > 0) r.noalias() += stacked_ * coef_;
    }

    // F_i^T r
    void factor_transpose_product(Index i, const VectorXd& r, Eigen::Ref<VectorXd> out) const
    {
        if (const ShiftedLowRank* f = compact(i)) {
            out.setZero();
            f->add_product(r.data(), out.data());
        } else {
            out.noalias() = factor(i).transpose() * r;
        }
    }

    // d x N, column i = F_i^T r, column j = 0
    MatrixXd block_gradient(const VectorXd& r) const
    {
        MatrixXd G(block_size(), nodes());
        for (Index i = 0; i < nodes(); ++i) {
            if (i == j_)
                G.col(i).setZero();
            else
                factor_transpose_product(i, r, G.col(i));
        }
        return G;
    }

    double penalty(const MatrixXd& U) const
    {
        double sum = 0.0;
        for (Index i = 0; i < nodes(); ++i)
            if (i != j_) sum += U.col(i).norm();
        return sum;
    }

    double objective(const MatrixXd& U, double b, double lambda) const
    {
        return 0.5 * residual(U, b).squaredNorm() + lambda * penalty(U);
    }

    // P_j = [F~_j x_j], block j removed
    MatrixXd design() const
    {
        const Index d = block_size();
        MatrixXd P(y_.size(), (nodes() - 1) * d + 1);
        Index at = 0;
        for (Index i = 0; i < nodes(); ++i) {
            if (i == j_) continue;
            P.middleCols(at, d) = factor(i);
            at += d;
        }
        P.col(at) = x_;
        return P;
    }

    // lambda_max(P_j^T P_j) * 1.01, iterated on the M x M matrix P_j P_j^T
    double lipschitz() const
    {
        MatrixXd G = x_ * x_.transpose();
        for (Index i = 0; i < nodes(); ++i)
            if (i != j_) G.noalias() += factor(i) * factor(i).transpose();
        return 1.01 * power_max_eigenvalue(G);
    }

    // smallest lambda that zeroes every block (b at its LS value)
    double lambda_max() const
    {
        const double b = x_.dot(y_) / x_.squaredNorm();
        const VectorXd r = b * x_ - y_;
        double top = 0.0;
        for (Index i = 0; i < nodes(); ++i)
            if (i != j_) top = std::max(top, (factor(i).transpose() * r).norm());
        return top;
    }

    /// Proximal gradient step evaluated at (Z, d):
    ///   U = P_{lambda/L}(Z - grad_U / L) blockwise,  b = d - grad_b / L.
    void prox_step(const MatrixXd& Z, double d, double L, double lambda, MatrixXd& U_out, double& b_out) const
    {
        prox_step(Z, d, residual(Z, d), L, lambda, U_out, b_out);
    }

    // same, with the residual at (Z, d) already known; `penalty` receives
    // the group norm sum of U_out
    void prox_step(const MatrixXd& Z, double d, const VectorXd& r, double L, double lambda, MatrixXd& U_out,
                   double& b_out, double* penalty = nullptr) const
    {
        double sum = 0.0;
        U_out.resize(block_size(), nodes());
        const Index m = r.size();
        if (proj_.size() > 0) proj_.noalias() = stacked_.transpose() * r;
        for (Index i = 0; i < nodes(); ++i) {
            if (i == j_) {
                U_out.col(i).setZero();
                continue;
            }
            if (const Index at = offset_[static_cast<std::size_t>(i)]; at >= 0) {
                const ShiftedLowRank& f = *compact(i);
                Eigen::Map<VectorXd> u(U_out.col(i).data(), m);
                u = Eigen::Map<const VectorXd>(Z.col(i).data(), m) - (f.shift / L) * r;
                for (Index k = 0; k < f.V.cols(); ++k)
                    u -= (scale_(at + k) * proj_(at + k) / L) *
                         Eigen::Map<const VectorXd>(stacked_.col(at + k).data(), m);
            } else {
                factor_transpose_product(i, r, U_out.col(i));
                U_out.col(i) = Z.col(i) - U_out.col(i) / L;
            }
            sum += group_shrink_in_place(U_out.col(i), lambda / L);
        }
        b_out = d - r.dot(x_) / L;
        if (penalty) *penalty = sum;
    }

private:
    const ShiftedLowRank* compact(Index i) const
    {
        if (!compact_) return nullptr;
        const ShiftedLowRank& f = (*compact_)[static_cast<std::size_t>(i)];
        return f.active ? &f : nullptr;
    }

    const std::vector<MatrixXd>* factors_;
    const std::vector<ShiftedLowRank>* compact_;
    Index j_;
    VectorXd y_;
    VectorXd x_;
    std::vector<Index> offset_; // first column of block i in stacked_, -1 if dense
    MatrixXd stacked_;
    VectorXd scale_;
    mutable VectorXd proj_, coef_;
};

struct ColumnRun
{
    MatrixXd U;
    double b = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace; // objective at the start and after every step
};

/// Momentum sequence beta_k = (1 + sqrt(4 beta_{k-1}^2 + 1)) / 2, beta_0 = 1.
inline double next_beta(double beta)
{
    return (1.0 + std::sqrt(4.0 * beta * beta + 1.0)) / 2.0;
}

inline void check_finite_objective(double value)
{
    if (!std::isfinite(value)) fail(ErrorKind::solver_diverged, "objective became non-finite");
}

/// Plain proximal gradient on one column. Stops when the relative objective
/// change falls below tol.
inline ColumnRun run_pg_column(const GroupLassoColumn& col, MatrixXd U, double b, double L, double lambda,
                               int max_iters, double tol)
{
    ColumnRun run;
    VectorXd r = col.residual(U, b);
    double obj = 0.5 * r.squaredNorm() + lambda * col.penalty(U);
    check_finite_objective(obj);
    run.trace.push_back(obj);
    MatrixXd next;
    double next_b = 0.0;
    for (int k = 0; k < max_iters; ++k) {
        double pen = 0.0;
        col.prox_step(U, b, r, L, lambda, next, next_b, &pen);
        U.swap(next);
        b = next_b;
        col.residual_into(U, b, r);
        const double value = 0.5 * r.squaredNorm() + lambda * pen;
        check_finite_objective(value);
        run.trace.push_back(value);
        run.iterations = k + 1;
        if (std::abs(obj - value) <= tol * std::abs(obj)) {
            run.converged = true;
            break;
        }
        obj = value;
    }
    run.U = std::move(U);
    run.b = b;
    return run;
}

/// Accelerated proximal gradient on one column, extrapolating from the two
/// most recent iterates with weight (beta_{k-1} - 1) / beta_k and
/// beta_{-1} = beta_0 = 1. Returns the best iterate seen; stops when a
/// non-increasing step improves the running minimum by less than tol
/// (relative).
inline ColumnRun run_apg_column(const GroupLassoColumn& col, MatrixXd U, double b, double L, double lambda,
                                int max_iters, double tol, bool restart = false)
{
    ColumnRun run;
    // the residual is affine in (U, b), so r(Z, d) = r + w (r - r_prev)
    VectorXd r = col.residual(U, b);
    VectorXd r_prev = r, r_z;
    double best = 0.5 * r.squaredNorm() + lambda * col.penalty(U);
    check_finite_objective(best);
    run.trace.push_back(best);
    run.U = U;
    run.b = b;

    MatrixXd U_prev = U;
    double b_prev = b;
    double beta_prev = 1.0;
    double beta = 1.0;
    double last = best;
    MatrixXd Z, next;
    double next_b = 0.0;
    for (int k = 0; k < max_iters; ++k) {
        const double w = (beta_prev - 1.0) / beta;
        Z = U + w * (U - U_prev);
        const double d = b + w * (b - b_prev);
        r_z = r + w * (r - r_prev);
        double pen = 0.0;
        col.prox_step(Z, d, r_z, L, lambda, next, next_b, &pen);
        U_prev.swap(U);
        U.swap(next);
        b_prev = b;
        b = next_b;
        r_prev.swap(r);
        col.residual_into(U, b, r);

        const double value = 0.5 * r.squaredNorm() + lambda * pen;
        check_finite_objective(value);
        run.trace.push_back(value);
        run.iterations = k + 1;

        beta_prev = beta;
        beta = next_beta(beta);
        if (restart && value > last) {
            beta_prev = beta = 1.0;
            U_prev = U;
            b_prev = b;
            r_prev = r;
        }
        last = value;

        if (value <= best) {
            const double gain = best - value;
            const double scale = std::abs(best);
            best = value;
            run.U = U;
            run.b = b;
            if (gain <= tol * scale) {
                run.converged = true;
                break;
            }
        }
    }
    return run;
}

/// Sum of per-column objective traces; columns that stopped early hold their
/// final value.
inline std::vector<double> total_trace(const std::vector<ColumnRun>& runs)
{
    std::size_t len = 0;
    for (const auto& r : runs) len = std::max(len, r.trace.size());
    std::vector<double> total(len, 0.0);
    for (const auto& r : runs)
        for (std::size_t k = 0; k < len; ++k) total[k] += r.trace[std::min(k, r.trace.size() - 1)];
    return total;
}

enum class Acceleration { none, fista };

/// Starting point for a solve along a regularization path.
struct WarmStart
{
    BlockGrid coefficients;
    VectorXd b;
};

struct GroupLassoResult
{
    BlockGrid coefficients;
    VectorXd b;
    VectorXd lipschitz;
    int iterations = 0;
    bool converged = true;
    double objective = 0.0;
    std::vector<double> trace;
};

/// Solves every column of a block-design problem independently.
inline GroupLassoResult solve_group_lasso(const std::vector<MatrixXd>& factors, const Dataset& data,
                                          const SolverConfig& config, Acceleration accel,
                                          const WarmStart* warm = nullptr,
                                          const std::vector<ShiftedLowRank>* compact = nullptr)
{
    const Index n = data.nodes();
    const Index d = factors.front().cols();
    if (static_cast<Index>(factors.size()) != n) fail(ErrorKind::invalid_input, "factor count differs from node count");
    if (warm && (warm->coefficients.nodes() != n || warm->coefficients.block_size() != d || warm->b.size() != n))
        fail(ErrorKind::invalid_input, "warm start has wrong shape");
    std::vector<ColumnRun> runs(static_cast<std::size_t>(n));
    VectorXd lipschitz(n);
    parallel_for(static_cast<std::size_t>(n), config.jobs, [&](std::size_t jj) {
        const Index j = static_cast<Index>(jj);
        GroupLassoColumn col(factors, j, data.Y.col(j), data.X.col(j), compact);
        const double L = col.lipschitz();
        lipschitz(j) = L;
        MatrixXd U = warm ? warm->coefficients.column(j) : MatrixXd::Zero(d, n);
        U.col(j).setZero();
        const double b0 = warm ? warm->b(j) : 0.0;
        runs[jj] = accel == Acceleration::fista
                       ? run_apg_column(col, std::move(U), b0, L, config.lambda, config.max_iters, config.tol,
                                        config.restart)
                       : run_pg_column(col, std::move(U), b0, L, config.lambda, config.max_iters, config.tol);
    });

    GroupLassoResult out;
    out.coefficients = BlockGrid(n, d);
    out.b = VectorXd::Zero(n);
    out.lipschitz = lipschitz;
    for (Index j = 0; j < n; ++j) {
        auto& run = runs[static_cast<std::size_t>(j)];
        out.coefficients.column(j) = run.U;
        out.b(j) = run.b;
        out.iterations = std::max(out.iterations, run.iterations);
        out.converged = out.converged && run.converged;
        GroupLassoColumn col(factors, j, data.Y.col(j), data.X.col(j));
        out.objective += col.objective(run.U, run.b, config.lambda);
    }
    out.trace = total_trace(runs);
    return out;
}

/// Scores, adjacency and meta for a finished solve.
inline TopologyEstimate make_estimate(BlockGrid coefficients, CoefficientKind kind, VectorXd b, MatrixXd scores,
                                      const SolverConfig& config, EstimateMeta meta, std::vector<double> trace = {})
{
    TopologyEstimate est;
    scores.diagonal().setZero();
    est.adjacency = edges_from_scores(scores, config.tau);
    est.scores = std::move(scores);
    est.b_diag = std::move(b);
    est.coefficients = std::move(coefficients);
    est.kind = kind;
    meta.lambda = config.lambda;
    meta.threshold = config.tau;
    meta.score_rule = config.score_rule;
    est.meta = std::move(meta);
    est.objective_trace = std::move(trace);
    return est;
}

} // namespace ksem
