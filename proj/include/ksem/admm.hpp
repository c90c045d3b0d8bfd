#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <vector>

#include "ksem/datamodel.hpp"
#include "ksem/group_lasso.hpp"
#include "ksem/kernel.hpp"
#include "ksem/parallel.hpp"

namespace ksem {

struct AdmmState
{
    DualCoefficients coeffs; // alpha_ij
    VectorXd b_diag;
    BlockGrid gamma; // split variable, K_i^{1/2} alpha_ij at consensus
    BlockGrid duals; // xi_ij
    int iter = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
};

inline AdmmState make_admm_state(Index nodes, Index samples)
{
    AdmmState s;
    s.coeffs = DualCoefficients(nodes, samples);
    s.gamma = BlockGrid(nodes, samples);
    s.duals = BlockGrid(nodes, samples);
    s.b_diag = VectorXd::Zero(nodes);
    return s;
}

/// Per-node Woodbury factorizations of (rho I + K~_j D_j^-1 K~_j^T), built
/// once per (kernels, rho) and reused by every iteration.
class AdmmWorkspace
{
public:
    AdmmWorkspace(const KernelSet& kernels, double rho) : kernels_(&kernels), rho_(rho)
    {
        const Index n = kernels.nodes();
        pinvs_.reserve(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) pinvs_.push_back(kernels.spectrum(i).pinv());
        solvers_.reserve(static_cast<std::size_t>(n));
        for (Index j = 0; j < n; ++j) {
            std::vector<const MatrixXd*> c, d;
            for (Index i = 0; i < n; ++i) {
                if (i == j) continue;
                c.push_back(&kernels.gram(i));
                d.push_back(&pinvs_[static_cast<std::size_t>(i)]);
            }
            solvers_.push_back(std::make_unique<WoodburySolver>(std::move(c), std::move(d), rho));
        }
    }

    AdmmWorkspace(const AdmmWorkspace&) = delete;
    AdmmWorkspace& operator=(const AdmmWorkspace&) = delete;

    const KernelSet& kernels() const { return *kernels_; }
    double rho() const { return rho_; }
    const WoodburySolver& solver(Index j) const { return *solvers_[static_cast<std::size_t>(j)]; }

private:
    const KernelSet* kernels_;
    double rho_;
    std::vector<MatrixXd> pinvs_;
    std::vector<std::unique_ptr<WoodburySolver>> solvers_;
};

/// Right-hand side q_j restricted off block j:
///   q_ij = rho K_i^{1/2} gamma_ij + K_i y_j - K_i^{1/2} xi_ij - b_jj K_i x_j
inline VectorXd admm_rhs(const AdmmState& state, const Dataset& data, const KernelSet& kernels, double rho, Index j)
{
    const Index n = data.nodes();
    const Index m = data.samples();
    const VectorXd target = data.Y.col(j) - state.b_diag(j) * data.X.col(j);
    VectorXd q((n - 1) * m);
    Index at = 0;
    for (Index i = 0; i < n; ++i) {
        if (i == j) continue;
        auto qi = q.segment(at, m);
        qi.noalias() = kernels.gram(i) * target;
        qi.noalias() += kernels.sqrt(i) * (rho * state.gamma.block(i, j) - state.duals.block(i, j));
        at += m;
    }
    return q;
}

/// alpha~_j = (K~_j^T K~_j + rho D_j)^-1 q_j through the cached Woodbury factorization.
inline VectorXd admm_update_alpha(const AdmmState& state, const Dataset& data, const AdmmWorkspace& ws,
                                  Index j)
{
    return ws.solver(j).solve(admm_rhs(state, data, ws.kernels(), ws.rho(), j));
}

inline VectorXd admm_update_alpha(const AdmmState& state, const Dataset& data, const KernelSet& kernels,
                                  const SolverConfig& config, Index j)
{
    std::vector<MatrixXd> c, d;
    for (Index i = 0; i < data.nodes(); ++i) {
        if (i == j) continue;
        c.push_back(kernels.gram(i));
        d.push_back(kernels.gram(i));
    }
    return woodbury_solve(c, d, config.rho, admm_rhs(state, data, kernels, config.rho, j));
}

/// b_jj = x_j^T (y_j - K~ alpha_j) / (x_j^T x_j), using the current alpha_j.
inline double admm_update_b(const AdmmState& state, const Dataset& data, const KernelSet& kernels, Index j)
{
    const auto x = data.X.col(j);
    const double xx = x.squaredNorm();
    if (xx == 0.0) fail(ErrorKind::validation, "zero exogenous column j=" + std::to_string(j));
    return x.dot(data.Y.col(j) - kernel_fit(kernels, state.coeffs, j)) / xx;
}

/// gamma_ij = P_{lambda/rho}(K_i^{1/2} alpha_ij + xi_ij / rho)
inline VectorXd admm_update_gamma(const AdmmState& state, const KernelSet& kernels, const SolverConfig& config,
                                  Index i, Index j)
{
    if (i == j) return VectorXd::Zero(kernels.samples());
    return group_shrinkage(kernels.sqrt(i) * state.coeffs.block(i, j) + state.duals.block(i, j) / config.rho,
                           config.lambda / config.rho);
}

namespace detail {

struct AdmmColumnStats
{
    double loss = 0.0;
    double penalty = 0.0;
    double primal_sq = 0.0;   // ||K^{1/2} alpha - gamma||^2
    double dual_sq = 0.0;     // ||K^{1/2} (gamma - gamma_prev)||^2
    double w_sq = 0.0;        // ||K^{1/2} alpha||^2
    double gamma_sq = 0.0;    // ||gamma||^2
    double xi_sq = 0.0;       // ||K^{1/2} xi||^2
};

// alpha -> b -> gamma -> xi for column j
inline AdmmColumnStats admm_column_sweep(AdmmState& state, const Dataset& data, const AdmmWorkspace& ws,
                                         const SolverConfig& config, Index j)
{
    const KernelSet& kernels = ws.kernels();
    const double rho = config.rho;
    const Index n = data.nodes();

    state.coeffs.set_off_diagonal(j, admm_update_alpha(state, data, ws, j));

    const VectorXd fit = kernel_fit(kernels, state.coeffs, j);
    const auto x = data.X.col(j);
    const double b = x.dot(data.Y.col(j) - fit) / x.squaredNorm();
    state.b_diag(j) = b;

    AdmmColumnStats st;
    st.loss = 0.5 * (data.Y.col(j) - fit - b * x).squaredNorm();
    for (Index i = 0; i < n; ++i) {
        if (i == j) continue;
        const MatrixXd& S = kernels.sqrt(i);
        const VectorXd w = S * state.coeffs.block(i, j);
        const VectorXd prev = state.gamma.block(i, j);
        const VectorXd g = group_shrinkage(w + state.duals.block(i, j) / rho, config.lambda / rho);
        state.gamma.block(i, j) = g;
        state.duals.block(i, j) += rho * (w - g);

        st.penalty += w.norm();
        st.primal_sq += (w - g).squaredNorm();
        st.dual_sq += (S * (g - prev)).squaredNorm();
        st.w_sq += w.squaredNorm();
        st.gamma_sq += g.squaredNorm();
        st.xi_sq += (S * state.duals.block(i, j)).squaredNorm();
    }
    return st;
}

} // namespace detail

/// One full iteration over all columns; updates residuals and returns the
/// objective at the new (alpha, b).
inline double admm_iteration(AdmmState& state, const Dataset& data, const AdmmWorkspace& ws,
                             const SolverConfig& config, double* primal_scale = nullptr,
                             double* dual_scale = nullptr)
{
    const Index n = data.nodes();
    std::vector<detail::AdmmColumnStats> stats(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), config.jobs, [&](std::size_t j) {
        stats[j] = detail::admm_column_sweep(state, data, ws, config, static_cast<Index>(j));
    });
    detail::AdmmColumnStats tot;
    for (const auto& s : stats) {
        tot.loss += s.loss;
        tot.penalty += s.penalty;
        tot.primal_sq += s.primal_sq;
        tot.dual_sq += s.dual_sq;
        tot.w_sq += s.w_sq;
        tot.gamma_sq += s.gamma_sq;
        tot.xi_sq += s.xi_sq;
    }
    state.primal_residual = std::sqrt(tot.primal_sq);
    state.dual_residual = config.rho * std::sqrt(tot.dual_sq);
    ++state.iter;
    if (!std::isfinite(state.primal_residual) || !std::isfinite(state.dual_residual))
        fail(ErrorKind::solver_diverged, "ADMM residuals became non-finite");
    if (primal_scale) *primal_scale = 1.0 + std::max(std::sqrt(tot.w_sq), std::sqrt(tot.gamma_sq));
    if (dual_scale) *dual_scale = 1.0 + std::sqrt(tot.xi_sq);
    return tot.loss + config.lambda * tot.penalty;
}

namespace detail {

// Same iteration as admm_iteration with blocks grouped by the row node i,
// carried out on zeta_ij = K_i^{1/2} alpha_ij. In exact arithmetic the two
// coincide; the alpha form weights by K_i^+, which for ridged low-rank Grams
// amplifies roundoff by 1/ridge and stalls the residuals far above tol.
// The zeta update solves (S^T S + rho I) zeta = S^T t + rho gamma - xi with
// S = [K_1^{1/2} ... K_n^{1/2}], so the inner M x M system is rho I + sum K_i.
// Row layout: Z[i].col(j) = zeta_ij.
class AdmmEngine
{
public:
    AdmmEngine(const Dataset& data, const KernelSet& kernels, const SolverConfig& config)
        : data_(data), kernels_(kernels), config_(config), n_(data.nodes()), m_(data.samples())
    {
        std::vector<MatrixXd> grams;
        MatrixXd total = MatrixXd::Zero(m_, m_);
        for (Index i = 0; i < n_; ++i) {
            grams.push_back(kernels.sqrt(i) * kernels.sqrt(i));
            total += grams.back();
        }
        for (Index j = 0; j < n_; ++j) {
            MatrixXd inner = total - grams[static_cast<std::size_t>(j)];
            inner.diagonal().array() += config.rho;
            inner_.emplace_back(inner);
            if (inner_.back().info() != Eigen::Success)
                fail(ErrorKind::numerical_singularity, "inner M x M system is singular; increase the ridge");
        }
        zeta_.assign(static_cast<std::size_t>(n_), MatrixXd::Zero(m_, n_));
        gamma_ = zeta_;
        xi_ = zeta_;
        b_ = VectorXd::Zero(n_);
    }

    // one alpha -> b -> gamma -> xi sweep; returns the objective at (alpha, b)
    double iterate()
    {
        const double rho = config_.rho;
        const double t = config_.lambda / rho;
        const MatrixXd target = data_.Y - data_.X * b_.asDiagonal();

        std::vector<MatrixXd> r(static_cast<std::size_t>(n_));
        MatrixXd sr = MatrixXd::Zero(m_, n_);
        for (Index i = 0; i < n_; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            r[ii] = rho * gamma_[ii] - xi_[ii];
            r[ii].noalias() += kernels_.sqrt(i) * target;
            r[ii].col(i).setZero();
            sr.noalias() += kernels_.sqrt(i) * r[ii];
        }
        MatrixXd s(m_, n_);
        for (Index j = 0; j < n_; ++j) s.col(j) = inner_[static_cast<std::size_t>(j)].solve(sr.col(j));

        MatrixXd fit = MatrixXd::Zero(m_, n_);
        for (Index i = 0; i < n_; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            r[ii].noalias() -= kernels_.sqrt(i) * s;
            zeta_[ii] = r[ii] / rho;
            zeta_[ii].col(i).setZero();
            fit.noalias() += kernels_.sqrt(i) * zeta_[ii];
        }

        for (Index j = 0; j < n_; ++j) {
            const auto x = data_.X.col(j);
            b_(j) = x.dot(data_.Y.col(j) - fit.col(j)) / x.squaredNorm();
        }
        const double loss = 0.5 * (data_.Y - fit - data_.X * b_.asDiagonal()).squaredNorm();

        double penalty = 0.0, primal_sq = 0.0, dual_sq = 0.0, w_sq = 0.0, gamma_sq = 0.0, xi_sq = 0.0;
        for (Index i = 0; i < n_; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const MatrixXd& w = zeta_[ii];
            MatrixXd g(m_, n_);
            for (Index j = 0; j < n_; ++j)
                g.col(j) = j == i ? VectorXd::Zero(m_) : group_shrinkage(w.col(j) + xi_[ii].col(j) / rho, t);
            xi_[ii] += rho * (w - g);
            dual_sq += (kernels_.sqrt(i) * (g - gamma_[ii])).squaredNorm();
            xi_sq += (kernels_.sqrt(i) * xi_[ii]).squaredNorm();
            gamma_[ii] = std::move(g);
            penalty += w.colwise().norm().sum();
            primal_sq += (w - gamma_[ii]).squaredNorm();
            w_sq += w.squaredNorm();
            gamma_sq += gamma_[ii].squaredNorm();
        }
        primal_ = std::sqrt(primal_sq);
        dual_ = rho * std::sqrt(dual_sq);
        primal_scale_ = 1.0 + std::max(std::sqrt(w_sq), std::sqrt(gamma_sq));
        dual_scale_ = 1.0 + std::sqrt(xi_sq);
        ++iter_;
        if (!std::isfinite(primal_) || !std::isfinite(dual_))
            fail(ErrorKind::solver_diverged, "ADMM residuals became non-finite");
        return loss + config_.lambda * penalty;
    }

    bool converged() const
    {
        return primal_ <= config_.tol * primal_scale_ && dual_ <= config_.tol * dual_scale_;
    }

    double primal_residual() const { return primal_; }

    AdmmState state() const
    {
        AdmmState st = make_admm_state(n_, m_);
        for (Index i = 0; i < n_; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const MatrixXd alpha = kernels_.spectrum(i).pinv_sqrt() * zeta_[ii];
            for (Index j = 0; j < n_; ++j) {
                if (i == j) continue;
                st.coeffs.block(i, j) = alpha.col(j);
                st.gamma.block(i, j) = gamma_[ii].col(j);
                st.duals.block(i, j) = xi_[ii].col(j);
            }
        }
        st.b_diag = b_;
        st.iter = iter_;
        st.primal_residual = primal_;
        st.dual_residual = dual_;
        return st;
    }

private:
    const Dataset& data_;
    const KernelSet& kernels_;
    const SolverConfig& config_;
    Index n_, m_;
    std::vector<Eigen::LLT<MatrixXd>> inner_;
    std::vector<MatrixXd> zeta_, gamma_, xi_;
    VectorXd b_;
    int iter_ = 0;
    double primal_ = 0.0, dual_ = 0.0, primal_scale_ = 1.0, dual_scale_ = 1.0;
};

} // namespace detail

/// Residual-based stopping: primal < tol (1 + max(||D^{1/2}W||, ||Gamma||))
/// and dual < tol (1 + ||D^{1/2} Xi||).
inline TopologyEstimate run_admm(const Dataset& data, const KernelSet& kernels, const SolverConfig& config,
                                 AdmmState* final_state = nullptr, std::vector<double>* primal_history = nullptr)
{
    config.validate();
    if (kernels.nodes() != data.nodes() || kernels.samples() != data.samples())
        fail(ErrorKind::invalid_input, "kernel set does not match dataset");
    detail::AdmmEngine engine(data, kernels, config);

    std::vector<double> trace;
    trace.push_back(0.5 * data.Y.squaredNorm());
    bool converged = false;
    for (int k = 0; k < config.max_iters; ++k) {
        trace.push_back(engine.iterate());
        if (primal_history) primal_history->push_back(engine.primal_residual());
        if (engine.converged()) {
            converged = true;
            break;
        }
    }
    AdmmState state = engine.state();

    // Reported from the split variable: its group zeros are exact, and
    // K_i^{+1/2} applied to the remaining consensus error would be amplified
    // by 1 / sqrt(ridge). b is refit to the reported coefficients.
    const Index n = data.nodes();
    DualCoefficients alpha(n, data.samples());
    VectorXd b(n);
    {
        MatrixXd fit = MatrixXd::Zero(data.samples(), n);
        for (Index i = 0; i < n; ++i) {
            const MatrixXd root_pinv = kernels.spectrum(i).pinv_sqrt();
            for (Index j = 0; j < n; ++j) {
                if (i == j) continue;
                alpha.block(i, j) = root_pinv * state.gamma.block(i, j);
                fit.col(j).noalias() += kernels.gram(i) * alpha.block(i, j);
            }
        }
        for (Index j = 0; j < n; ++j) {
            const auto x = data.X.col(j);
            b(j) = x.dot(data.Y.col(j) - fit.col(j)) / x.squaredNorm();
        }
    }

    MatrixXd scores(n, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
            scores(i, j) = config.score_rule == ScoreRule::kernel_weighted
                               ? (kernels.sqrt(i) * alpha.block(i, j)).norm()
                               : alpha.block(i, j).norm();

    EstimateMeta meta;
    meta.solver = "admm";
    meta.iterations = state.iter;
    meta.objective = objective_value(data, kernels, alpha, b, config.lambda);
    meta.converged = converged;
    auto est = make_estimate(std::move(alpha), CoefficientKind::dual_alpha, std::move(b), std::move(scores), config,
                             std::move(meta), std::move(trace));
    if (final_state) *final_state = std::move(state);
    return est;
}

} // namespace ksem
