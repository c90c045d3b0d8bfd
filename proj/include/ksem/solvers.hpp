#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <variant>

#include "ksem/admm.hpp"
#include "ksem/datamodel.hpp"
#include "ksem/kernel.hpp"
#include "ksem/polysem.hpp"
#include "ksem/proxgrad.hpp"

namespace ksem {

enum class SolverKind { admm, pg, apg, poly, linear };

inline std::string to_string(SolverKind kind)
{
    switch (kind) {
    case SolverKind::admm: return "admm";
    case SolverKind::pg: return "pg";
    case SolverKind::apg: return "apg";
    case SolverKind::poly: return "poly";
    case SolverKind::linear: return "linear";
    }
    return "unknown";
}

inline SolverKind parse_solver(const std::string& text)
{
    if (text == "admm") return SolverKind::admm;
    if (text == "pg") return SolverKind::pg;
    if (text == "apg") return SolverKind::apg;
    if (text == "poly") return SolverKind::poly;
    if (text == "linear") return SolverKind::linear;
    fail(ErrorKind::configuration, "solver must be one of admm|pg|apg|poly|linear, got '" + text + "'");
}

/// Solver choice plus its model: a kernel for admm/pg/apg, a polynomial
/// order for poly (linear is poly with order 1).
struct ModelSpec
{
    SolverKind solver = SolverKind::admm;
    KernelSpec kernel = KernelSpec::polynomial(2);
    int order = 2;

    bool kernel_based() const
    {
        return solver == SolverKind::admm || solver == SolverKind::pg || solver == SolverKind::apg;
    }

    int poly_order() const { return solver == SolverKind::linear ? 1 : order; }

    std::string label() const
    {
        if (kernel_based()) return to_string(solver) + "[" + kernel.to_string() + "]";
        if (solver == SolverKind::linear) return "linear";
        return "poly[" + std::to_string(order) + "]";
    }

    static ModelSpec kernel_solver(SolverKind kind, KernelSpec spec)
    {
        ModelSpec m;
        m.solver = kind;
        m.kernel = spec;
        return m;
    }

    static ModelSpec polynomial(int order)
    {
        ModelSpec m;
        m.solver = SolverKind::poly;
        m.order = order;
        return m;
    }

    static ModelSpec linear()
    {
        ModelSpec m;
        m.solver = SolverKind::linear;
        m.order = 1;
        return m;
    }
};

/// A dataset bound to its model-specific design (kernel set or polynomial
/// features), reusable across solves at different lambda.
class PreparedProblem
{
public:
    PreparedProblem(const Dataset& data, ModelSpec model, double relative_ridge = default_relative_ridge)
        : data_(&data), model_(model)
    {
        if (model_.kernel_based())
            design_ = build_kernel_set(model_.kernel, data.Y, relative_ridge, RidgeMode::relative);
        else
            design_ = build_poly_features(data.Y, model_.poly_order());
    }

    const Dataset& data() const { return *data_; }
    const ModelSpec& model() const { return model_; }
    const KernelSet& kernels() const { return std::get<KernelSet>(design_); }
    const PolyFeatures& features() const { return std::get<PolyFeatures>(design_); }

    double lambda_max() const
    {
        return model_.kernel_based() ? kernel_lambda_max(*data_, kernels()) : poly_lambda_max(*data_, features());
    }

    /// Warm starts are used by the proximal solvers; ADMM always starts at zero.
    /// For lambda >= lambda_max ADMM is skipped: zero coefficients are optimal
    /// there, while its iterates only approach them to within tol.
    TopologyEstimate solve(const SolverConfig& config, const WarmStart* warm = nullptr) const
    {
        switch (model_.solver) {
        case SolverKind::admm:
            if (config.lambda > 0.0 && config.lambda >= lambda_max()) return empty_admm_estimate(config);
            return run_admm(*data_, kernels(), config);
        case SolverKind::pg: return run_pg(*data_, kernels(), config, warm);
        case SolverKind::apg: return run_apg(*data_, kernels(), config, warm);
        case SolverKind::poly:
        case SolverKind::linear: {
            auto est = run_poly_pg(*data_, features(), config, warm);
            est.meta.solver = to_string(model_.solver);
            return est;
        }
        }
        fail(ErrorKind::configuration, "unknown solver");
    }

    /// Dual coefficients alpha for a kernel estimate (zeta mapped back through K_i^{+1/2}).
    DualCoefficients dual_coefficients(const TopologyEstimate& est) const
    {
        if (est.kind == CoefficientKind::dual_alpha) return est.coefficients;
        if (est.kind == CoefficientKind::transformed) return zeta_to_alpha(kernels(), est.coefficients);
        fail(ErrorKind::invalid_input, "estimate does not hold kernel coefficients");
    }

    /// Predicted Y at new samples (Y_new, X_new), using only kernel
    /// evaluations between the new rows and this problem's training rows.
    MatrixXd predict(const TopologyEstimate& est, const MatrixXd& Y_new, const MatrixXd& X_new) const
    {
        const Index n = data_->nodes();
        if (Y_new.cols() != n || X_new.cols() != n || Y_new.rows() != X_new.rows())
            fail(ErrorKind::invalid_input, "prediction inputs do not match the training nodes");
        MatrixXd pred = X_new * est.b_diag.asDiagonal();
        if (model_.kernel_based()) {
            const DualCoefficients alpha = dual_coefficients(est);
            for (Index i = 0; i < n; ++i) {
                const MatrixXd cross = cross_gram(model_.kernel, Y_new.col(i), data_->Y.col(i));
                for (Index j = 0; j < n; ++j)
                    if (i != j) pred.col(j).noalias() += cross * alpha.block(i, j);
            }
        } else {
            const PolyFeatures f = build_poly_features(Y_new, model_.poly_order());
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j)
                    if (i != j) pred.col(j).noalias() += f.per_node[static_cast<std::size_t>(i)] * est.coefficients.block(i, j);
        }
        return pred;
    }

private:
    TopologyEstimate empty_admm_estimate(const SolverConfig& config) const
    {
        const Dataset& d = *data_;
        VectorXd b(d.nodes());
        for (Index j = 0; j < d.nodes(); ++j) b(j) = d.X.col(j).dot(d.Y.col(j)) / d.X.col(j).squaredNorm();
        EstimateMeta meta;
        meta.solver = "admm";
        meta.iterations = 0;
        meta.converged = true;
        const double loss = 0.5 * (d.Y - d.X * b.asDiagonal()).squaredNorm();
        meta.objective = loss;
        return make_estimate(BlockGrid(d.nodes(), d.samples()), CoefficientKind::dual_alpha, std::move(b),
                             MatrixXd::Zero(d.nodes(), d.nodes()), config, std::move(meta), {loss});
    }

    const Dataset* data_;
    ModelSpec model_;
    std::variant<KernelSet, PolyFeatures> design_;
};

inline TopologyEstimate solve_topology(const Dataset& data, const ModelSpec& model, const SolverConfig& config)
{
    config.validate();
    return PreparedProblem(data, model, config.ridge).solve(config);
}

} // namespace ksem
