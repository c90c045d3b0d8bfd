#include "test_util.hpp"

using namespace ksem;
using namespace ksem::test;

namespace {

// P_j = [K_i^{1/2} for i != j, x_j]
MatrixXd design_matrix(const Dataset& d, const KernelSet& ks, Index j)
{
    const Index n = d.nodes(), m = d.samples();
    MatrixXd P(m, (n - 1) * m + 1);
    Index at = 0;
    for (Index i = 0; i < n; ++i)
        if (i != j) {
            P.middleCols(at, m) = ks.sqrt(i);
            at += m;
        }
    P.col(at) = d.X.col(j);
    return P;
}

double column_loss(const Dataset& d, const KernelSet& ks, Index j, const VectorXd& zeta, double b)
{
    const MatrixXd P = design_matrix(d, ks, j);
    VectorXd theta(zeta.size() + 1);
    theta << zeta, b;
    return 0.5 * (P * theta - d.Y.col(j)).squaredNorm();
}

double dense_max_eig(const MatrixXd& P)
{
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(P.transpose() * P).eigenvalues().maxCoeff();
}

struct Instance
{
    Dataset data;
    KernelSet kernels;
};

Instance kernel_instance(std::uint64_t seed, Index samples = 8)
{
    Dataset d = small_planted(seed, samples);
    KernelSet ks = build_kernel_set(KernelSpec::polynomial(2), d.Y);
    return {std::move(d), std::move(ks)};
}

} // namespace

TEST(Lipschitz, DesignHandValues)
{
    EXPECT_NEAR(lipschitz_from_design(MatrixXd::Identity(5, 5)), 1.01, 1e-12);
    EXPECT_NEAR(lipschitz_from_design(2 * MatrixXd::Identity(5, 5)), 4.04, 1e-12);
    EXPECT_EQ(lipschitz_from_design(MatrixXd::Zero(3, 2)), 0.0);
}

TEST(Lipschitz, MatchesDenseEigensolver)
{
    Rng rng(40);
    for (int trial = 0; trial < 100; ++trial) {
        const MatrixXd P = random_matrix(rng, 6, 4);
        EXPECT_NEAR(lipschitz_from_design(P), 1.01 * dense_max_eig(P), 1e-5 * dense_max_eig(P));
    }
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto [d, ks] = kernel_instance(seed);
        for (Index j = 0; j < d.nodes(); ++j) {
            const double want = 1.01 * dense_max_eig(design_matrix(d, ks, j));
            EXPECT_NEAR(lipschitz_constant(ks, d, j), want, 1e-5 * want);
        }
    }
}

TEST(Lipschitz, PowerIterationStaysWithinTrueValueAndTrace)
{
    Rng rng(45);
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 1 + static_cast<Index>(rng.below(9));
        const MatrixXd G = random_psd(rng, n, 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
        const double top = Eigen::SelfAdjointEigenSolver<MatrixXd>(G).eigenvalues().maxCoeff();
        const double v = power_max_eigenvalue(G);
        EXPECT_GE(v, top * (1 - 1e-5));
        EXPECT_LE(v, G.trace() * (1 + 1e-12));
    }
}

TEST(PgGradients, ZeroPointGivesNegatedCorrelations)
{
    const auto [d, ks] = kernel_instance(2);
    const PgState st = make_pg_state(d, ks);
    for (Index j = 0; j < d.nodes(); ++j) {
        const auto [gz, gb] = pg_gradients(st, d, ks, j);
        const MatrixXd P = design_matrix(d, ks, j);
        const VectorXd want = -P.transpose() * d.Y.col(j);
        EXPECT_LT(rel_err(gz, want.head(gz.size())), 1e-12);
        EXPECT_NEAR(gb, -d.Y.col(j).dot(d.X.col(j)), 1e-12 * (1 + std::abs(gb)));
    }
}

TEST(PgGradients, VanishAtLeastSquaresOptimum)
{
    const auto [d, ks] = kernel_instance(3);
    PgState st = make_pg_state(d, ks);
    for (Index j = 0; j < d.nodes(); ++j) {
        const MatrixXd P = design_matrix(d, ks, j);
        const VectorXd theta = P.completeOrthogonalDecomposition().solve(d.Y.col(j));
        st.zeta.set_off_diagonal(j, theta.head(theta.size() - 1));
        st.b_diag(j) = theta(theta.size() - 1);
        const auto [gz, gb] = pg_gradients(st, d, ks, j);
        EXPECT_LT(gz.norm(), 1e-8 * (1 + d.Y.norm()));
        EXPECT_LT(std::abs(gb), 1e-8 * (1 + d.Y.norm()));
    }
}

TEST(PgGradients, MatchCentralDifferences)
{
    Rng rng(41);
    const auto [d, ks] = kernel_instance(4, 6);
    const double h = 1e-5;
    for (int trial = 0; trial < 100; ++trial) {
        const Index j = static_cast<Index>(rng.below(4));
        PgState st = make_pg_state(d, ks);
        const VectorXd z = random_vector(rng, 3 * 6);
        st.zeta.set_off_diagonal(j, z);
        st.b_diag(j) = rng.normal();
        const auto [gz, gb] = pg_gradients(st, d, ks, j);
        VectorXd fd(z.size());
        for (Index k = 0; k < z.size(); ++k) {
            VectorXd up = z, dn = z;
            up(k) += h;
            dn(k) -= h;
            fd(k) = (column_loss(d, ks, j, up, st.b_diag(j)) - column_loss(d, ks, j, dn, st.b_diag(j))) / (2 * h);
        }
        const double fdb = (column_loss(d, ks, j, z, st.b_diag(j) + h) - column_loss(d, ks, j, z, st.b_diag(j) - h)) / (2 * h);
        EXPECT_LT(rel_err(gz, fd), 1e-5);
        EXPECT_NEAR(gb, fdb, 1e-5 * std::max(1.0, std::abs(fdb)));
    }
}

TEST(PgStep, ZeroLambdaIsPlainGradientStep)
{
    Rng rng(42);
    const auto [d, ks] = kernel_instance(5);
    PgState st = make_pg_state(d, ks);
    st.zeta.set_off_diagonal(1, random_vector(rng, 24));
    st.b_diag(1) = 0.3;
    const auto [gz, gb] = pg_gradients(st, d, ks, 1);
    const VectorXd before = st.zeta.stacked_off_diagonal(1);
    SolverConfig cfg;
    cfg.lambda = 0;
    pg_step(st, d, ks, cfg, 1);
    const double L = st.lipschitz(1);
    EXPECT_LT(rel_err(st.zeta.stacked_off_diagonal(1), before - gz / L), 1e-14);
    EXPECT_NEAR(st.b_diag(1), 0.3 - gb / L, 1e-14);
}

TEST(PgStep, HugeLambdaZeroesEveryBlock)
{
    const auto [d, ks] = kernel_instance(6);
    PgState st = make_pg_state(d, ks);
    SolverConfig cfg;
    cfg.lambda = 1e12;
    for (Index j = 0; j < d.nodes(); ++j) {
        pg_step(st, d, ks, cfg, j);
        EXPECT_EQ(st.zeta.column(j), MatrixXd::Zero(8, 4));
        EXPECT_NE(st.b_diag(j), 0.0);
    }
}

TEST(PgStep, SingleStepFromZeroMatchesScriptedSequence)
{
    const auto [d, ks] = kernel_instance(7);
    PgState st = make_pg_state(d, ks);
    SolverConfig cfg;
    cfg.lambda = 0.05;
    const Index j = 2;
    pg_step(st, d, ks, cfg, j);
    const double L = st.lipschitz(j);
    // residual at zero is -y_j
    for (Index i = 0; i < d.nodes(); ++i) {
        if (i == j) continue;
        const VectorXd z = ks.sqrt(i) * d.Y.col(j) / L;
        const double nz = z.norm();
        const VectorXd want = nz > cfg.lambda / L ? VectorXd(z * (1 - cfg.lambda / L / nz)) : VectorXd::Zero(8);
        EXPECT_LT((st.zeta.block(i, j) - want).norm(), 1e-13 * (1 + want.norm()));
    }
    EXPECT_NEAR(st.b_diag(j), d.X.col(j).dot(d.Y.col(j)) / L, 1e-13);
}

TEST(GroupLassoColumn, CompactFactorsMatchDenseFactors)
{
    const auto [d, truth] = planted(4, 2, 32);
    const KernelSet ks = build_kernel_set(KernelSpec::polynomial(2), d.Y);
    Rng rng(41);
    for (Index j : {0, 5, 15}) {
        const GroupLassoColumn dense(ks.sqrts(), j, d.Y.col(j), d.X.col(j));
        const GroupLassoColumn compact(ks.sqrts(), j, d.Y.col(j), d.X.col(j), &ks.compact_sqrts());
        MatrixXd Z = random_matrix(rng, 32, d.nodes());
        Z.col(j).setZero();
        Z.col((j + 1) % d.nodes()).setZero();
        const double b = rng.normal();
        const VectorXd r = dense.residual(Z, b);
        EXPECT_LT(rel_err(compact.residual(Z, b), r), 1e-12);

        const double L = dense.lipschitz();
        for (double lambda : {0.0, 0.1, 1.0}) {
            MatrixXd U1, U2;
            double b1 = 0, b2 = 0, pen = -1;
            dense.prox_step(Z, b, r, L, lambda, U1, b1);
            compact.prox_step(Z, b, r, L, lambda, U2, b2, &pen);
            EXPECT_LT(rel_err(U2, U1), 1e-12);
            EXPECT_DOUBLE_EQ(b1, b2);
            EXPECT_NEAR(pen, dense.penalty(U2), 1e-12 * (1 + pen));
        }
    }
}

TEST(RunPg, ZeroDataStopsAfterOneIteration)
{
    Rng rng(43);
    const Dataset d = validate_dataset(MatrixXd::Zero(6, 3), random_matrix(rng, 6, 3));
    const KernelSet ks = build_kernel_set(KernelSpec::gaussian(1.0), d.Y);
    for (const auto& est : {run_pg(d, ks, SolverConfig{}), run_apg(d, ks, SolverConfig{})}) {
        EXPECT_EQ(est.meta.iterations, 1);
        EXPECT_TRUE(est.meta.converged);
        EXPECT_EQ(est.coefficients.block_norms(), MatrixXd::Zero(3, 3));
        EXPECT_EQ(est.b_diag, VectorXd::Zero(3));
    }
}

TEST(RunPg, ObjectiveNeverIncreases)
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto [d, ks] = kernel_instance(seed);
        SolverConfig cfg;
        cfg.lambda = 0.1;
        cfg.max_iters = 3000;
        const auto trace = run_pg(d, ks, cfg).objective_trace;
        for (std::size_t k = 1; k < trace.size(); ++k)
            ASSERT_LE(trace[k], trace[k - 1] * (1 + 1e-13)) << "seed " << seed << " iteration " << k;
    }
}

TEST(RunPg, SurvivingBlocksShrinkAlongLambda)
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto [d, ks] = kernel_instance(seed);
        SolverConfig cfg;
        cfg.tol = 1e-10;
        cfg.max_iters = 100000;
        cfg.tau = 1e-9;
        long previous = std::numeric_limits<long>::max();
        for (double lambda : {0.01, 0.1, 1.0}) {
            cfg.lambda = lambda;
            const long alive = run_apg(d, ks, cfg).adjacency.sum();
            EXPECT_LE(alive, previous) << "seed " << seed << " lambda " << lambda;
            previous = alive;
        }
    }
}

TEST(RunPg, FixedPointSatisfiesBlockOptimality)
{
    const auto [d, ks] = kernel_instance(8);
    SolverConfig cfg;
    cfg.lambda = 0.1;
    cfg.tol = 1e-14;
    cfg.max_iters = 200000;
    const TopologyEstimate est = run_apg(d, ks, cfg);
    PgState st = make_pg_state(d, ks);
    st.zeta = est.coefficients;
    st.b_diag = est.b_diag;
    const double scale = 1 + d.Y.norm();
    for (Index j = 0; j < d.nodes(); ++j) {
        const auto [gz, gb] = pg_gradients(st, d, ks, j);
        EXPECT_LT(std::abs(gb), 1e-5 * scale);
        Index at = 0;
        for (Index i = 0; i < d.nodes(); ++i) {
            if (i == j) continue;
            const VectorXd g = gz.segment(at, 8);
            const VectorXd z = st.zeta.block(i, j);
            if (z.norm() > 0)
                EXPECT_LT((g + cfg.lambda * z / z.norm()).norm(), 1e-5 * scale) << i << "," << j;
            else
                EXPECT_LE(g.norm(), cfg.lambda * (1 + 1e-5)) << i << "," << j;
            at += 8;
        }
    }
}

TEST(RunApg, FirstStepIsAPgStep)
{
    const auto [d, ks] = kernel_instance(9);
    SolverConfig cfg;
    cfg.lambda = 0.05;
    PgState pg = make_pg_state(d, ks);
    ApgState apg = make_apg_state(d, ks);
    for (Index j = 0; j < d.nodes(); ++j) {
        pg_step(pg, d, ks, cfg, j);
        apg_step(apg, d, ks, cfg, j);
        EXPECT_EQ(pg.zeta.column(j), apg.zeta.column(j));
        EXPECT_EQ(pg.b_diag(j), apg.b_diag(j));
    }
    advance_beta(apg);
    EXPECT_EQ(apg.beta_prev, 1.0);
    EXPECT_NEAR(apg.beta, (1 + std::sqrt(5.0)) / 2, 1e-15);

    cfg.max_iters = 1;
    EXPECT_DOUBLE_EQ(run_pg(d, ks, cfg).meta.objective, run_apg(d, ks, cfg).meta.objective);
}

TEST(RunApg, SteppedStateMatchesSolverLoop)
{
    const auto [d, ks] = kernel_instance(10);
    SolverConfig cfg;
    cfg.lambda = 0.05;
    cfg.max_iters = 30;
    cfg.tol = 1e-300;
    ApgState st = make_apg_state(d, ks);
    for (int k = 0; k < cfg.max_iters; ++k) {
        for (Index j = 0; j < d.nodes(); ++j) apg_step(st, d, ks, cfg, j);
        advance_beta(st);
    }
    // the solver returns its best iterate, which is the last one unless an uptick occurred
    const TopologyEstimate est = run_apg(d, ks, cfg);
    EXPECT_LE(est.meta.objective, zeta_objective(d, ks, st.zeta, st.b_diag, cfg.lambda) * (1 + 1e-12));
}

TEST(RunApg, AgreesWithPg)
{
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto [d, ks] = kernel_instance(seed);
        SolverConfig cfg;
        cfg.lambda = 0.1;
        cfg.tol = 1e-12;
        cfg.max_iters = 400000;
        const double pg = run_pg(d, ks, cfg).meta.objective;
        const double apg = run_apg(d, ks, cfg).meta.objective;
        EXPECT_NEAR(pg, apg, 1e-4 * apg) << "seed " << seed;
    }
}

TEST(RunApg, ReachesGapNoSlowerThanPg)
{
    const auto [d, ks] = kernel_instance(11);
    SolverConfig cfg;
    cfg.lambda = 0.1;
    cfg.tol = 1e-14;
    cfg.max_iters = 400000;
    const auto pg = run_pg(d, ks, cfg).objective_trace;
    const auto apg = run_apg(d, ks, cfg).objective_trace;
    const double opt = std::min(*std::min_element(pg.begin(), pg.end()), *std::min_element(apg.begin(), apg.end()));
    auto first_within = [&](const std::vector<double>& t) {
        for (std::size_t k = 0; k < t.size(); ++k)
            if (t[k] - opt <= 1e-6 * std::abs(opt)) return k;
        return t.size();
    };
    EXPECT_LE(first_within(apg), first_within(pg));
}

TEST(RunApg, BetaRecursionAndGrowth)
{
    double beta = 1.0;
    for (int k = 1; k <= 10000; ++k) {
        const double next = next_beta(beta);
        EXPECT_NEAR(next * next - next, beta * beta, 1e-9 * beta * beta);
        EXPECT_GE(next, (k + 1) / 2.0);
        beta = next;
    }
}

TEST(ZetaAlpha, RoundTripOnFullRankKernels)
{
    Rng rng(44);
    const Dataset d = random_dataset(rng, 5, 3);
    const KernelSet ks = build_kernel_set(KernelSpec::gaussian(1.0), d.Y, 0.1);
    BlockGrid a(3, 5);
    for (Index j = 0; j < 3; ++j) a.set_off_diagonal(j, random_vector(rng, 10));
    const BlockGrid back = zeta_to_alpha(ks, alpha_to_zeta(ks, a));
    for (Index j = 0; j < 3; ++j) EXPECT_LT(rel_err(back.column(j), a.column(j)), 1e-10);
    EXPECT_NEAR(zeta_objective(d, ks, alpha_to_zeta(ks, a), VectorXd::Ones(3), 0.4),
                objective_value(d, ks, a, VectorXd::Ones(3), 0.4), 1e-9);
}
