#include "test_util.hpp"

using namespace ksem;
using namespace ksem::test;

TEST(RngStream, MatchesEngineSeededWithMixedSeed)
{
    Rng r(1234);
    std::mt19937_64 ref(Rng::mix(1234));
    for (int k = 0; k < 100; ++k) EXPECT_EQ(r.next_u64(), ref());
}

TEST(RngStream, SplitsAreDeterministicAndDistinct)
{
    const Rng root(7);
    Rng a = root.split(1), b = root.split(1), c = root.split(2);
    for (int k = 0; k < 10; ++k) {
        const auto va = a.next_u64();
        EXPECT_EQ(va, b.next_u64());
        EXPECT_NE(va, c.next_u64());
    }
    EXPECT_NE(Rng(7).split(1).next_u64(), Rng(8).split(1).next_u64());
}

TEST(RngStream, DrawMoments)
{
    Rng r(3);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    for (int k = 0; k < n; ++k) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
        const auto i = r.below(7);
        ASSERT_LT(i, 7u);
    }
    EXPECT_NEAR(su / n, 0.5, 0.005);
    EXPECT_NEAR(sn / n, 0.0, 0.01);
    EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

TEST(Kronecker, PowersOfReferenceSeed)
{
    const MatrixXi S0 = default_seed_matrix();
    EXPECT_EQ(kronecker_power(S0, 1), S0);
    const MatrixXi S2 = kronecker_power(S0, 2);
    ASSERT_EQ(S2.rows(), 16);
    EXPECT_EQ(S2(0, 2), 0);
    for (Index a = 0; a < 16; ++a)
        for (Index b = 0; b < 16; ++b) EXPECT_EQ(S2(a, b), S0(a / 4, b / 4) * S0(a % 4, b % 4));
    EXPECT_EQ(kronecker_power(S0, 3).rows(), 64);
    EXPECT_EQ(kronecker_power(S0, 3).sum(), S0.sum() * S0.sum() * S0.sum());
}

TEST(Kronecker, Errors)
{
    expect_error(ErrorKind::size, [] { kronecker_power(default_seed_matrix(), 7); });
    EXPECT_NO_THROW(kronecker_power(default_seed_matrix(), 6));
    expect_error(ErrorKind::configuration, [] { kronecker_power(default_seed_matrix(), 0); });
    expect_error(ErrorKind::configuration, [] { kronecker_power(MatrixXi::Constant(2, 2, 2), 1); });
}

TEST(SampleGraph, DegenerateRates)
{
    Rng rng(1);
    EXPECT_EQ(sample_graph(MatrixXi::Zero(5, 5), 1.0, rng), MatrixXi::Zero(5, 5));
    const MatrixXi full = MatrixXi::Ones(5, 5) - MatrixXi::Identity(5, 5);
    EXPECT_EQ(sample_graph(full, 1.0, rng), full);
    EXPECT_EQ(sample_graph(MatrixXi::Ones(5, 5), 1.0, rng), full);
    expect_error(ErrorKind::configuration, [&] { sample_graph(full, 0.0, rng); });
    expect_error(ErrorKind::configuration, [&] { sample_graph(full, 1.5, rng); });
}

TEST(SampleGraph, EntryFrequency)
{
    Rng rng(2);
    MatrixXi S = MatrixXi::Zero(2, 2);
    S(0, 1) = 1;
    int hits = 0;
    for (int k = 0; k < 10000; ++k) hits += sample_graph(S, 0.3, rng)(0, 1);
    EXPECT_NEAR(hits / 10000.0, 0.3, 0.02);
}

TEST(SampleGraph, DensityChiSquare)
{
    // 1-dof statistic on the total edge count of 100 graphs; 6.635 is the 99% quantile
    Rng rng(3);
    const MatrixXi S = kronecker_power(default_seed_matrix(), 2);
    double expected = 0, variance = 0;
    for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 16; ++j)
            if (i != j) {
                const double p = 0.3 * S(i, j);
                expected += 100 * p;
                variance += 100 * p * (1 - p);
            }
    long observed = 0;
    for (int g = 0; g < 100; ++g) observed += sample_graph(S, 0.3, rng).sum();
    const double chi2 = (observed - expected) * (observed - expected) / variance;
    EXPECT_LT(chi2, 6.635);
}

TEST(GenerateDataset, ReproducesItsOwnModel)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        for (int variant = 0; variant < 3; ++variant) {
            SynthConfig sc;
            sc.kron_power = 2;
            sc.samples = 24;
            sc.rng_seed = seed;
            if (variant == 1) sc.generator = KernelSpec::gaussian(0.01);
            if (variant == 2) sc.generator = PolynomialGenerator{3};
            const auto [d, truth] = generate_dataset(sc);
            EXPECT_LT(reconstruction_error(d, truth, sc), 1e-10) << seed << "/" << variant;
            EXPECT_EQ(truth.adjacency.diagonal(), Eigen::VectorXi::Zero(16));
            EXPECT_TRUE(((truth.adjacency.array() == 0) || (truth.adjacency.array() == 1)).all());
            EXPECT_TRUE((truth.b_diag.array().abs() >= sc.b_min).all());
            for (Index i = 0; i < 16; ++i)
                for (Index j = 0; j < 16; ++j)
                    if (truth.adjacency(i, j) == 0) EXPECT_EQ(truth.coefficients.block(i, j).norm(), 0.0);
            EXPECT_EQ(truth.kind, variant == 2 ? CoefficientKind::polynomial : CoefficientKind::dual_alpha);
            EXPECT_EQ(d.node_names.front(), "n0");
        }
}

TEST(GenerateDataset, NoiselessPlantedObjectiveIsRegularizerOnly)
{
    SynthConfig sc;
    sc.kron_power = 2;
    sc.samples = 16;
    sc.noise_std = 0;
    sc.rng_seed = 5;
    const auto [d, truth] = generate_dataset(sc);
    const KernelSet ks = build_kernel_set(KernelSpec::polynomial(2), d.Y, 0.0);
    double reg = 0;
    for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 16; ++j)
            if (i != j) reg += (ks.sqrt(i) * truth.coefficients.block(i, j)).norm();
    const double lambda = 1e-3;
    EXPECT_NEAR(objective_value(d, ks, truth.coefficients, truth.b_diag, lambda), lambda * reg, 1e-16 + 1e-9 * lambda * reg);
}

TEST(GenerateDataset, DeterministicPerSeed)
{
    SynthConfig sc;
    sc.kron_power = 2;
    sc.samples = 20;
    sc.rng_seed = 77;
    const auto [d1, t1] = generate_dataset(sc);
    const auto [d2, t2] = generate_dataset(sc);
    EXPECT_EQ(d1.Y, d2.Y);
    EXPECT_EQ(d1.X, d2.X);
    EXPECT_EQ(t1.adjacency, t2.adjacency);
    EXPECT_TRUE(t1.coefficients == t2.coefficients);
    EXPECT_EQ(t1.b_diag, t2.b_diag);
    sc.rng_seed = 78;
    EXPECT_NE(generate_dataset(sc).first.Y, d1.Y);
}

TEST(GenerateDataset, SmallerSampleCountIsPrefix)
{
    SynthConfig sc;
    sc.kron_power = 2;
    sc.rng_seed = 9;
    sc.samples = 16;
    const auto [small, ts] = generate_dataset(sc);
    sc.samples = 64;
    const auto [large, tl] = generate_dataset(sc);
    EXPECT_EQ(small.Y, large.Y.topRows(16));
    EXPECT_EQ(ts.adjacency, tl.adjacency);
    EXPECT_EQ(ts.b_diag, tl.b_diag);
}

TEST(GenerateDataset, FrozenStreamLayout)
{
    // guards the published stream layout against accidental changes
    SynthConfig sc;
    sc.kron_power = 2;
    sc.samples = 8;
    sc.rng_seed = 2024;
    const auto [d, truth] = generate_dataset(sc);
    EXPECT_EQ(truth.adjacency.sum(), 11);
    EXPECT_NEAR(d.Y(0, 0), -0.71867306076695814, 1e-15);
    EXPECT_NEAR(truth.b_diag(0), 0.89643070345360254, 1e-15);
}

TEST(SynthConfig, Validation)
{
    auto bad = [](auto mutate) {
        SynthConfig sc;
        mutate(sc);
        expect_error(ErrorKind::configuration, [&] { sc.validate(); });
    };
    bad([](SynthConfig& s) { s.edge_prob_scale = 0; });
    bad([](SynthConfig& s) { s.samples = 1; });
    bad([](SynthConfig& s) { s.coeff_lo = 1; });
    bad([](SynthConfig& s) { s.noise_std = -1; });
    bad([](SynthConfig& s) { s.b_min = 0; });
    bad([](SynthConfig& s) { s.generator = PolynomialGenerator{0}; });
    bad([](SynthConfig& s) { s.seed_matrix = MatrixXi::Ones(2, 3); });

    SynthConfig sc;
    sc.kron_power = 1;
    sc.b_min = 50;
    sc.b_max_retries = 3;
    expect_error(ErrorKind::generation, [&] { generate_dataset(sc); });
}
