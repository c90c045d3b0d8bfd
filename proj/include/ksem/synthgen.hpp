#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>

#include "ksem/datamodel.hpp"
#include "ksem/kernel.hpp"
#include "ksem/polysem.hpp"
#include "ksem/rng.hpp"

namespace ksem {

inline constexpr Index max_generated_nodes = 4096;

/// 4 x 4 Kronecker seed used by the reference benchmark.
inline MatrixXi default_seed_matrix()
{
    MatrixXi S(4, 4);
    S << 0, 0, 1, 1,
         0, 0, 1, 1,
         0, 1, 0, 1,
         1, 0, 1, 0;
    return S;
}

inline MatrixXi kronecker_power(const MatrixXi& S0, int k)
{
    if (k < 1) fail(ErrorKind::configuration, "Kronecker power must be >= 1");
    if (S0.rows() != S0.cols() || S0.rows() == 0) fail(ErrorKind::configuration, "seed matrix must be square");
    if (((S0.array() != 0) && (S0.array() != 1)).any()) fail(ErrorKind::configuration, "seed matrix must be binary");
    double dim = 1.0;
    for (int p = 0; p < k; ++p) dim *= static_cast<double>(S0.rows());
    if (dim > static_cast<double>(max_generated_nodes))
        fail(ErrorKind::size, "Kronecker power yields " + std::to_string(static_cast<long long>(dim)) +
                                  " nodes (limit " + std::to_string(max_generated_nodes) + ")");
    MatrixXi S = S0;
    for (int p = 1; p < k; ++p) {
        MatrixXi next(S.rows() * S0.rows(), S.cols() * S0.cols());
        for (Index a = 0; a < S.rows(); ++a)
            for (Index b = 0; b < S.cols(); ++b)
                next.block(a * S0.rows(), b * S0.cols(), S0.rows(), S0.cols()) = S(a, b) * S0;
        S = std::move(next);
    }
    return S;
}

/// a_ij ~ Bernoulli(rate * s_ij), drawn row-major; diagonal forced to 0.
inline MatrixXi sample_graph(const MatrixXi& S, double rate, Rng& rng)
{
    if (!(rate > 0.0 && rate <= 1.0)) fail(ErrorKind::configuration, "edge rate must lie in (0, 1]");
    MatrixXi A = MatrixXi::Zero(S.rows(), S.cols());
    for (Index i = 0; i < S.rows(); ++i)
        for (Index j = 0; j < S.cols(); ++j) {
            const bool draw = rng.bernoulli(rate * S(i, j));
            if (i != j) A(i, j) = draw ? 1 : 0;
        }
    return A;
}

struct PolynomialGenerator
{
    int order = 2;
};

struct SynthConfig
{
    MatrixXi seed_matrix = default_seed_matrix();
    int kron_power = 3;
    double edge_prob_scale = 0.3;
    Index samples = 128;
    std::variant<KernelSpec, PolynomialGenerator> generator = KernelSpec::polynomial(2);
    double coeff_lo = -0.2;
    double coeff_hi = 0.2;
    double noise_std = 0.01;
    double b_min = 0.05;
    int b_max_retries = 1000;
    std::uint64_t rng_seed = 0;

    bool kernel_generator() const { return std::holds_alternative<KernelSpec>(generator); }

    std::string generator_string() const
    {
        if (const auto* k = std::get_if<KernelSpec>(&generator)) return "kernel:" + k->to_string();
        return "polysem:" + std::to_string(std::get<PolynomialGenerator>(generator).order);
    }

    void validate() const
    {
        if (seed_matrix.rows() != seed_matrix.cols() || seed_matrix.rows() == 0)
            fail(ErrorKind::configuration, "seed matrix must be square and non-empty");
        if (((seed_matrix.array() != 0) && (seed_matrix.array() != 1)).any())
            fail(ErrorKind::configuration, "seed matrix must be binary");
        if (kron_power < 1) fail(ErrorKind::configuration, "Kronecker power must be >= 1");
        if (!(edge_prob_scale > 0.0 && edge_prob_scale <= 1.0))
            fail(ErrorKind::configuration, "edge rate must lie in (0, 1]");
        if (samples < 2) fail(ErrorKind::configuration, "need at least 2 samples");
        if (!(coeff_lo <= coeff_hi)) fail(ErrorKind::configuration, "coefficient range is empty");
        if (!(noise_std >= 0.0)) fail(ErrorKind::configuration, "noise std must be >= 0");
        if (!(b_min > 0.0)) fail(ErrorKind::configuration, "b_min must be > 0");
        if (const auto* p = std::get_if<PolynomialGenerator>(&generator); p && p->order < 1)
            fail(ErrorKind::configuration, "polynomial generator order must be >= 1");
    }
};

struct GroundTruth
{
    MatrixXi adjacency;
    BlockGrid coefficients; // alpha_ij (kernel generator) or w_ij (polynomial generator)
    CoefficientKind kind = CoefficientKind::dual_alpha;
    VectorXd b_diag;
    MatrixXd noise;
};

/// Endogenous part of the model: column j = sum_{i != j} F_i c_ij.
inline MatrixXd planted_signal(const std::vector<MatrixXd>& factors, const BlockGrid& coeffs)
{
    const Index n = coeffs.nodes();
    MatrixXd out = MatrixXd::Zero(factors.front().rows(), n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
            if (i != j && (coeffs.block(i, j).array() != 0.0).any())
                out.col(j).noalias() += factors[static_cast<std::size_t>(i)] * coeffs.block(i, j);
    return out;
}

/// Draws Y ~ N(0, 1), coefficients on the sampled edges, B and E, then solves
/// X = (Y - K~ W - E) B^-1 so the planted parameters reproduce Y.
/// Independent streams: 1 graph, 2 Y, 3 coefficients, 4 B, 5 noise. Y is
/// filled sample by sample so a smaller M yields a prefix of a larger one.
inline std::pair<Dataset, GroundTruth> generate_dataset(const SynthConfig& config)
{
    config.validate();
    const Rng root(config.rng_seed);
    Rng graph_rng = root.split(1);
    Rng y_rng = root.split(2);
    Rng coeff_rng = root.split(3);
    Rng b_rng = root.split(4);
    Rng noise_rng = root.split(5);

    GroundTruth truth;
    truth.adjacency = sample_graph(kronecker_power(config.seed_matrix, config.kron_power), config.edge_prob_scale,
                                   graph_rng);
    const Index n = truth.adjacency.rows();
    const Index m = config.samples;

    MatrixXd Y(m, n);
    for (Index s = 0; s < m; ++s)
        for (Index i = 0; i < n; ++i) Y(s, i) = y_rng.normal();

    std::vector<MatrixXd> factors;
    Index block = 0;
    if (const auto* spec = std::get_if<KernelSpec>(&config.generator)) {
        const KernelSet kernels = build_kernel_set(*spec, Y, 0.0);
        factors = kernels.grams();
        block = m;
        truth.kind = CoefficientKind::dual_alpha;
    } else {
        factors = build_poly_features(Y, std::get<PolynomialGenerator>(config.generator).order).per_node;
        block = factors.front().cols();
        truth.kind = CoefficientKind::polynomial;
    }

    truth.coefficients = BlockGrid(n, block);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) {
            if (truth.adjacency(i, j) == 0) continue;
            auto c = truth.coefficients.block(i, j);
            for (Index k = 0; k < block; ++k) c(k) = coeff_rng.uniform(config.coeff_lo, config.coeff_hi);
        }

    truth.b_diag.resize(n);
    for (Index j = 0; j < n; ++j) {
        double b = b_rng.normal();
        int tries = 0;
        while (std::abs(b) < config.b_min) {
            if (++tries > config.b_max_retries)
                fail(ErrorKind::generation, "could not draw |b_jj| >= b_min within the retry budget");
            b = b_rng.normal();
        }
        truth.b_diag(j) = b;
    }

    truth.noise.resize(m, n);
    for (Index s = 0; s < m; ++s)
        for (Index i = 0; i < n; ++i) truth.noise(s, i) = config.noise_std * noise_rng.normal();

    MatrixXd X = Y - planted_signal(factors, truth.coefficients) - truth.noise;
    for (Index j = 0; j < n; ++j) X.col(j) /= truth.b_diag(j);

    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) names.push_back("n" + std::to_string(i));
    return {validate_dataset(std::move(Y), std::move(X), std::move(names)), std::move(truth)};
}

/// ||Y - K~ W - X B - E||_F for the generating model.
inline double reconstruction_error(const Dataset& data, const GroundTruth& truth, const SynthConfig& config)
{
    std::vector<MatrixXd> factors;
    if (const auto* spec = std::get_if<KernelSpec>(&config.generator))
        factors = build_kernel_set(*spec, data.Y, 0.0).grams();
    else
        factors = build_poly_features(data.Y, std::get<PolynomialGenerator>(config.generator).order).per_node;
    return (data.Y - planted_signal(factors, truth.coefficients) - data.X * truth.b_diag.asDiagonal() - truth.noise)
        .norm();
}

} // namespace ksem
