#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ksem/error.hpp"

namespace ksem {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct PolynomialKernel
{
    int order = 1;
};

struct GaussianKernel
{
    double bandwidth = 1.0; // sigma^2
};

/// Scalar kernel used to build the per-node Gram matrices.
///
/// polynomial(P): k(x, y) = sum_{p=1..P} (x y)^p
/// gaussian(s2):  k(x, y) = exp(-(x - y)^2 / (2 s2))
class KernelSpec
{
public:
    static KernelSpec polynomial(int order)
    {
        if (order < 1) fail(ErrorKind::configuration, "polynomial kernel order must be >= 1");
        return KernelSpec(PolynomialKernel{order});
    }

    static KernelSpec gaussian(double bandwidth)
    {
        if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
            fail(ErrorKind::configuration, "gaussian kernel bandwidth must be > 0");
        return KernelSpec(GaussianKernel{bandwidth});
    }

    // "poly:P" or "gauss:s2"
    static KernelSpec parse(std::string_view text)
    {
        const auto colon = text.find(':');
        if (colon == std::string_view::npos)
            fail(ErrorKind::configuration, "kernel must be poly:P or gauss:S2, got '" + std::string(text) + "'");
        const auto family = text.substr(0, colon);
        const auto arg = std::string(text.substr(colon + 1));
        try {
            std::size_t used = 0;
            if (family == "poly") {
                const int order = std::stoi(arg, &used);
                if (used == arg.size()) return polynomial(order);
            } else if (family == "gauss") {
                const double bw = std::stod(arg, &used);
                if (used == arg.size()) return gaussian(bw);
            }
        } catch (const std::logic_error&) {
        }
        fail(ErrorKind::configuration, "kernel must be poly:P or gauss:S2, got '" + std::string(text) + "'");
    }

    bool is_polynomial() const { return std::holds_alternative<PolynomialKernel>(kind_); }
    bool is_gaussian() const { return std::holds_alternative<GaussianKernel>(kind_); }
    int order() const { return is_polynomial() ? std::get<PolynomialKernel>(kind_).order : 0; }
    double bandwidth() const { return is_gaussian() ? std::get<GaussianKernel>(kind_).bandwidth : 0.0; }

    double operator()(double x, double y) const
    {
        if (const auto* poly = std::get_if<PolynomialKernel>(&kind_)) {
            const double t = x * y;
            double power = 1.0;
            double sum = 0.0;
            for (int p = 0; p < poly->order; ++p) {
                power *= t;
                sum += power;
            }
            return sum;
        }
        const double d = x - y;
        return std::exp(-d * d / (2.0 * std::get<GaussianKernel>(kind_).bandwidth));
    }

    std::string to_string() const
    {
        if (is_polynomial()) return "poly:" + std::to_string(order());
        char buf[64];
        auto res = std::to_chars(buf, buf + sizeof(buf), bandwidth());
        return "gauss:" + std::string(buf, res.ptr);
    }

    bool operator==(const KernelSpec& other) const { return to_string() == other.to_string(); }

private:
    explicit KernelSpec(std::variant<PolynomialKernel, GaussianKernel> kind) : kind_(kind) {}

    std::variant<PolynomialKernel, GaussianKernel> kind_;
};

inline double eval_kernel(const KernelSpec& spec, double x, double y)
{
    if (!std::isfinite(x) || !std::isfinite(y)) fail(ErrorKind::invalid_input, "kernel arguments must be finite");
    return spec(x, y);
}

/// Gram matrix K[k, l] = k(a_k, b_l).
inline MatrixXd cross_gram(const KernelSpec& spec, const Eigen::Ref<const VectorXd>& a,
                           const Eigen::Ref<const VectorXd>& b)
{
    MatrixXd K(a.size(), b.size());
    for (Index l = 0; l < b.size(); ++l)
        for (Index k = 0; k < a.size(); ++k) K(k, l) = spec(a(k), b(l));
    return K;
}

inline MatrixXd gram(const KernelSpec& spec, const Eigen::Ref<const VectorXd>& samples)
{
    const Index m = samples.size();
    MatrixXd K(m, m);
    for (Index l = 0; l < m; ++l) {
        for (Index k = l; k < m; ++k) {
            const double v = spec(samples(k), samples(l));
            K(k, l) = v;
            K(l, k) = v;
        }
    }
    return K;
}

/// Eigendecomposition of a symmetric PSD matrix with negative eigenvalues
/// clamped to zero. Source of square roots and pseudo-inverses.
class SpectralFactor
{
public:
    SpectralFactor() = default;

    explicit SpectralFactor(const MatrixXd& K)
    {
        if (K.rows() != K.cols()) fail(ErrorKind::invalid_input, "matrix must be square");
        if (!K.allFinite()) fail(ErrorKind::invalid_input, "matrix has non-finite entries");
        const double scale = std::max(1.0, K.cwiseAbs().maxCoeff());
        if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
            fail(ErrorKind::invalid_input, "matrix is not symmetric");

        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(K);
        if (eig.info() != Eigen::Success)
            fail(ErrorKind::numerical_singularity, "symmetric eigendecomposition failed");
        values_ = eig.eigenvalues();
        vectors_ = eig.eigenvectors();
        const double top = values_.size() ? values_.maxCoeff() : 0.0;
        const double bottom = values_.size() ? values_.minCoeff() : 0.0;
        if (bottom < -1e-6 * std::max(top, 0.0))
            fail(ErrorKind::kernel_not_psd, "matrix is not positive semidefinite (min eigenvalue " +
                                                std::to_string(bottom) + ", max " + std::to_string(top) + ")");
        values_ = values_.cwiseMax(0.0);
    }

    Index dim() const { return values_.size(); }
    const VectorXd& values() const { return values_; }
    const MatrixXd& vectors() const { return vectors_; }
    double max_value() const { return values_.size() ? values_.maxCoeff() : 0.0; }

    MatrixXd sqrt() const { return apply([](double s) { return std::sqrt(s); }); }

    // eigenvalues below dim * eps * max are treated as zero
    double cutoff() const
    {
        return static_cast<double>(std::max<Index>(dim(), 1)) * std::numeric_limits<double>::epsilon() *
               max_value();
    }

    MatrixXd pinv() const
    {
        const double cut = cutoff();
        return apply([cut](double s) { return s > cut && s > 0.0 ? 1.0 / s : 0.0; });
    }

    MatrixXd pinv_sqrt() const
    {
        const double cut = cutoff();
        return apply([cut](double s) { return s > cut && s > 0.0 ? 1.0 / std::sqrt(s) : 0.0; });
    }

    /// Sets eigenvalues within the solver's accuracy (16 dim eps max) of
    /// `value` to exactly `value`; returns how many were left unchanged.
    Index snap_to(double value)
    {
        const double tol = 16.0 * cutoff();
        Index others = 0;
        for (Index k = 0; k < dim(); ++k) {
            if (std::abs(values_(k) - value) <= tol)
                values_(k) = value;
            else
                ++others;
        }
        return others;
    }

private:
    template <class F>
    MatrixXd apply(F f) const
    {
        VectorXd mapped = values_.unaryExpr(f);
        return vectors_ * mapped.asDiagonal() * vectors_.transpose();
    }

    VectorXd values_;
    MatrixXd vectors_;
};

/// Symmetric PSD square root S with S * S = K (negative eigenvalues clamped).
inline MatrixXd psd_sqrt(const MatrixXd& K)
{
    return SpectralFactor(K).sqrt();
}

/// Symmetric matrix shift I + V diag(d) V^T, applied in O(M r).
struct ShiftedLowRank
{
    bool active = false;
    double shift = 0.0;
    MatrixXd V; // M x r, orthonormal columns
    VectorXd d;

    // out += F u on contiguous length-M arrays (raw maps: for small M the
    // cost of building Ref blocks rivals the arithmetic)
    void add_product(const double* u, double* out) const
    {
        const Index m = V.rows();
        const Eigen::Map<const VectorXd> uu(u, m);
        Eigen::Map<VectorXd> o(out, m);
        o += shift * uu;
        for (Index k = 0; k < V.cols(); ++k) {
            const Eigen::Map<const VectorXd> v(V.col(k).data(), m);
            o += (d(k) * v.dot(uu)) * v;
        }
    }
};

enum class RidgeMode {
    absolute, // ridge added as-is
    relative, // ridge * trace(K_i) / M added per node
};

/// Per-node Gram matrices K_i (from node i's M samples), their square roots
/// and spectra. Immutable after construction. The concatenation
/// [K_1 ... K_N] and Bdiag(K_1, ..., K_N) are views over the per-node list.
class KernelSet
{
public:
    KernelSet() = default;

    KernelSet(KernelSpec spec, std::vector<MatrixXd> grams, std::vector<double> ridges)
        : spec_(spec), grams_(std::move(grams)), ridges_(std::move(ridges))
    {
        if (ridges_.size() != grams_.size()) fail(ErrorKind::invalid_input, "one ridge per Gram matrix expected");
        sqrts_.reserve(grams_.size());
        spectra_.reserve(grams_.size());
        compact_.resize(grams_.size());
        for (std::size_t i = 0; i < grams_.size(); ++i) {
            spectra_.emplace_back(grams_[i]);
            // low-rank kernels (polynomial) put most of the spectrum exactly at the ridge
            SpectralFactor& sf = spectra_.back();
            const Index rank = sf.snap_to(ridges_[i]);
            if (4 * rank <= sf.dim() && ridges_[i] >= 0.0) {
                ShiftedLowRank& f = compact_[i];
                f.active = true;
                f.shift = std::sqrt(ridges_[i]);
                f.V.resize(sf.dim(), rank);
                f.d.resize(rank);
                for (Index k = 0, c = 0; k < sf.dim(); ++k)
                    if (sf.values()(k) != ridges_[i]) {
                        f.V.col(c) = sf.vectors().col(k);
                        f.d(c++) = std::sqrt(sf.values()(k)) - f.shift;
                    }
            }
            sqrts_.push_back(sf.sqrt());
        }
    }

    Index nodes() const { return static_cast<Index>(grams_.size()); }
    Index samples() const { return grams_.empty() ? 0 : grams_.front().rows(); }
    const KernelSpec& spec() const { return spec_; }

    const MatrixXd& gram(Index i) const { return grams_[static_cast<std::size_t>(i)]; }
    const MatrixXd& sqrt(Index i) const { return sqrts_[static_cast<std::size_t>(i)]; }
    const SpectralFactor& spectrum(Index i) const { return spectra_[static_cast<std::size_t>(i)]; }
    double ridge(Index i) const { return ridges_[static_cast<std::size_t>(i)]; }

    const std::vector<MatrixXd>& grams() const { return grams_; }
    const std::vector<MatrixXd>& sqrts() const { return sqrts_; }
    // K_i^{1/2} in shifted low-rank form where that is cheaper; inactive entries otherwise
    const std::vector<ShiftedLowRank>& compact_sqrts() const { return compact_; }

    // M x NM concatenation [K_1 ... K_N]
    MatrixXd concat() const
    {
        const Index m = samples();
        MatrixXd out(m, m * nodes());
        for (Index i = 0; i < nodes(); ++i) out.middleCols(i * m, m) = gram(i);
        return out;
    }

private:
    KernelSpec spec_ = KernelSpec::polynomial(1);
    std::vector<MatrixXd> grams_;
    std::vector<MatrixXd> sqrts_;
    std::vector<SpectralFactor> spectra_;
    std::vector<double> ridges_;
    std::vector<ShiftedLowRank> compact_;
};

inline KernelSet build_kernel_set(const KernelSpec& spec, const MatrixXd& Y, double ridge,
                                  RidgeMode mode = RidgeMode::absolute)
{
    const Index m = Y.rows();
    if (m < 2) fail(ErrorKind::invalid_input, "kernel construction needs at least 2 samples");
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) fail(ErrorKind::configuration, "ridge must be >= 0");
    if (!Y.allFinite()) fail(ErrorKind::invalid_input, "measurements must be finite");

    std::vector<MatrixXd> grams;
    std::vector<double> ridges;
    grams.reserve(static_cast<std::size_t>(Y.cols()));
    for (Index i = 0; i < Y.cols(); ++i) {
        MatrixXd K = gram(spec, Y.col(i));
        const double added = mode == RidgeMode::relative ? ridge * K.trace() / static_cast<double>(m) : ridge;
        K.diagonal().array() += added;
        grams.push_back(std::move(K));
        ridges.push_back(added);
    }
    return KernelSet(spec, std::move(grams), std::move(ridges));
}

inline constexpr double default_relative_ridge = 1e-8;

inline KernelSet build_kernel_set(const KernelSpec& spec, const MatrixXd& Y)
{
    return build_kernel_set(spec, Y, default_relative_ridge, RidgeMode::relative);
}

/// Solves (C^T C + rho D) v = q with C = [C_1 ... C_n] (each M x M) and
/// D = Bdiag(D_1, ..., D_n) through the matrix inversion lemma:
///
///   v = (1/rho) (D^-1 q - D^-1 C^T (rho I + C D^-1 C^T)^-1 C D^-1 q)
///
/// Only the M x M inner system is factorized; it is built once and reused.
/// D_i^-1 are supplied by the caller (pseudo-inverses for singular blocks).
class WoodburySolver
{
public:
    WoodburySolver(std::vector<const MatrixXd*> coupling, std::vector<const MatrixXd*> d_inverse, double rho)
        : coupling_(std::move(coupling)), d_inverse_(std::move(d_inverse)), rho_(rho)
    {
        if (!(rho > 0.0)) fail(ErrorKind::configuration, "rho must be > 0");
        if (coupling_.size() != d_inverse_.size())
            fail(ErrorKind::invalid_input, "coupling and D blocks differ in count");
        m_ = coupling_.empty() ? 0 : coupling_.front()->rows();
        MatrixXd inner = MatrixXd::Identity(m_, m_) * rho_;
        for (std::size_t b = 0; b < coupling_.size(); ++b) {
            const MatrixXd& C = *coupling_[b];
            const MatrixXd& Dinv = *d_inverse_[b];
            if (C.rows() != m_ || C.cols() != Dinv.rows() || Dinv.rows() != Dinv.cols())
                fail(ErrorKind::invalid_input, "inconsistent Woodbury block dimensions");
            inner.noalias() += C * Dinv * C.transpose();
        }
        inner_.compute(inner);
        if (inner_.info() != Eigen::Success || !inner.allFinite())
            fail(ErrorKind::numerical_singularity,
                 "inner M x M system is singular; increase the ridge");
        const VectorXd diag = inner_.matrixL().toDenseMatrix().diagonal();
        if (m_ > 0 && diag.minCoeff() < std::sqrt(std::numeric_limits<double>::epsilon()) * diag.maxCoeff())
            fail(ErrorKind::numerical_singularity, "inner M x M system is numerically singular; increase the ridge");
    }

    Index unknowns() const
    {
        Index n = 0;
        for (const auto* D : d_inverse_) n += D->rows();
        return n;
    }

    // size of the only factorized system
    Index factorized_dimension() const { return m_; }

    VectorXd solve(const Eigen::Ref<const VectorXd>& q) const
    {
        if (q.size() != unknowns()) fail(ErrorKind::invalid_input, "right-hand side has wrong length");
        VectorXd dq(q.size());
        VectorXd cdq = VectorXd::Zero(m_);
        Index offset = 0;
        for (std::size_t b = 0; b < coupling_.size(); ++b) {
            const Index len = d_inverse_[b]->rows();
            dq.segment(offset, len).noalias() = *d_inverse_[b] * q.segment(offset, len);
            cdq.noalias() += *coupling_[b] * dq.segment(offset, len);
            offset += len;
        }
        const VectorXd s = inner_.solve(cdq);
        VectorXd out(q.size());
        offset = 0;
        for (std::size_t b = 0; b < coupling_.size(); ++b) {
            const Index len = d_inverse_[b]->rows();
            const VectorXd cts = coupling_[b]->transpose() * s;
            out.segment(offset, len).noalias() = dq.segment(offset, len) - *d_inverse_[b] * cts;
            offset += len;
        }
        return out / rho_;
    }

private:
    std::vector<const MatrixXd*> coupling_;
    std::vector<const MatrixXd*> d_inverse_;
    double rho_;
    Index m_ = 0;
    Eigen::LLT<MatrixXd> inner_;
};

/// One-shot form: coupling holds the M x M blocks of K~_j, d_blocks the
/// matching D_j blocks.
inline VectorXd woodbury_solve(std::span<const MatrixXd> coupling, std::span<const MatrixXd> d_blocks,
                               double rho, const Eigen::Ref<const VectorXd>& q)
{
    if (coupling.size() != d_blocks.size()) fail(ErrorKind::invalid_input, "coupling and D blocks differ in count");
    std::vector<MatrixXd> inverses;
    inverses.reserve(d_blocks.size());
    for (const auto& D : d_blocks) inverses.push_back(SpectralFactor(D).pinv());
    std::vector<const MatrixXd*> c_ptrs, d_ptrs;
    for (std::size_t b = 0; b < coupling.size(); ++b) {
        c_ptrs.push_back(&coupling[b]);
        d_ptrs.push_back(&inverses[b]);
    }
    return WoodburySolver(std::move(c_ptrs), std::move(d_ptrs), rho).solve(q);
}

} // namespace ksem
