#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ksem/datamodel.hpp"
#include "ksem/parallel.hpp"
#include "ksem/rng.hpp"
#include "ksem/solvers.hpp"
#include "ksem/synthgen.hpp"

namespace ksem {

namespace detail {

inline void check_adjacency(const MatrixXi& A, const char* what)
{
    if (A.rows() != A.cols()) fail(ErrorKind::validation, std::string(what) + " must be square");
    for (Index j = 0; j < A.cols(); ++j)
        for (Index i = 0; i < A.rows(); ++i) {
            if (A(i, j) != 0 && A(i, j) != 1)
                fail(ErrorKind::validation, std::string(what) + " is not binary at (" + std::to_string(i) + ", " +
                                                std::to_string(j) + ")");
            if (i == j && A(i, j) != 0)
                fail(ErrorKind::validation, std::string(what) + " has a self-loop at node " + std::to_string(i));
        }
}

} // namespace detail

/// Edge identification error rate in percent: ||A - A_hat||_0 / (N (N - 1)) * 100.
inline double eier(const MatrixXi& A_true, const MatrixXi& A_hat)
{
    if (A_true.rows() != A_hat.rows() || A_true.cols() != A_hat.cols())
        fail(ErrorKind::validation, "adjacency matrices differ in size");
    detail::check_adjacency(A_true, "true adjacency");
    detail::check_adjacency(A_hat, "estimated adjacency");
    const Index n = A_true.rows();
    if (n < 2) fail(ErrorKind::validation, "need at least 2 nodes");
    const auto wrong = (A_true.array() != A_hat.array()).count();
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(n * (n - 1));
}

struct RocPoint
{
    double p_fa = 0.0;
    double p_d = 0.0;
    double threshold = 0.0;
};

struct RocCurve
{
    std::vector<RocPoint> points; // threshold descending
    double auc = 0.0;
};

/// Sweeps tau over {+inf} U unique scores U {0} (descending) on the
/// off-diagonal entries; edge iff score >= tau. AUC by the trapezoid rule.
inline RocCurve roc_curve(const MatrixXd& scores, const MatrixXi& A_true)
{
    if (scores.rows() != A_true.rows() || scores.cols() != A_true.cols())
        fail(ErrorKind::validation, "scores and truth differ in size");
    detail::check_adjacency(A_true, "true adjacency");
    const Index n = A_true.rows();
    std::vector<std::pair<double, int>> entries;
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) {
            if (i == j) continue;
            const double s = scores(i, j);
            if (!(s >= 0.0) || !std::isfinite(s)) fail(ErrorKind::validation, "scores must be finite and >= 0");
            entries.emplace_back(s, A_true(i, j));
        }
    const long positives = std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.second == 1; });
    const long negatives = static_cast<long>(entries.size()) - positives;
    if (positives == 0 || negatives == 0)
        fail(ErrorKind::degenerate_truth, "ROC needs at least one edge and one non-edge");

    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    long tp = 0, fp = 0;
    std::size_t k = 0;
    while (k < entries.size()) {
        const double t = entries[k].first;
        while (k < entries.size() && entries[k].first == t) {
            (entries[k].second ? tp : fp) += 1;
            ++k;
        }
        roc.points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                              static_cast<double>(tp) / static_cast<double>(positives), t});
    }
    if (roc.points.back().threshold != 0.0) roc.points.push_back({1.0, 1.0, 0.0});

    for (std::size_t p = 1; p < roc.points.size(); ++p) {
        const auto& a = roc.points[p - 1];
        const auto& b = roc.points[p];
        roc.auc += (b.p_fa - a.p_fa) * (a.p_d + b.p_d) / 2.0;
    }
    return roc;
}

/// Threshold minimizing EIER over every distinct cut of the scores; ties go
/// to the larger threshold (sparser graph).
inline std::pair<double, double> best_threshold_eier(const MatrixXd& scores, const MatrixXi& A_true)
{
    detail::check_adjacency(A_true, "true adjacency");
    std::vector<double> cuts{std::numeric_limits<double>::infinity()};
    for (Index j = 0; j < scores.cols(); ++j)
        for (Index i = 0; i < scores.rows(); ++i)
            if (i != j) cuts.push_back(scores(i, j));
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double best_tau = cuts.front();
    double best = std::numeric_limits<double>::infinity();
    for (double t : cuts) {
        const double e = eier(A_true, edges_from_scores(scores, t));
        if (e < best) {
            best = e;
            best_tau = t;
        }
    }
    return {best_tau, best};
}

struct LambdaPathEntry
{
    double lambda = 0.0;
    bool ok = false;
    std::string error;
    MatrixXi adjacency;
    MatrixXd scores;
    TopologyEstimate estimate;
};

/// One solve per lambda in ascending order, each warm-started from the
/// previous solution. A failing lambda is recorded and the path continues.
inline std::vector<LambdaPathEntry> lambda_path(const PreparedProblem& problem, std::vector<double> grid,
                                                const SolverConfig& base)
{
    if (grid.empty()) fail(ErrorKind::configuration, "lambda grid is empty");
    for (double l : grid)
        if (!(l >= 0.0) || !std::isfinite(l)) fail(ErrorKind::configuration, "lambda grid values must be >= 0");
    std::sort(grid.begin(), grid.end());
    std::vector<LambdaPathEntry> path;
    std::optional<WarmStart> warm;
    for (double l : grid) {
        LambdaPathEntry entry;
        entry.lambda = l;
        SolverConfig cfg = base;
        cfg.lambda = l;
        try {
            entry.estimate = problem.solve(cfg, warm ? &*warm : nullptr);
            entry.adjacency = entry.estimate.adjacency;
            entry.scores = entry.estimate.scores;
            entry.ok = true;
            warm = WarmStart{entry.estimate.coefficients, entry.estimate.b_diag};
        } catch (const Error& e) {
            entry.error = e.what();
        }
        path.push_back(std::move(entry));
    }
    return path;
}

inline std::vector<LambdaPathEntry> lambda_path(const Dataset& data, const ModelSpec& model,
                                                const std::vector<double>& grid, const SolverConfig& base)
{
    const PreparedProblem problem(data, model, base.ridge);
    return lambda_path(problem, grid, base);
}

/// Row indices of each fold from a seeded shuffle; fold f takes positions f, f + k, ...
inline std::vector<std::vector<Index>> make_folds(Index samples, int folds, std::uint64_t seed)
{
    if (folds < 2) fail(ErrorKind::configuration, "need at least 2 folds");
    if (samples < folds) fail(ErrorKind::configuration, "fewer samples than folds");
    std::vector<Index> order(static_cast<std::size_t>(samples));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng = Rng(seed).split(0xcf);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(folds));
    for (std::size_t p = 0; p < order.size(); ++p) out[p % out.size()].push_back(order[p]);
    for (auto& f : out) {
        if (f.size() < 2) fail(ErrorKind::configuration, "each fold needs at least 2 samples");
        if (samples - static_cast<Index>(f.size()) < 2) fail(ErrorKind::configuration, "training split too small");
        std::sort(f.begin(), f.end());
    }
    return out;
}

inline MatrixXd take_rows(const MatrixXd& M, const std::vector<Index>& rows)
{
    MatrixXd out(static_cast<Index>(rows.size()), M.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = M.row(rows[r]);
    return out;
}

struct CvResult
{
    double best_lambda = 0.0;
    std::vector<double> lambdas; // ascending, deduplicated
    MatrixXd fold_scores;        // lambdas x folds
    VectorXd mean;
};

/// k-fold CV over samples. Train kernels and features come from the training
/// rows only; held-out score is 1/2 ||Y_hold - prediction||_F^2.
/// Ties in the mean score go to the larger lambda.
inline CvResult cross_validate_lambda(const Dataset& data, const ModelSpec& model, std::vector<double> grid,
                                      int folds, const SolverConfig& base, std::uint64_t seed = 0)
{
    if (grid.empty()) fail(ErrorKind::configuration, "lambda grid is empty");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const auto split = make_folds(data.samples(), folds, seed);

    CvResult cv;
    cv.lambdas = grid;
    cv.fold_scores = MatrixXd::Zero(static_cast<Index>(grid.size()), folds);
    parallel_for(split.size(), base.jobs, [&](std::size_t f) {
        std::vector<Index> train;
        std::vector<bool> held(static_cast<std::size_t>(data.samples()), false);
        for (Index r : split[f]) held[static_cast<std::size_t>(r)] = true;
        for (Index r = 0; r < data.samples(); ++r)
            if (!held[static_cast<std::size_t>(r)]) train.push_back(r);
        const Dataset train_set = validate_dataset(take_rows(data.Y, train), take_rows(data.X, train), data.node_names);
        const MatrixXd Y_hold = take_rows(data.Y, split[f]);
        const MatrixXd X_hold = take_rows(data.X, split[f]);
        const PreparedProblem problem(train_set, model, base.ridge);
        SolverConfig cfg = base;
        cfg.jobs = 1;
        const auto path = lambda_path(problem, grid, cfg);
        for (std::size_t g = 0; g < path.size(); ++g) {
            const double score = path[g].ok ? 0.5 * (Y_hold - problem.predict(path[g].estimate, Y_hold, X_hold)).squaredNorm()
                                             : std::numeric_limits<double>::infinity();
            cv.fold_scores(static_cast<Index>(g), static_cast<Index>(f)) = score;
        }
    });
    cv.mean = cv.fold_scores.rowwise().mean();
    Index best = 0;
    for (Index g = 0; g < cv.mean.size(); ++g)
        if (cv.mean(g) <= cv.mean(best)) best = g;
    cv.best_lambda = cv.lambdas[static_cast<std::size_t>(best)];
    return cv;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct BenchmarkConfig
{
    SynthConfig synth;                 // samples overwritten per ratio
    std::vector<double> ratios{1, 2, 4};
    int runs = 100; // 20 is enough for desk-scale trends
    std::vector<ModelSpec> methods;
    std::vector<double> lambda_fractions{0.003, 0.01, 0.03, 0.1, 0.2, 0.3, 0.5}; // of each instance's lambda_max
    SolverConfig solver;               // lambda and tau are set by the harness
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

struct BenchmarkArm
{
    std::string method;
    double ratio = 0.0;
    Index samples = 0;
    double lambda_fraction = 0.0; // oracle-selected
    std::vector<double> eier;     // per run at the selected fraction, NaN for failed runs
    double mean = 0.0;
    double sd = 0.0;
    int failures = 0;
};

inline std::uint64_t benchmark_instance_seed(std::uint64_t seed, int run)
{
    return Rng::mix(seed ^ Rng::mix(0xbe7c4ULL + static_cast<std::uint64_t>(run)));
}

/// Instance for (ratio, run): the same seed is used for every ratio and method.
inline std::pair<Dataset, GroundTruth> benchmark_instance(const BenchmarkConfig& cfg, double ratio, int run)
{
    SynthConfig sc = cfg.synth;
    const double nodes = std::pow(static_cast<double>(sc.seed_matrix.rows()), sc.kron_power);
    sc.samples = static_cast<Index>(std::llround(ratio * nodes));
    sc.rng_seed = benchmark_instance_seed(cfg.seed, run);
    return generate_dataset(sc);
}

/// EIER against the measurement ratio with oracle tuning: per run, the best
/// threshold on the truth; per (method, ratio), the lambda fraction with the
/// lowest mean EIER. Failed solves are excluded and counted.
inline std::vector<BenchmarkArm> run_benchmark(const BenchmarkConfig& cfg)
{
    if (cfg.runs < 1) fail(ErrorKind::configuration, "need at least one run");
    if (cfg.methods.empty()) fail(ErrorKind::configuration, "no methods to benchmark");
    if (cfg.ratios.empty()) fail(ErrorKind::configuration, "no ratios to benchmark");
    for (double f : cfg.lambda_fractions)
        if (!(f >= 0.0)) fail(ErrorKind::configuration, "lambda fractions must be >= 0");

    const std::size_t n_methods = cfg.methods.size();
    const std::size_t n_fracs = cfg.lambda_fractions.size();
    const std::size_t n_runs = static_cast<std::size_t>(cfg.runs);
    std::vector<BenchmarkArm> arms;
    for (double ratio : cfg.ratios) {
        // eier[method][fraction][run]
        std::vector<std::vector<std::vector<double>>> table(
            n_methods, std::vector<std::vector<double>>(n_fracs, std::vector<double>(n_runs, std::nan(""))));
        const Index samples = static_cast<Index>(
            std::llround(ratio * std::pow(static_cast<double>(cfg.synth.seed_matrix.rows()), cfg.synth.kron_power)));
        parallel_for(n_runs, cfg.jobs, [&](std::size_t r) {
            const auto [data, truth] = benchmark_instance(cfg, ratio, static_cast<int>(r));
            for (std::size_t m = 0; m < n_methods; ++m) {
                try {
                    const PreparedProblem problem(data, cfg.methods[m], cfg.solver.ridge);
                    const double lmax = problem.lambda_max();
                    std::vector<double> grid;
                    for (double f : cfg.lambda_fractions) grid.push_back(f * lmax);
                    SolverConfig sc = cfg.solver;
                    sc.jobs = 1;
                    const auto path = lambda_path(problem, grid, sc);
                    // path is ascending; fractions may not be
                    for (std::size_t f = 0; f < n_fracs; ++f) {
                        const double l = cfg.lambda_fractions[f] * lmax;
                        for (const auto& e : path)
                            if (e.lambda == l && e.ok) {
                                table[m][f][r] = best_threshold_eier(e.scores, truth.adjacency).second;
                                break;
                            }
                    }
                } catch (const Error&) {
                }
            }
        });
        for (std::size_t m = 0; m < n_methods; ++m) {
            BenchmarkArm arm;
            arm.method = cfg.methods[m].label();
            arm.ratio = ratio;
            arm.samples = samples;
            double best_mean = std::numeric_limits<double>::infinity();
            std::size_t best_f = 0;
            for (std::size_t f = 0; f < n_fracs; ++f) {
                double sum = 0.0;
                int count = 0;
                for (double v : table[m][f])
                    if (!std::isnan(v)) {
                        sum += v;
                        ++count;
                    }
                const double mean = count ? sum / count : std::numeric_limits<double>::infinity();
                if (mean < best_mean) {
                    best_mean = mean;
                    best_f = f;
                }
            }
            arm.lambda_fraction = cfg.lambda_fractions[best_f];
            arm.eier = table[m][best_f];
            double sum = 0.0, sq = 0.0;
            int count = 0;
            for (double v : arm.eier) {
                if (std::isnan(v)) {
                    ++arm.failures;
                    continue;
                }
                sum += v;
                sq += v * v;
                ++count;
            }
            arm.mean = count ? sum / count : std::nan("");
            arm.sd = count > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / count) / (count - 1))) : 0.0;
            arms.push_back(std::move(arm));
        }
    }
    return arms;
}

} // namespace ksem
