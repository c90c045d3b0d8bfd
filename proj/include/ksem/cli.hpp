#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ksem/evalkit.hpp"
#include "ksem/io.hpp"
#include "ksem/solvers.hpp"
#include "ksem/synthgen.hpp"

namespace ksem {

enum ExitCode : int { exit_ok = 0, exit_validation = 2, exit_solver = 3, exit_io = 4 };

inline int exit_code_for(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::solver_diverged:
    case ErrorKind::numerical_singularity: return exit_solver;
    case ErrorKind::io: return exit_io;
    default: return exit_validation;
    }
}

namespace cli {

struct SolverFlags
{
    std::string solver = "admm";
    std::string kernel = "poly:2";
    int order = 2;
    double lambda = 0.1;
    double rho = 1.0;
    double tol = 1e-6;
    int max_iters = 2000;
    double threshold = SolverConfig{}.tau;
    double ridge = default_relative_ridge;
    std::string score_rule = "native";
    bool restart = false;
    unsigned jobs = default_jobs();
    std::uint64_t seed = 0;

    void attach(CLI::App& app, bool with_lambda = true)
    {
        app.add_option("--solver", solver, "admm|pg|apg|poly|linear")->capture_default_str();
        app.add_option("--kernel", kernel, "poly:P or gauss:S2 (kernel solvers)")->capture_default_str();
        app.add_option("--order", order, "polynomial order for --solver poly")->capture_default_str();
        if (with_lambda) app.add_option("--lambda", lambda, "sparsity weight")->capture_default_str();
        app.add_option("--rho", rho, "ADMM penalty")->capture_default_str();
        app.add_option("--tol", tol, "convergence tolerance")->capture_default_str();
        app.add_option("--max-iters", max_iters, "iteration cap")->capture_default_str();
        app.add_option("--threshold", threshold, "edge threshold tau")->capture_default_str();
        app.add_option("--ridge", ridge, "relative kernel ridge")->capture_default_str();
        app.add_option("--score-rule", score_rule, "native|kernel_weighted")->capture_default_str();
        app.add_flag("--restart", restart, "APG function-value restart");
        app.add_option("--jobs", jobs, "worker threads (default $KSEM_JOBS or 1)");
        app.add_option("--rng-seed", seed, "seed")->capture_default_str();
    }

    ModelSpec model() const
    {
        ModelSpec m;
        m.solver = parse_solver(solver);
        m.kernel = KernelSpec::parse(kernel);
        m.order = m.solver == SolverKind::linear ? 1 : order;
        if (m.order < 1) fail(ErrorKind::configuration, "--order must be >= 1");
        return m;
    }

    SolverConfig config() const
    {
        SolverConfig c;
        c.lambda = lambda;
        c.rho = rho;
        c.tol = tol;
        c.max_iters = max_iters;
        c.tau = threshold;
        c.ridge = ridge;
        c.score_rule = parse_score_rule(score_rule);
        c.restart = restart;
        c.jobs = std::max(1u, jobs);
        c.rng_seed = seed;
        c.validate();
        return c;
    }

    json to_json(const ModelSpec& m) const
    {
        json j;
        j["solver"] = to_string(m.solver);
        if (m.kernel_based())
            j["kernel"] = m.kernel.to_string();
        else
            j["order"] = m.poly_order();
        j["lambda"] = lambda;
        j["rho"] = rho;
        j["tol"] = tol;
        j["max_iters"] = max_iters;
        j["threshold"] = threshold;
        j["ridge"] = ridge;
        j["score_rule"] = score_rule;
        j["restart"] = restart;
        return j;
    }
};

inline std::vector<double> parse_list(const std::string& text, const char* what)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = 0.0;
        if (!detail::parse_number(detail::trim(item), v))
            fail(ErrorKind::configuration, std::string(what) + ": cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) fail(ErrorKind::configuration, std::string(what) + " is empty");
    return out;
}

/// "linear", "poly:P", or "<admm|pg|apg>:<kernel>" such as "apg:poly:2".
inline ModelSpec parse_method(const std::string& text)
{
    if (text == "linear") return ModelSpec::linear();
    const auto colon = text.find(':');
    if (colon == std::string::npos) fail(ErrorKind::configuration, "cannot parse method '" + text + "'");
    const auto head = text.substr(0, colon);
    const auto rest = text.substr(colon + 1);
    if (head == "poly") {
        const auto order = parse_list(rest, "polynomial order");
        return ModelSpec::polynomial(static_cast<int>(order.front()));
    }
    const SolverKind kind = parse_solver(head);
    if (kind == SolverKind::poly || kind == SolverKind::linear)
        fail(ErrorKind::configuration, "cannot parse method '" + text + "'");
    return ModelSpec::kernel_solver(kind, KernelSpec::parse(rest));
}

inline MatrixXi load_adjacency(const std::string& path)
{
    const MatrixXd A = load_matrix_csv(path).values;
    if (!A.allFinite()) fail(ErrorKind::validation, path + ": adjacency has non-finite entries");
    MatrixXi out = A.cast<int>();
    if ((out.cast<double>().array() != A.array()).any()) fail(ErrorKind::validation, path + ": adjacency is not integer");
    return out;
}

inline MatrixXi load_seed_matrix(const std::string& spec)
{
    if (spec == "default" || spec == "paper") return default_seed_matrix();
    return load_adjacency(spec);
}

struct Timer
{
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

struct GeneratorFlags
{
    std::string seed_matrix = "default";
    int kron_power = 3;
    double rate = 0.3;
    std::string generator = "kernel";
    std::string kernel = "poly:2";
    int order = 2;
    double coeff_lo = -0.2;
    double coeff_hi = 0.2;
    double noise_std = 0.01;
    double b_min = 0.05;

    void attach(CLI::App& app)
    {
        app.add_option("--seed-matrix", seed_matrix, "'default' or a binary CSV")->capture_default_str();
        app.add_option("--kron-power", kron_power, "Kronecker power")->capture_default_str();
        app.add_option("--rate", rate, "Bernoulli rate multiplier")->capture_default_str();
        app.add_option("--generator", generator, "kernel|polysem")->capture_default_str();
        app.add_option("--gen-kernel", kernel, "generating kernel, poly:P or gauss:S2")->capture_default_str();
        app.add_option("--gen-order", order, "generating polynomial order (polysem)")->capture_default_str();
        app.add_option("--coeff-lo", coeff_lo, "coefficient range low")->capture_default_str();
        app.add_option("--coeff-hi", coeff_hi, "coefficient range high")->capture_default_str();
        app.add_option("--noise-std", noise_std, "noise standard deviation")->capture_default_str();
        app.add_option("--b-min", b_min, "minimum |b_jj|")->capture_default_str();
    }

    SynthConfig config(Index samples, std::uint64_t seed) const
    {
        SynthConfig c;
        c.seed_matrix = load_seed_matrix(seed_matrix);
        c.kron_power = kron_power;
        c.edge_prob_scale = rate;
        c.samples = samples;
        if (generator == "kernel")
            c.generator = KernelSpec::parse(kernel);
        else if (generator == "polysem")
            c.generator = PolynomialGenerator{order};
        else
            fail(ErrorKind::configuration, "--generator must be kernel or polysem");
        c.coeff_lo = coeff_lo;
        c.coeff_hi = coeff_hi;
        c.noise_std = noise_std;
        c.b_min = b_min;
        c.rng_seed = seed;
        c.validate();
        return c;
    }
};

inline json synth_json(const SynthConfig& c)
{
    json j;
    j["seed_matrix"] = matrix_json(c.seed_matrix);
    j["kron_power"] = c.kron_power;
    j["edge_prob_scale"] = c.edge_prob_scale;
    j["samples"] = c.samples;
    j["generator"] = c.generator_string();
    j["coeff_range"] = {c.coeff_lo, c.coeff_hi};
    j["noise_std"] = c.noise_std;
    j["b_min"] = c.b_min;
    j["rng_seed"] = c.rng_seed;
    return j;
}

inline Dataset load_dataset(const std::string& y_path, const std::string& x_path, RunManifest& manifest)
{
    auto Y = load_matrix_csv(y_path);
    auto X = load_matrix_csv(x_path, {Y.values.rows(), Y.values.cols()});
    manifest.add_input(y_path);
    manifest.add_input(x_path);
    auto names = !Y.labels.empty() ? Y.labels : X.labels;
    return validate_dataset(std::move(Y.values), std::move(X.values), std::move(names));
}

inline json convergence_json(const EstimateMeta& m)
{
    return {{"solver", m.solver}, {"iterations", m.iterations}, {"objective", m.objective}, {"converged", m.converged}};
}

} // namespace cli

/// Runs one command line (argv[0] is the program name). Output goes to
/// out/err; errors are reported as JSON on err and mapped to exit codes.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    using namespace cli;
    CLI::App app{"Sparse network topology inference with kernel-based structural equation models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", toolkit_version);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic instance bundle");
    GeneratorFlags gen;
    Index samples = 128;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    gen.attach(*sim);
    sim->add_option("--samples", samples, "sample count M")->capture_default_str();
    sim->add_option("--rng-seed", sim_seed, "seed")->capture_default_str();
    sim->add_option("--out", sim_out, "output directory")->required();

    // infer
    auto* inf = app.add_subcommand("infer", "estimate a topology from Y and X");
    SolverFlags sf;
    std::string y_path, x_path, inf_out;
    bool want_graphml = false;
    sf.attach(*inf);
    inf->add_option("--y", y_path, "endogenous CSV (samples x nodes)")->required();
    inf->add_option("--x", x_path, "exogenous CSV (samples x nodes)")->required();
    inf->add_option("--out", inf_out, "output directory")->required();
    inf->add_flag("--graphml", want_graphml, "also write graph.graphml");

    // eval
    auto* ev = app.add_subcommand("eval", "edge identification error rate");
    std::string truth_path, ev_out;
    std::vector<std::string> ev_estimates, ev_adjacency;
    ev->add_option("--truth", truth_path, "true adjacency CSV")->required();
    ev->add_option("--estimate", ev_estimates, "estimate.json (repeatable)");
    ev->add_option("--adjacency", ev_adjacency, "estimated adjacency CSV (repeatable)");
    ev->add_option("--out", ev_out, "output directory for eval.csv");

    // roc
    auto* roc = app.add_subcommand("roc", "ROC curve and AUC over edge scores");
    std::string roc_truth, roc_scores, roc_estimate, roc_out;
    roc->add_option("--truth", roc_truth, "true adjacency CSV")->required();
    auto* roc_s = roc->add_option("--scores", roc_scores, "score matrix CSV");
    auto* roc_e = roc->add_option("--estimate", roc_estimate, "estimate.json");
    roc_s->excludes(roc_e);
    roc->add_option("--out", roc_out, "output directory for roc.csv");

    // cv
    auto* cv = app.add_subcommand("cv", "k-fold cross-validation over lambda");
    SolverFlags cf;
    std::string cv_y, cv_x, cv_out, cv_grid;
    int folds = 5;
    int grid_size = 8;
    cf.attach(*cv, false);
    cv->add_option("--y", cv_y, "endogenous CSV")->required();
    cv->add_option("--x", cv_x, "exogenous CSV")->required();
    cv->add_option("--folds", folds, "fold count")->capture_default_str();
    cv->add_option("--grid", cv_grid, "comma-separated lambda values");
    cv->add_option("--grid-size", grid_size, "log-spaced grid size when --grid is absent")->capture_default_str();
    cv->add_option("--out", cv_out, "output directory")->required();

    // benchmark
    auto* bm = app.add_subcommand("benchmark", "EIER against the measurement ratio");
    GeneratorFlags bgen;
    bgen.kron_power = 2;
    std::string ratios = "1,2,4", methods = "apg:poly:2,linear", fractions, bm_out;
    int runs = BenchmarkConfig{}.runs;
    double bm_tol = 1e-6;
    int bm_iters = 2000;
    std::uint64_t bm_seed = 0;
    unsigned bm_jobs = default_jobs();
    bgen.attach(*bm);
    bm->add_option("--ratios", ratios, "comma-separated M/N ratios")->capture_default_str();
    bm->add_option("--runs", runs, "runs per ratio")->capture_default_str();
    bm->add_option("--methods", methods, "comma-separated methods (linear, poly:P, admm:poly:2, ...)")
        ->capture_default_str();
    bm->add_option("--fractions", fractions, "lambda grid as fractions of lambda_max");
    bm->add_option("--tol", bm_tol, "solver tolerance")->capture_default_str();
    bm->add_option("--max-iters", bm_iters, "solver iteration cap")->capture_default_str();
    bm->add_option("--rng-seed", bm_seed, "seed")->capture_default_str();
    bm->add_option("--jobs", bm_jobs, "concurrent runs (default $KSEM_JOBS or 1)");
    bm->add_option("--out", bm_out, "output directory")->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = e.get_exit_code();
        if (code == 0) {
            out << (e.get_name() == "CallForVersion" ? std::string(toolkit_version) + "\n" : app.help());
            return exit_ok;
        }
        err << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
        return exit_validation;
    }

    try {
        const Timer timer;
        if (*sim) {
            const SynthConfig sc = gen.config(samples, sim_seed);
            const auto [data, truth] = generate_dataset(sc);
            json meta = synth_json(sc);
            meta["schema"] = "ksem.synth/1";
            meta["nodes"] = data.nodes();
            meta["edges"] = truth.adjacency.sum();
            meta["rng"] = std::string(Rng::name);
            meta["b_diag"] = std::vector<double>(truth.b_diag.data(), truth.b_diag.data() + truth.b_diag.size());
            meta["manifest"] = "manifest.json";
            RunManifest m;
            m.command = "simulate";
            m.config = synth_json(sc);
            m.rng_seed = sim_seed;
            const auto path = write_bundle(sim_out,
                                           {{"Y.csv", matrix_to_csv(data.Y)},
                                            {"X.csv", matrix_to_csv(data.X)},
                                            {"A.csv", matrix_to_csv(truth.adjacency)},
                                            {"meta.json", meta.dump(2) + "\n"}},
                                           [&] {
                                               m.wall_clock_seconds = timer.seconds();
                                               return m;
                                           }());
            out << path.string() << "\n";
        } else if (*inf) {
            RunManifest m;
            m.command = "infer";
            const Dataset data = load_dataset(y_path, x_path, m);
            const ModelSpec model = sf.model();
            const SolverConfig cfg = sf.config();
            const TopologyEstimate est = PreparedProblem(data, model, cfg.ridge).solve(cfg);
            m.config = sf.to_json(model);
            m.rng_seed = sf.seed;
            m.convergence = convergence_json(est.meta);
            std::vector<std::pair<std::string, std::string>> files{
                {"estimate.json", estimate_json(est, data.node_names, "manifest.json").dump(2) + "\n"}};
            if (want_graphml) files.emplace_back("graph.graphml", graphml(est.adjacency, est.scores, data.node_names));
            m.wall_clock_seconds = timer.seconds();
            write_bundle(inf_out, files, m);
            out << "solver=" << est.meta.solver << " objective=" << format_double(est.meta.objective)
                << " iterations=" << est.meta.iterations << " converged=" << (est.meta.converged ? "true" : "false")
                << " edges=" << est.adjacency.sum() << "\n";
        } else if (*ev) {
            if (ev_estimates.empty() && ev_adjacency.empty())
                fail(ErrorKind::configuration, "eval needs --estimate or --adjacency");
            const MatrixXi truth = load_adjacency(truth_path);
            RunManifest m;
            m.command = "eval";
            m.add_input(truth_path);
            std::string table = "estimate,eier\n";
            auto report = [&](const std::string& name, const MatrixXi& A_hat) {
                const double e = eier(truth, A_hat);
                table += name + "," + format_double(e) + "\n";
                out << name << " eier=" << format_double(e) << "%\n";
                m.add_input(name);
            };
            for (const auto& p : ev_estimates) report(p, load_estimate_json(p).adjacency);
            for (const auto& p : ev_adjacency) report(p, load_adjacency(p));
            if (!ev_out.empty()) {
                m.wall_clock_seconds = timer.seconds();
                write_bundle(ev_out, {{"eval.csv", table}}, m);
            }
        } else if (*roc) {
            if (roc_scores.empty() == roc_estimate.empty())
                fail(ErrorKind::configuration, "roc needs exactly one of --scores or --estimate");
            const MatrixXi truth = load_adjacency(roc_truth);
            RunManifest m;
            m.command = "roc";
            m.add_input(roc_truth);
            const std::string src = roc_scores.empty() ? roc_estimate : roc_scores;
            m.add_input(src);
            const MatrixXd scores = roc_scores.empty() ? load_estimate_json(roc_estimate).scores
                                                       : load_matrix_csv(roc_scores).values;
            const RocCurve curve = roc_curve(scores, truth);
            std::string table = "threshold,P_FA,P_D\n";
            for (const auto& p : curve.points)
                table += (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) + "," +
                         format_double(p.p_fa) + "," + format_double(p.p_d) + "\n";
            if (!roc_out.empty()) {
                m.wall_clock_seconds = timer.seconds();
                m.convergence = {{"auc", curve.auc}};
                write_bundle(roc_out, {{"roc.csv", table}}, m);
            }
            out << "auc=" << format_double(curve.auc) << " points=" << curve.points.size() << "\n";
        } else if (*cv) {
            RunManifest m;
            m.command = "cv";
            const Dataset data = load_dataset(cv_y, cv_x, m);
            const ModelSpec model = cf.model();
            const SolverConfig cfg = cf.config();
            std::vector<double> grid;
            if (!cv_grid.empty()) {
                grid = parse_list(cv_grid, "--grid");
            } else {
                if (grid_size < 1) fail(ErrorKind::configuration, "--grid-size must be >= 1");
                const double lmax = PreparedProblem(data, model, cfg.ridge).lambda_max();
                for (int g = 0; g < grid_size; ++g)
                    grid.push_back(lmax * std::pow(10.0, -3.0 * (grid_size == 1 ? 0.0 : 1.0 - double(g) / (grid_size - 1))));
            }
            const CvResult res = cross_validate_lambda(data, model, grid, folds, cfg, cf.seed);
            std::string table = "lambda";
            for (int f = 0; f < folds; ++f) table += ",fold" + std::to_string(f + 1);
            table += ",mean\n";
            for (std::size_t g = 0; g < res.lambdas.size(); ++g) {
                table += format_double(res.lambdas[g]);
                for (int f = 0; f < folds; ++f) table += "," + format_double(res.fold_scores(static_cast<Index>(g), f));
                table += "," + format_double(res.mean(static_cast<Index>(g))) + "\n";
            }
            m.config = cf.to_json(model);
            m.config["folds"] = folds;
            m.config["grid"] = res.lambdas;
            m.rng_seed = cf.seed;
            m.convergence = {{"best_lambda", res.best_lambda}};
            m.wall_clock_seconds = timer.seconds();
            write_bundle(cv_out, {{"cv.csv", table}}, m);
            out << "best_lambda=" << format_double(res.best_lambda) << "\n";
        } else if (*bm) {
            BenchmarkConfig bc;
            bc.synth = bgen.config(2, bm_seed);
            bc.ratios = parse_list(ratios, "--ratios");
            bc.runs = runs;
            std::stringstream ms(methods);
            std::string item;
            while (std::getline(ms, item, ',')) {
                // kernel methods contain ':' but never ','
                bc.methods.push_back(parse_method(std::string(detail::trim(item))));
            }
            if (!fractions.empty()) bc.lambda_fractions = parse_list(fractions, "--fractions");
            bc.solver.tol = bm_tol;
            bc.solver.max_iters = bm_iters;
            bc.solver.validate();
            bc.seed = bm_seed;
            bc.jobs = std::max(1u, bm_jobs);
            const auto arms = run_benchmark(bc);

            std::string summary = "method,ratio,samples,tuning,lambda_fraction,runs,failures,mean_eier,sd_eier\n";
            std::string per_run = "method,ratio,run,eier\n";
            for (const auto& a : arms) {
                summary += a.method + "," + format_double(a.ratio) + "," + std::to_string(a.samples) + ",oracle," +
                           format_double(a.lambda_fraction) + "," + std::to_string(a.eier.size()) + "," +
                           std::to_string(a.failures) + "," + format_double(a.mean) + "," + format_double(a.sd) + "\n";
                for (std::size_t r = 0; r < a.eier.size(); ++r)
                    per_run += a.method + "," + format_double(a.ratio) + "," + std::to_string(r) + "," +
                               (std::isnan(a.eier[r]) ? std::string("nan") : format_double(a.eier[r])) + "\n";
                out << a.method << " M/N=" << a.ratio << " eier=" << a.mean << "+-" << a.sd << " (failures "
                    << a.failures << ")\n";
            }
            RunManifest m;
            m.command = "benchmark";
            m.config = synth_json(bc.synth);
            m.config.erase("samples");
            m.config["ratios"] = bc.ratios;
            m.config["runs"] = runs;
            m.config["methods"] = methods;
            m.config["lambda_fractions"] = bc.lambda_fractions;
            m.config["tol"] = bm_tol;
            m.config["max_iters"] = bm_iters;
            m.config["tuning"] = "oracle";
            m.rng_seed = bm_seed;
            m.wall_clock_seconds = timer.seconds();
            write_bundle(bm_out, {{"eier.csv", summary}, {"runs.csv", per_run}}, m);
        }
    } catch (const Error& e) {
        err << json{{"error", {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}}}}.dump() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
        return exit_io;
    }
    return exit_ok;
}

} // namespace ksem
