#include <filesystem>
#include <sstream>

#include "test_util.hpp"

#include "ksem/cli.hpp"
#include "ksem/io.hpp"

using namespace ksem;
using namespace ksem::test;
namespace fs = std::filesystem;

namespace {

class TempDir
{
public:
    TempDir()
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / ("ksem_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
                                             std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

struct CliRun
{
    int code = 0;
    std::string out;
    std::string err;
};

CliRun ksem_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "ksem");
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

json read_json(const fs::path& p)
{
    return json::parse(read_text_file(p));
}

void simulate(const fs::path& dir, int kron_power, int samples, std::uint64_t seed, std::vector<std::string> extra = {})
{
    std::vector<std::string> args{"simulate", "--kron-power", std::to_string(kron_power), "--samples",
                                  std::to_string(samples), "--rng-seed", std::to_string(seed), "--out", dir.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const CliRun r = ksem_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
}

} // namespace

TEST(MatrixCsv, ParsesPlainAndLabeled)
{
    const auto plain = parse_matrix_csv("1,2\n3,4");
    MatrixXd want(2, 2);
    want << 1, 2, 3, 4;
    EXPECT_EQ(plain.values, want);
    EXPECT_TRUE(plain.labels.empty());

    const auto labeled = parse_matrix_csv("g1, g2\r\n1,2\r\n3,4\r\n\n");
    EXPECT_EQ(labeled.labels, (std::vector<std::string>{"g1", "g2"}));
    EXPECT_EQ(labeled.values, want);
    EXPECT_EQ(parse_matrix_csv("+1e-3,-2.5E2").values(0, 1), -250.0);
}

TEST(MatrixCsv, ErrorsCiteLines)
{
    auto message = [](std::string_view text, ExpectedShape expect = {}) {
        try {
            parse_matrix_csv(text, "m.csv", expect);
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::parse);
            return std::string(e.what());
        }
        ADD_FAILURE() << "accepted " << text;
        return std::string();
    };
    EXPECT_NE(message("1,2\n3").find("line 2"), std::string::npos);
    EXPECT_NE(message("a,b\n1,2\n3,x").find("line 3, column 2"), std::string::npos);
    EXPECT_NE(message("1,2\n\n3,4").find("line 2"), std::string::npos);
    EXPECT_NE(message("1,2\n3,4", {3, std::nullopt}).find("expected 3 rows"), std::string::npos);
    EXPECT_NE(message("1,2\n3,4", {std::nullopt, 3}).find("expected 3 columns"), std::string::npos);
    EXPECT_FALSE(message("").empty());
    EXPECT_FALSE(message("a,b\n").empty());
}

TEST(MatrixCsv, RoundTripIsBitExact)
{
    Rng rng(70);
    MatrixXd M = random_matrix(rng, 20, 7);
    for (Index k = 0; k < M.size(); ++k) M(k) *= std::pow(10.0, rng.uniform(-300, 300));
    M(0, 0) = 0.1;
    M(1, 0) = 5e-324;
    M(2, 0) = -0.0;
    M(3, 0) = std::numeric_limits<double>::max();
    const MatrixXd back = parse_matrix_csv(matrix_to_csv(M)).values;
    ASSERT_EQ(back.rows(), M.rows());
    for (Index k = 0; k < M.size(); ++k) EXPECT_EQ(std::bit_cast<std::uint64_t>(back(k)), std::bit_cast<std::uint64_t>(M(k)));

    TempDir dir;
    save_matrix_csv(dir / "sub/m.csv", M, {"a", "b", "c", "d", "e", "f", "g"});
    const auto loaded = load_matrix_csv(dir / "sub/m.csv");
    EXPECT_EQ(loaded.values, M);
    EXPECT_EQ(loaded.labels.size(), 7u);
    EXPECT_EQ(matrix_to_csv(MatrixXi::Identity(2, 2)), "1,0\n0,1\n");
}

TEST(Files, AtomicWriteAndDigest)
{
    TempDir dir;
    write_file_atomic(dir / "a/b/c.txt", "abc");
    EXPECT_EQ(read_text_file(dir / "a/b/c.txt"), "abc");
    write_file_atomic(dir / "a/b/c.txt", "xyz");
    EXPECT_EQ(read_text_file(dir / "a/b/c.txt"), "xyz");
    int entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "a/b")) ++entries;
    EXPECT_EQ(entries, 1);

    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(file_sha256(dir / "a/b/c.txt"), sha256_hex("xyz"));
    expect_error(ErrorKind::io, [&] { read_text_file(dir / "missing.csv"); });
}

TEST(EstimateJson, RoundTripsAndHoldsInvariants)
{
    const Dataset d = small_planted(1, 12);
    SolverConfig cfg;
    cfg.lambda = 0.05;
    const TopologyEstimate est = solve_topology(d, ModelSpec::kernel_solver(SolverKind::apg, KernelSpec::polynomial(2)), cfg);
    const json j = estimate_json(est, d.node_names, "manifest.json");
    EXPECT_EQ(j["schema"], estimate_schema);
    EXPECT_EQ(j["manifest"], "manifest.json");
    EXPECT_EQ(j["coefficient_kind"], "zeta");
    const LoadedEstimate back = parse_estimate_json(j.dump());
    EXPECT_EQ(back.adjacency, est.adjacency);
    EXPECT_EQ(back.scores, est.scores);
    EXPECT_EQ(back.b_diag, est.b_diag);
    EXPECT_EQ(back.nodes, d.node_names);
    EXPECT_TRUE(((back.adjacency.array() == 0) || (back.adjacency.array() == 1)).all());
    EXPECT_EQ(back.scores.diagonal(), VectorXd::Zero(4));
    EXPECT_EQ(j["edges"].size(), static_cast<std::size_t>(est.adjacency.sum()));

    expect_error(ErrorKind::parse, [] { parse_estimate_json("{}"); });
    expect_error(ErrorKind::parse, [] { parse_estimate_json("not json"); });
    json broken = j;
    broken.erase("scores");
    expect_error(ErrorKind::parse, [&] { parse_estimate_json(broken.dump()); });
}

TEST(GraphMl, ListsDirectedEdgesWithScores)
{
    MatrixXi A = MatrixXi::Zero(3, 3);
    A(0, 2) = 1;
    MatrixXd s = MatrixXd::Zero(3, 3);
    s(0, 2) = 0.25;
    const std::string g = graphml(A, s, {"a<b", "y", "z"});
    EXPECT_NE(g.find("edgedefault=\"directed\""), std::string::npos);
    EXPECT_NE(g.find("<edge source=\"a&lt;b\" target=\"z\"><data key=\"score\">0.25</data>"), std::string::npos);
    EXPECT_EQ(g.find("<edge", g.find("<edge") + 1), std::string::npos);
}

TEST(Cli, SimulateReferenceSizesAndDeterminism)
{
    TempDir dir;
    const CliRun r = ksem_cli({"simulate", "--kron-power", "3", "--seed-matrix", "paper", "--samples", "128", "--rng-seed",
                          "5", "--out", (dir / "a").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, (dir / "a" / "manifest.json").string() + "\n");
    const auto Y = load_matrix_csv(dir / "a/Y.csv").values;
    EXPECT_EQ(Y.rows(), 128);
    EXPECT_EQ(Y.cols(), 64);
    EXPECT_EQ(load_matrix_csv(dir / "a/A.csv").values.cols(), 64);

    simulate(dir / "b", 3, 128, 5, {"--seed-matrix", "default"});
    for (const char* f : {"Y.csv", "X.csv", "A.csv", "meta.json"})
        EXPECT_EQ(file_sha256(dir / "a" / f), file_sha256(dir / "b" / f)) << f;

    const json m = read_json(dir / "a/manifest.json");
    EXPECT_EQ(m["schema"], manifest_schema);
    EXPECT_EQ(m["command"], "simulate");
    EXPECT_EQ(m["rng_seed"], 5);
    EXPECT_EQ(m["outputs"]["Y.csv"], file_sha256(dir / "a/Y.csv"));
    EXPECT_EQ(read_json(dir / "a/meta.json")["manifest"], "manifest.json");
}

TEST(Cli, InferLinearAliasesFirstOrderPoly)
{
    TempDir dir;
    simulate(dir / "sim", 2, 32, 3);
    const std::string y = (dir / "sim/Y.csv").string(), x = (dir / "sim/X.csv").string();
    ASSERT_EQ(ksem_cli({"infer", "--y", y, "--x", x, "--solver", "linear", "--lambda", "0.05", "--out", (dir / "lin").string()}).code, 0);
    ASSERT_EQ(ksem_cli({"infer", "--y", y, "--x", x, "--solver", "poly", "--order", "1", "--lambda", "0.05", "--out",
                   (dir / "p1").string()}).code, 0);
    json a = read_json(dir / "lin/estimate.json"), b = read_json(dir / "p1/estimate.json");
    EXPECT_EQ(a["meta"]["solver"], "linear");
    a["meta"].erase("solver");
    b["meta"].erase("solver");
    EXPECT_EQ(a, b);
}

TEST(Cli, InferHugeLambdaGivesNoEdgesAndWritesGraphml)
{
    TempDir dir;
    simulate(dir / "sim", 2, 32, 4);
    const CliRun r = ksem_cli({"infer", "--y", (dir / "sim/Y.csv").string(), "--x", (dir / "sim/X.csv").string(), "--solver",
                          "admm", "--kernel", "poly:2", "--lambda", "1e9", "--graphml", "--out", (dir / "e").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("edges=0"), std::string::npos);
    const json e = read_json(dir / "e/estimate.json");
    EXPECT_TRUE(e["edges"].empty());
    EXPECT_TRUE(fs::exists(dir / "e/graph.graphml"));
    const json m = read_json(dir / "e/manifest.json");
    EXPECT_EQ(m["inputs"][(dir / "sim/Y.csv").string()], file_sha256(dir / "sim/Y.csv"));
    EXPECT_EQ(m["outputs"]["graph.graphml"], file_sha256(dir / "e/graph.graphml"));
}

TEST(Cli, InferSolversAgreeOnObjective)
{
    TempDir dir;
    simulate(dir / "sim", 2, 32, 8);
    auto objective = [&](const std::string& solver) {
        const CliRun r = ksem_cli({"infer", "--y", (dir / "sim/Y.csv").string(), "--x", (dir / "sim/X.csv").string(),
                              "--solver", solver, "--kernel", "poly:2", "--lambda", "0.1", "--tol", "1e-9",
                              "--max-iters", "10000", "--out", (dir / solver).string()});
        EXPECT_EQ(r.code, 0) << r.err;
        return read_json(dir / solver / "estimate.json")["meta"]["objective"].get<double>();
    };
    const double admm = objective("admm");
    EXPECT_NEAR(objective("apg"), admm, 1e-3 * admm);
}

TEST(Cli, EvalRocAndCvOutputs)
{
    TempDir dir;
    simulate(dir / "sim", 2, 40, 9);
    const std::string truth = (dir / "sim/A.csv").string();

    CliRun r = ksem_cli({"eval", "--truth", truth, "--adjacency", truth, "--out", (dir / "ev").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("eier=0%"), std::string::npos);
    EXPECT_EQ(read_text_file(dir / "ev/eval.csv"), "estimate,eier\n" + truth + ",0\n");

    r = ksem_cli({"roc", "--truth", truth, "--scores", truth, "--out", (dir / "roc").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("auc=1 ", 0), 0u) << r.out;
    const std::string roc = read_text_file(dir / "roc/roc.csv");
    EXPECT_EQ(roc.rfind("threshold,P_FA,P_D\ninf,0,0\n", 0), 0u);

    r = ksem_cli({"cv", "--y", (dir / "sim/Y.csv").string(), "--x", (dir / "sim/X.csv").string(), "--solver", "linear",
             "--folds", "5", "--grid", "0.001,0.003,0.01,0.03,0.1,0.3,1,3", "--out", (dir / "cv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("best_lambda=", 0), 0u);
    const auto cv = parse_matrix_csv(read_text_file(dir / "cv/cv.csv"));
    EXPECT_EQ(cv.values.rows(), 8);
    EXPECT_EQ(cv.labels, (std::vector<std::string>{"lambda", "fold1", "fold2", "fold3", "fold4", "fold5", "mean"}));

    // roc from an estimate.json
    ASSERT_EQ(ksem_cli({"infer", "--y", (dir / "sim/Y.csv").string(), "--x", (dir / "sim/X.csv").string(), "--solver",
                   "linear", "--lambda", "0.01", "--out", (dir / "inf").string()}).code, 0);
    r = ksem_cli({"roc", "--truth", truth, "--estimate", (dir / "inf/estimate.json").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    r = ksem_cli({"eval", "--truth", truth, "--estimate", (dir / "inf/estimate.json").string()});
    EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, BenchmarkRecoversNoiselessPlantedGraph)
{
    TempDir dir;
    const CliRun r = ksem_cli({"benchmark", "--kron-power", "2", "--noise-std", "0", "--ratios", "4", "--runs", "1",
                          "--methods", "apg:poly:2", "--rng-seed", "2", "--out", (dir / "bm").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_text_file(dir / "bm/runs.csv"), "method,ratio,run,eier\napg[poly:2],4,0,0\n");
    const std::string summary = read_text_file(dir / "bm/eier.csv");
    EXPECT_NE(summary.find("\napg[poly:2],4,64,oracle,"), std::string::npos) << summary;
    EXPECT_EQ(read_json(dir / "bm/manifest.json")["config"]["tuning"], "oracle");
}

TEST(Cli, ErrorsMapToExitCodes)
{
    TempDir dir;
    CliRun r = ksem_cli({"infer", "--y", (dir / "missing.csv").string(), "--x", (dir / "missing.csv").string(), "--out",
                    (dir / "o").string()});
    EXPECT_EQ(r.code, 4);
    EXPECT_EQ(json::parse(r.err)["error"]["kind"], "io");

    write_file_atomic(dir / "Y.csv", "1,2\n3,4\n5,6\n");
    write_file_atomic(dir / "X.csv", "1,0\n1,0\n1,0\n");
    r = ksem_cli({"infer", "--y", (dir / "Y.csv").string(), "--x", (dir / "X.csv").string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(json::parse(r.err)["error"]["kind"], "validation");

    r = ksem_cli({"infer", "--bogus"});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(ksem_cli({"infer", "--y", (dir / "Y.csv").string(), "--x", (dir / "Y.csv").string(), "--solver", "magic",
                   "--out", (dir / "o").string()}).code, 2);
    EXPECT_EQ(ksem_cli({"--version"}).out, std::string(toolkit_version) + "\n");
    EXPECT_EQ(ksem_cli({}).code, 2);
}
