#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <unistd.h>
#include <vector>

#include "ksem/datamodel.hpp"
#include "ksem/error.hpp"
#include "ksem/rng.hpp"

namespace ksem {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr const char* estimate_schema = "ksem.estimate/1";
inline constexpr const char* manifest_schema = "ksem.manifest/1";

#ifdef KSEM_VERSION
inline constexpr const char* toolkit_version = KSEM_VERSION;
#else
inline constexpr const char* toolkit_version = "0.0.0";
#endif

struct LabeledMatrix
{
    MatrixXd values;
    std::vector<std::string> labels; // empty without a header row
};

struct ExpectedShape
{
    std::optional<Index> rows;
    std::optional<Index> cols;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_cells(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

inline bool parse_number(std::string_view cell, double& out)
{
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    if (cell.empty()) return false;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return res.ec == std::errc() && res.ptr == cell.data() + cell.size();
}

} // namespace detail

/// Numeric CSV, rows = samples. A first row containing any non-numeric cell
/// is taken as column labels. Errors cite the 1-based line number.
inline LabeledMatrix parse_matrix_csv(std::string_view text, const std::string& source = "<input>",
                                      ExpectedShape expect = {})
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) fail(ErrorKind::parse, source + ": empty file");

    LabeledMatrix out;
    std::size_t first = 0;
    {
        const auto cells = detail::split_cells(lines.front());
        double dummy = 0.0;
        bool numeric = true;
        for (auto c : cells) numeric = numeric && detail::parse_number(c, dummy);
        if (!numeric) {
            for (auto c : cells) out.labels.emplace_back(c);
            first = 1;
        }
    }

    std::vector<std::vector<double>> rows;
    std::size_t width = out.labels.size();
    for (std::size_t l = first; l < lines.size(); ++l) {
        const std::string where = source + ": line " + std::to_string(l + 1);
        if (detail::trim(lines[l]).empty()) fail(ErrorKind::parse, where + ": blank line inside data");
        const auto cells = detail::split_cells(lines[l]);
        if (width == 0) width = cells.size();
        if (cells.size() != width)
            fail(ErrorKind::parse, where + ": expected " + std::to_string(width) + " columns, found " +
                                       std::to_string(cells.size()));
        std::vector<double> row(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (!detail::parse_number(cells[c], row[c]))
                fail(ErrorKind::parse, where + ", column " + std::to_string(c + 1) + ": non-numeric cell '" +
                                           std::string(cells[c]) + "'");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(ErrorKind::parse, source + ": no data rows");

    out.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < width; ++c) out.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];

    if (expect.rows && *expect.rows != out.values.rows())
        fail(ErrorKind::parse, source + ": expected " + std::to_string(*expect.rows) + " rows, found " +
                                   std::to_string(out.values.rows()));
    if (expect.cols && *expect.cols != out.values.cols())
        fail(ErrorKind::parse, source + ": expected " + std::to_string(*expect.cols) + " columns, found " +
                                   std::to_string(out.values.cols()));
    return out;
}

inline std::string read_text_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorKind::io, "cannot read " + path.string());
    return text;
}

inline LabeledMatrix load_matrix_csv(const fs::path& path, ExpectedShape expect = {})
{
    return parse_matrix_csv(read_text_file(path), path.string(), expect);
}

/// 17 significant digits, enough to read back bit-exactly.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

template <class Derived>
std::string matrix_to_csv(const Eigen::DenseBase<Derived>& M, const std::vector<std::string>& labels = {})
{
    std::string out;
    if (!labels.empty()) {
        for (std::size_t c = 0; c < labels.size(); ++c) out += (c ? "," : "") + labels[c];
        out += '\n';
    }
    for (Index r = 0; r < M.rows(); ++r) {
        for (Index c = 0; c < M.cols(); ++c) {
            if (c) out += ',';
            if constexpr (std::is_integral_v<typename Derived::Scalar>)
                out += std::to_string(M(r, c));
            else
                out += format_double(static_cast<double>(M(r, c)));
        }
        out += '\n';
    }
    return out;
}

/// Whole-file write: content goes to a temporary sibling that is renamed over the target.
inline void write_file_atomic(const fs::path& path, std::string_view content)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) fail(ErrorKind::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) fail(ErrorKind::io, "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorKind::io, "cannot move file into place at " + path.string());
    }
}

template <class Derived>
void save_matrix_csv(const fs::path& path, const Eigen::DenseBase<Derived>& M, const std::vector<std::string>& labels = {})
{
    write_file_atomic(path, matrix_to_csv(M, labels));
}

inline std::string sha256_hex(std::string_view bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorKind::io, "SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

inline std::string file_sha256(const fs::path& path)
{
    return sha256_hex(read_text_file(path));
}

inline json matrix_json(const MatrixXd& M)
{
    json rows = json::array();
    for (Index r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json matrix_json(const MatrixXi& M)
{
    json rows = json::array();
    for (Index r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<std::string> node_labels(const std::vector<std::string>& names, Index n)
{
    if (static_cast<Index>(names.size()) == n) return names;
    std::vector<std::string> out;
    for (Index i = 0; i < n; ++i) out.push_back("n" + std::to_string(i));
    return out;
}

inline std::string to_string(CoefficientKind kind)
{
    switch (kind) {
    case CoefficientKind::dual_alpha: return "alpha";
    case CoefficientKind::transformed: return "zeta";
    case CoefficientKind::polynomial: return "w";
    }
    return "unknown";
}

/// estimate.json: versioned, self-describing, references its manifest.
inline json estimate_json(const TopologyEstimate& est, const std::vector<std::string>& names,
                          const std::string& manifest_ref)
{
    const Index n = est.adjacency.rows();
    const auto labels = node_labels(names, n);
    json edges = json::array();
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (est.adjacency(i, j)) edges.push_back({{"from", labels[static_cast<std::size_t>(i)]},
                                                      {"to", labels[static_cast<std::size_t>(j)]},
                                                      {"score", est.scores(i, j)}});
    json j;
    j["schema"] = estimate_schema;
    j["nodes"] = labels;
    j["adjacency"] = matrix_json(est.adjacency);
    j["scores"] = matrix_json(est.scores);
    j["b_diag"] = std::vector<double>(est.b_diag.data(), est.b_diag.data() + est.b_diag.size());
    j["edges"] = std::move(edges);
    j["coefficient_kind"] = to_string(est.kind);
    j["meta"] = {{"solver", est.meta.solver},
                 {"iterations", est.meta.iterations},
                 {"objective", est.meta.objective},
                 {"converged", est.meta.converged},
                 {"lambda", est.meta.lambda},
                 {"threshold", est.meta.threshold},
                 {"score_rule", to_string(est.meta.score_rule)}};
    j["manifest"] = manifest_ref;
    return j;
}

struct LoadedEstimate
{
    std::vector<std::string> nodes;
    MatrixXi adjacency;
    MatrixXd scores;
    VectorXd b_diag;
    json meta;
};

inline LoadedEstimate parse_estimate_json(const std::string& text, const std::string& source = "<estimate>")
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, source + ": " + e.what());
    }
    if (!j.contains("schema") || j["schema"] != estimate_schema)
        fail(ErrorKind::parse, source + ": not a " + std::string(estimate_schema) + " document");
    LoadedEstimate out;
    try {
        out.nodes = j.at("nodes").get<std::vector<std::string>>();
        const Index n = static_cast<Index>(out.nodes.size());
        out.adjacency.resize(n, n);
        out.scores.resize(n, n);
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < n; ++c) {
                out.adjacency(r, c) = j.at("adjacency").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<int>();
                out.scores(r, c) = j.at("scores").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
            }
        const auto b = j.at("b_diag").get<std::vector<double>>();
        out.b_diag = Eigen::Map<const VectorXd>(b.data(), static_cast<Index>(b.size()));
        out.meta = j.at("meta");
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, source + ": " + e.what());
    }
    return out;
}

inline LoadedEstimate load_estimate_json(const fs::path& path)
{
    return parse_estimate_json(read_text_file(path), path.string());
}

/// Directed graph with a score attribute per edge.
inline std::string graphml(const MatrixXi& adjacency, const MatrixXd& scores, const std::vector<std::string>& names)
{
    const Index n = adjacency.rows();
    const auto labels = node_labels(names, n);
    auto escape = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
            }
        }
        return o;
    };
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n"
        << "  <key id=\"score\" for=\"edge\" attr.name=\"score\" attr.type=\"double\"/>\n"
        << "  <graph id=\"G\" edgedefault=\"directed\">\n";
    for (const auto& l : labels) out << "    <node id=\"" << escape(l) << "\"/>\n";
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (adjacency(i, j))
                out << "    <edge source=\"" << escape(labels[static_cast<std::size_t>(i)]) << "\" target=\""
                    << escape(labels[static_cast<std::size_t>(j)]) << "\"><data key=\"score\">"
                    << format_double(scores(i, j)) << "</data></edge>\n";
    out << "  </graph>\n</graphml>\n";
    return out.str();
}

/// Run record written next to every command's outputs.
struct RunManifest
{
    std::string command;
    json config = json::object();
    json inputs = json::object();  // path -> sha256
    json outputs = json::object(); // file name -> sha256
    std::uint64_t rng_seed = 0;
    double wall_clock_seconds = 0.0;
    json convergence = json::object();

    void add_input(const fs::path& path) { inputs[path.string()] = file_sha256(path); }

    json to_json() const
    {
        json j;
        j["schema"] = manifest_schema;
        j["command"] = command;
        j["version"] = toolkit_version;
        j["rng"] = std::string(Rng::name);
        j["rng_seed"] = rng_seed;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["convergence"] = convergence;
        j["wall_clock_seconds"] = wall_clock_seconds;
        return j;
    }
};

/// Writes each (name, content) into dir, then the manifest listing their digests.
inline fs::path write_bundle(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files,
                             RunManifest manifest)
{
    for (const auto& [name, content] : files) {
        write_file_atomic(dir / name, content);
        manifest.outputs[name] = sha256_hex(content);
    }
    const fs::path path = dir / "manifest.json";
    write_file_atomic(path, manifest.to_json().dump(2) + "\n");
    return path;
}

} // namespace ksem
