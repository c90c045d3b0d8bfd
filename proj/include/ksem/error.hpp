#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ksem {

enum class ErrorKind {
    invalid_input,
    validation,
    configuration,
    kernel_not_psd,
    numerical_singularity,
    solver_diverged,
    size,
    generation,
    degenerate_truth,
    feature_overflow,
    parse,
    io,
};

inline std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::validation: return "validation";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::kernel_not_psd: return "kernel-not-psd";
    case ErrorKind::numerical_singularity: return "numerical-singularity";
    case ErrorKind::solver_diverged: return "solver-diverged";
    case ErrorKind::size: return "size";
    case ErrorKind::generation: return "generation";
    case ErrorKind::degenerate_truth: return "degenerate-truth";
    case ErrorKind::feature_overflow: return "feature-overflow";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind)
    {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message)
{
    throw Error(kind, message);
}

} // namespace ksem
