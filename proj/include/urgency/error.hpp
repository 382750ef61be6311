#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace urgency {

enum class ErrorKind {
    io,
    parse,
    format,
    data,
    integrity,
    domain,
    size,
    rank,
    shape,
    empty_corpus,
    stratification,
    divergence,
    not_found,
    immutable,
    not_ready,
    unauthorized,
    forbidden,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::format: return "format";
    case ErrorKind::data: return "data";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::domain: return "domain";
    case ErrorKind::size: return "size";
    case ErrorKind::rank: return "rank";
    case ErrorKind::shape: return "shape";
    case ErrorKind::empty_corpus: return "empty_corpus";
    case ErrorKind::stratification: return "stratification";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::immutable: return "immutable";
    case ErrorKind::not_ready: return "not_ready";
    case ErrorKind::unauthorized: return "unauthorized";
    case ErrorKind::forbidden: return "forbidden";
    }
    return "unknown";
}

// Every failure raised by the library carries a machine-readable kind so the
// CLI and HTTP layers can map it to exit codes and status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

} // namespace urgency
