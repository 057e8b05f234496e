#pragma once

#include <stdexcept>
#include <string>

namespace nxl {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorCategory { config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, std::string msg)
        : std::runtime_error(std::move(msg)), category_(cat) {}
    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

struct ShapeError : Error {
    explicit ShapeError(std::string msg) : Error(ErrorCategory::config, std::move(msg)) {}
};

struct VocabError : Error {
    explicit VocabError(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct MissingHeadError : Error {
    explicit MissingHeadError(std::string msg) : Error(ErrorCategory::config, std::move(msg)) {}
};

struct ProtocolError : Error {
    explicit ProtocolError(std::string msg) : Error(ErrorCategory::config, std::move(msg)) {}
};

struct LoadError : Error {
    explicit LoadError(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct NumericError : Error {
    explicit NumericError(std::string msg) : Error(ErrorCategory::numeric, std::move(msg)) {}
};

} // namespace nxl
