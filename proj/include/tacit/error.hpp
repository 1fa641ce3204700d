#pragma once

#include <stdexcept>
#include <string>

namespace tacit {

// Broad failure classes; the CLI maps them onto exit codes.
enum class ErrorKind { Usage, Data, Backend, State, NotFound };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error data_error(const std::string& what) { return {ErrorKind::Data, what}; }
inline Error usage_error(const std::string& what) { return {ErrorKind::Usage, what}; }
inline Error backend_error(const std::string& what) { return {ErrorKind::Backend, what}; }
inline Error not_found(const std::string& what) { return {ErrorKind::NotFound, what}; }
inline Error state_error(const std::string& what) { return {ErrorKind::State, what}; }

}  // namespace tacit
