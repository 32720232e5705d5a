#pragma once

#include <stdexcept>
#include <string>

namespace mcnn {

// Error taxonomy. The CLI maps these onto exit codes: ConfigError -> 1,
// DataError -> 2, NumericError -> 3. Contract violations inside the
// library (bad shapes, misuse) throw std::invalid_argument.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace mcnn
