#pragma once

// Shared error types and small utilities. Error categories map onto CLI exit
// codes: validation_error -> 1, audit_error -> 2, divergence_error -> 3.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <sstream>
#include <vector>

namespace coop {

// invalid inputs, malformed files, contract violations
struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// results directory failed an integrity check
struct audit_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// non-finite loss or gradient during training
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <class... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

} // namespace coop
