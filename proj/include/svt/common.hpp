#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace svt {

using Shape = std::vector<int64_t>;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shapes are incompatible for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An op argument is out of range (k too large, indivisible groups, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A model / dataset / training configuration is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An internal precondition was violated (indicates a bug upstream).
class ContractError : public Error {
public:
    using Error::Error;
};

/// A numerical failure (NaN/Inf) was detected.
class NumericError : public Error {
public:
    using Error::Error;
};

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace svt
