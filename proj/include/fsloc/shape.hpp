#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsloc {

// Extents are stored outermost-first; 4-D tensors follow the
// batch x channel x height x width convention.
using Shape = std::vector<int>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, const Head& head, const Tail&... tail) {
    os << head;
    format_into(os, tail...);
}

template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    format_into(os, args...);
    return os.str();
}

}  // namespace detail

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int e : s) n *= e;
    return n;
}

inline bool shape_valid(const Shape& s) {
    if (s.empty()) return false;
    for (int e : s)
        if (e < 1) return false;
    return true;
}

}  // namespace fsloc
