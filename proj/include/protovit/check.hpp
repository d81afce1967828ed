#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace protovit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void fmt_append(std::ostringstream &) {}
template <class A, class... Rest>
void fmt_append(std::ostringstream &os, const A &a, const Rest &...rest) {
    os << a;
    fmt_append(os, rest...);
}
}  // namespace detail

template <class... Args>
[[noreturn]] void raise(const Args &...args) {
    std::ostringstream os;
    detail::fmt_append(os, args...);
    throw Error(os.str());
}

}  // namespace protovit

#define PV_CHECK(cond, ...)                  \
    do {                                     \
        if (!(cond)) ::protovit::raise(__VA_ARGS__); \
    } while (0)
