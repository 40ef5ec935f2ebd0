#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace medconv {

// Error families map onto CLI exit codes: config 2, data 3, numeric 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

namespace detail {
inline void concat_into(std::ostringstream&) {}

template <typename Head, typename... Tail>
void concat_into(std::ostringstream& os, Head&& head, Tail&&... tail) {
    os << std::forward<Head>(head);
    concat_into(os, std::forward<Tail>(tail)...);
}
}  // namespace detail

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    detail::concat_into(os, std::forward<Args>(args)...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    throw Error(concat(std::forward<Args>(args)...));
}

}  // namespace medconv
