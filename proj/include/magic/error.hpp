#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace magic {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid graph construction, shape mismatch, non-finite values.
struct GraphError : Error {
  using Error::Error;
};

// Bad configuration file / CLI arguments (CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// Training diverged (CLI exit code 3).
struct DivergenceError : Error {
  using Error::Error;
};

namespace detail {
template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

}  // namespace magic

#define MAGIC_CHECK(cond, ...)                                        \
  do {                                                                \
    if (!(cond)) throw ::magic::Error(::magic::detail::cat(__VA_ARGS__)); \
  } while (0)

#define MAGIC_GRAPH_CHECK(cond, ...)                                       \
  do {                                                                     \
    if (!(cond)) throw ::magic::GraphError(::magic::detail::cat(__VA_ARGS__)); \
  } while (0)
