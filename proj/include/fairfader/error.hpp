#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace fairfader {

// Malformed or truncated binary/text artifact. `offset` is the byte position
// at which parsing failed, when known.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg, long long offset = -1)
      : std::runtime_error(msg), offset(offset) {}
  long long offset;
};

// Unparseable dataset filename; keeps the name so callers can report it.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::string filename)
      : std::runtime_error(msg), filename(std::move(filename)) {}
  std::string filename;
};

inline std::string strfmt(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[512];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw std::invalid_argument(msg);
}

#define FF_CHECK_ARG(cond, ...)                              \
  do {                                                       \
    if (!(cond)) ::fairfader::fail_invalid(::fairfader::strfmt(__VA_ARGS__)); \
  } while (0)

}  // namespace fairfader
