#pragma once

#include <stdexcept>
#include <string>

namespace pprl {

// Mirrors the status codes of the C API (include/pprl/pprl.h).
enum class ErrorCode : int {
  ok = 0,
  invalid_argument = 1,
  invalid_state = 2,
  degenerate_input = 3,
  config = 4,
  parse = 5,
  io = 6,
  internal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_invalid_argument(const std::string& msg) {
  throw Error(ErrorCode::invalid_argument, msg);
}

[[noreturn]] inline void throw_invalid_state(const std::string& msg) {
  throw Error(ErrorCode::invalid_state, msg);
}

[[noreturn]] inline void throw_degenerate_input(const std::string& msg) {
  throw Error(ErrorCode::degenerate_input, msg);
}

[[noreturn]] inline void throw_config_error(const std::string& msg) {
  throw Error(ErrorCode::config, msg);
}

[[noreturn]] inline void throw_parse_error(const std::string& msg) {
  throw Error(ErrorCode::parse, msg);
}

[[noreturn]] inline void throw_io_error(const std::string& msg) {
  throw Error(ErrorCode::io, msg);
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

}  // namespace pprl
