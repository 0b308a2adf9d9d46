#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace duomodal {

// Error taxonomy maps onto CLI exit codes:
//   usage -> 1, data/format/contract -> 2, numerical -> 3.
enum class ErrorKind { usage, data, contract, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::usage:
        return 1;
      case ErrorKind::numerical:
        return 3;
      default:
        return 2;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) {
  throw Error(ErrorKind::usage, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}
[[noreturn]] inline void throw_contract(const std::string& msg) {
  throw Error(ErrorKind::contract, msg);
}
[[noreturn]] inline void throw_numerical(const std::string& msg) {
  throw Error(ErrorKind::numerical, msg);
}

inline void check_contract(bool ok, const std::string& msg) {
  if (!ok) throw_contract(msg);
}
inline void check_data(bool ok, const std::string& msg) {
  if (!ok) throw_data(msg);
}

}  // namespace duomodal
