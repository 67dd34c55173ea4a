#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace refforge {

// Every fault carries a stable machine-readable code ("file-missing",
// "snippet-ambiguous", ...) next to the human-readable message so callers
// and the CLI can branch on it without parsing prose.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void raise(std::string_view code, const std::string& message) {
  throw Error(std::string(code), message);
}

}  // namespace refforge
