#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace srg {

#ifdef SRG_REAL32
using real = float;  // opt-in speed mode, outside the tolerance contract
#else
using real = double;
#endif

// Error kinds double as CLI exit codes (0 ok, 2 usage).
enum class ErrKind : int {
  Config = 3,
  Data = 4,
  Numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrKind::Config, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw Error(ErrKind::Data, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw Error(ErrKind::Numeric, msg); }

inline uint64_t fnv1a64(const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = 1469598103934665603ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace srg
