#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace pnc {

enum class ErrorKind { config, data, query, validation, internal };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case ErrorKind::config: return 2;
      case ErrorKind::data: return 3;
      case ErrorKind::query: return 4;
      case ErrorKind::validation: return 5;
      case ErrorKind::internal: return 1;
    }
    return 1;
  }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// splitmix64; self-contained so streams are reproducible everywhere
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // modulo bias is irrelevant at the sizes we draw
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

private:
  uint64_t state_;
};

}  // namespace pnc
