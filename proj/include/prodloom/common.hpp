#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace prodloom {

// Category of a pipeline failure. Tests and the CLI dispatch on this rather
// than parsing messages.
enum class ErrorKind {
  Schema,
  DuplicateKey,
  MissingMapping,
  Config,
  Identification,
  SingularDesign,
  UndefinedStatistic,
  ConductInversion,
  Join,
  Separation,
  Convergence,
  Equilibrium,
  BootstrapDegenerate,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::DuplicateKey: return "duplicate-key";
    case ErrorKind::MissingMapping: return "missing-mapping";
    case ErrorKind::Config: return "config";
    case ErrorKind::Identification: return "identification";
    case ErrorKind::SingularDesign: return "singular-design";
    case ErrorKind::UndefinedStatistic: return "undefined-statistic";
    case ErrorKind::ConductInversion: return "conduct-inversion";
    case ErrorKind::Join: return "join";
    case ErrorKind::Separation: return "separation";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Equilibrium: return "equilibrium";
    case ErrorKind::BootstrapDegenerate: return "bootstrap-degenerate";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

// Shortest round-trip decimal representation. Used for every number written
// to an output file so reruns are byte-identical.
inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_int(long long v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// FNV-1a, used for content hashes in run manifests.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace prodloom
