#include <bit>
#include <cstdio>
#include <string>

#include "pxai/errors.hpp"
#include "pxai/seeding.hpp"

namespace pxai {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSchemaMismatch: return "schema_mismatch";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kEmptyDataset: return "empty_dataset";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kUnavailable: return "unavailable";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kContractViolation: return "contract_violation";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kNumericDegeneracy: return "numeric_degeneracy";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kSelection: return "selection";
    case ErrorKind::kCompatibility: return "compatibility";
    case ErrorKind::kRetriable: return "retriable";
    case ErrorKind::kProvider: return "provider";
    case ErrorKind::kNotFound: return "not_found";
  }
  return "unknown";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_values(std::span<const double> values) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (double v : values) {
    // +0.0 and -0.0 hash alike.
    const double canonical = v == 0.0 ? 0.0 : v;
    h = mix64(h ^ std::bit_cast<std::uint64_t>(canonical));
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t salt) {
  return mix64(mix64(seed) ^ fnv1a64(tag) ^ mix64(salt + 0x632be59bd9b4e019ULL));
}

std::string hex_digest(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

}  // namespace pxai
