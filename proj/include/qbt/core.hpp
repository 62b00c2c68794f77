#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qbt {

using Sequence = std::vector<int>;
using Rng = std::mt19937_64;

// The two synthetic languages. Every model call is tagged with one of them.
enum class Lang : int { S = 0, T = 1 };

constexpr Lang other(Lang lang) { return lang == Lang::S ? Lang::T : Lang::S; }
constexpr int index(Lang lang) { return static_cast<int>(lang); }

inline std::string_view to_string(Lang lang) { return lang == Lang::S ? "s" : "t"; }

inline std::string direction_name(Lang from) {
  return from == Lang::S ? "s2t" : "t2s";
}

inline Lang parse_lang(std::string_view text) {
  if (text == "s") return Lang::S;
  if (text == "t") return Lang::T;
  throw std::invalid_argument("unknown language tag '" + std::string(text) + "'");
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when a loss or gradient leaves the finite range; training aborts.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a, used for corpus/spec/parameter fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 1099511628211ULL;
    }
  }
  void update(std::string_view text) { update(text.data(), text.size()); }
  template <typename T>
  void update_value(const T& value) {
    update(&value, sizeof(T));
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 14695981039346656037ULL;
};

inline std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace qbt
