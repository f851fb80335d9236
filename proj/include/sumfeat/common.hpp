#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sumfeat {

inline constexpr std::string_view kVersion = "0.1.0";

/// Base class of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TextError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Quality dimension under evaluation. Only relevance and coherence are
/// supported; anything else is rejected when parsed.
enum class Dimension { kRelevance, kCoherence };

inline constexpr std::array<Dimension, 2> kAllDimensions = {
    Dimension::kRelevance, Dimension::kCoherence};

inline std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::kRelevance:
      return "relevance";
    case Dimension::kCoherence:
      return "coherence";
  }
  return "unknown";
}

inline bool try_parse_dimension(std::string_view name, Dimension& out) {
  if (name == "relevance") {
    out = Dimension::kRelevance;
    return true;
  }
  if (name == "coherence") {
    out = Dimension::kCoherence;
    return true;
  }
  return false;
}

inline Dimension parse_dimension(std::string_view name) {
  Dimension d;
  if (!try_parse_dimension(name, d)) {
    throw ConfigError("unknown dimension '" + std::string(name) +
                      "' (expected relevance or coherence)");
  }
  return d;
}

}  // namespace sumfeat
