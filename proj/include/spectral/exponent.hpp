// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>

namespace spectral {

/// The power p applied to every singular value: U diag(sigma^p) V^T.
enum class SpectralExponent { One, Half, Quarter, Zero };

inline constexpr std::array<SpectralExponent, 4> kAllExponents = {
    SpectralExponent::One, SpectralExponent::Half, SpectralExponent::Quarter,
    SpectralExponent::Zero};

constexpr double exponent_value(SpectralExponent p) {
  switch (p) {
    case SpectralExponent::One: return 1.0;
    case SpectralExponent::Half: return 0.5;
    case SpectralExponent::Quarter: return 0.25;
    case SpectralExponent::Zero: return 0.0;
  }
  return 1.0;
}

/// Optimizer-name suffix: "" / "S" / "Q" / "Z".
constexpr std::string_view exponent_suffix(SpectralExponent p) {
  switch (p) {
    case SpectralExponent::One: return "";
    case SpectralExponent::Half: return "S";
    case SpectralExponent::Quarter: return "Q";
    case SpectralExponent::Zero: return "Z";
  }
  return "";
}

constexpr std::string_view exponent_token(SpectralExponent p) {
  switch (p) {
    case SpectralExponent::One: return "one";
    case SpectralExponent::Half: return "half";
    case SpectralExponent::Quarter: return "quarter";
    case SpectralExponent::Zero: return "zero";
  }
  return "one";
}

/// Accepts the word form, the numeric form or the suffix letter:
/// one|1|1.0, half|0.5|1/2|s, quarter|0.25|1/4|q, zero|0|0.0|z.
inline std::optional<SpectralExponent> parse_exponent(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "one" || t == "1" || t == "1.0") return SpectralExponent::One;
  if (t == "half" || t == "0.5" || t == "1/2" || t == "s") return SpectralExponent::Half;
  if (t == "quarter" || t == "0.25" || t == "1/4" || t == "q") return SpectralExponent::Quarter;
  if (t == "zero" || t == "0" || t == "0.0" || t == "z") return SpectralExponent::Zero;
  return std::nullopt;
}

}  // namespace spectral
