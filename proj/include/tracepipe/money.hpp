#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "json.hpp"

namespace tracepipe {

// Fixed-point US dollars, one unit = 1e-9 USD. Prices are quoted in
// micro-USD per 1,000 tokens, so tokens * rate lands exactly on this grid
// and sums never drift.
class Money {
 public:
  constexpr Money() = default;
  static constexpr Money from_nano_usd(std::int64_t nano) { return Money(nano); }

  constexpr std::int64_t nano_usd() const { return nano_; }
  double usd() const { return static_cast<double>(nano_) * 1e-9; }

  // Decimal string rounded half away from zero, e.g. "0.007000".
  std::string to_usd_string(int decimals = 6) const;

  constexpr Money& operator+=(Money other) {
    nano_ += other.nano_;
    return *this;
  }
  friend constexpr Money operator+(Money a, Money b) { return a += b; }
  friend constexpr auto operator<=>(Money, Money) = default;

 private:
  constexpr explicit Money(std::int64_t nano) : nano_(nano) {}
  std::int64_t nano_ = 0;
};

// Parses a non-negative decimal ("0.00125", "$0.0050", "7") into an integer
// count of 10^-scale units. Throws Error when more than `scale` fractional
// digits are given or the text is not a plain decimal.
std::int64_t parse_fixed_decimal(std::string_view text, int scale);

Money parse_usd(std::string_view text);

struct ModelPrice {
  std::string display_name;
  std::int64_t input_micro_usd_per_1k = 0;
  std::int64_t output_micro_usd_per_1k = 0;
};

// Per-model token rates keyed by model key ("A", "B", ...).
class PriceSheet {
 public:
  PriceSheet() = default;

  // Published per-1K-token list prices for the three reference models.
  static PriceSheet defaults();
  static PriceSheet from_json(const nlohmann::json& j);
  static PriceSheet load(const std::filesystem::path& path);

  // Throws Error unless both rates are > 0.
  void set(const std::string& key, ModelPrice price);
  const ModelPrice* find(std::string_view key) const;
  const std::map<std::string, ModelPrice, std::less<>>& rows() const { return rows_; }

  nlohmann::json to_json() const;
  // SHA-256 of the canonical JSON form.
  std::string hash() const;

 private:
  std::map<std::string, ModelPrice, std::less<>> rows_;
};

}  // namespace tracepipe
