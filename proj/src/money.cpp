#include "tracepipe/money.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>

#include "tracepipe/core.hpp"
#include "tracepipe/hash.hpp"

namespace tracepipe {

using nlohmann::json;

std::string Money::to_usd_string(int decimals) const {
  if (decimals < 0 || decimals > 9) throw Error("Money: decimals must be in [0, 9]");
  std::int64_t divisor = 1;
  for (int i = decimals; i < 9; ++i) divisor *= 10;
  const bool negative = nano_ < 0;
  const std::uint64_t magnitude =
      negative ? static_cast<std::uint64_t>(-(nano_ + 1)) + 1 : static_cast<std::uint64_t>(nano_);
  const std::uint64_t d = static_cast<std::uint64_t>(divisor);
  const std::uint64_t scaled = (magnitude + d / 2) / d;

  std::uint64_t unit = 1;
  for (int i = 0; i < decimals; ++i) unit *= 10;
  std::string out = negative && scaled != 0 ? "-" : "";
  out += std::to_string(scaled / unit);
  if (decimals > 0) {
    std::string frac = std::to_string(scaled % unit);
    out += '.';
    out += std::string(static_cast<std::size_t>(decimals) - frac.size(), '0');
    out += frac;
  }
  return out;
}

std::int64_t parse_fixed_decimal(std::string_view text, int scale) {
  const std::string original(text);
  if (!text.empty() && text.front() == '$') text.remove_prefix(1);
  if (text.empty()) throw Error("invalid decimal '" + original + "'");

  std::int64_t value = 0;
  int frac_digits = -1;
  constexpr auto kMax = std::numeric_limits<std::int64_t>::max() / 10;
  for (char c : text) {
    if (c == '.') {
      if (frac_digits >= 0) throw Error("invalid decimal '" + original + "'");
      frac_digits = 0;
      continue;
    }
    if (!std::isdigit(static_cast<unsigned char>(c))) throw Error("invalid decimal '" + original + "'");
    if (frac_digits >= 0 && ++frac_digits > scale) {
      // Trailing zeros beyond the scale are harmless.
      if (c == '0') {
        --frac_digits;
        continue;
      }
      throw Error("decimal '" + original + "' has more than " + std::to_string(scale) +
                  " fractional digits");
    }
    if (value > kMax) throw Error("decimal '" + original + "' out of range");
    value = value * 10 + (c - '0');
  }
  for (int i = std::max(frac_digits, 0); i < scale; ++i) {
    if (value > kMax) throw Error("decimal '" + original + "' out of range");
    value *= 10;
  }
  return value;
}

Money parse_usd(std::string_view text) { return Money::from_nano_usd(parse_fixed_decimal(text, 9)); }

namespace {

// JSON numbers are accepted for convenience; the shortest round-trip
// representation of a double is its decimal literal.
std::int64_t rate_from_json(const json& v, const std::string& where) {
  if (v.is_string()) return parse_fixed_decimal(v.get<std::string>(), 6);
  if (v.is_number()) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v.get<double>(), std::chars_format::fixed);
    if (ec != std::errc()) throw Error("price " + where + " is not representable");
    return parse_fixed_decimal(std::string_view(buf, static_cast<std::size_t>(ptr - buf)), 6);
  }
  throw Error("price " + where + " must be a decimal string or number");
}

std::string rate_to_string(std::int64_t micro) {
  return Money::from_nano_usd(micro * 1000).to_usd_string(6);
}

}  // namespace

PriceSheet PriceSheet::defaults() {
  PriceSheet sheet;
  sheet.set("A", {"GPT-4o", 5'000, 20'000});
  sheet.set("B", {"Claude Sonnet 4", 3'000, 15'000});
  sheet.set("C", {"Gemini 2.5 Pro", 1'250, 10'000});
  return sheet;
}

void PriceSheet::set(const std::string& key, ModelPrice price) {
  if (key.empty()) throw Error("price sheet: empty model key");
  if (price.input_micro_usd_per_1k <= 0 || price.output_micro_usd_per_1k <= 0) {
    throw Error("price sheet: rates for '" + key + "' must be positive");
  }
  rows_[key] = std::move(price);
}

const ModelPrice* PriceSheet::find(std::string_view key) const {
  auto it = rows_.find(key);
  return it == rows_.end() ? nullptr : &it->second;
}

PriceSheet PriceSheet::from_json(const json& j) {
  if (!j.is_object()) throw Error("price sheet must be a JSON object");
  if (auto v = j.find("schema_version"); v != j.end() && *v != 1) {
    throw Error("price sheet: unsupported schema_version " + v->dump());
  }
  auto models = j.find("models");
  if (models == j.end() || !models->is_object()) throw Error("price sheet: missing 'models' object");
  PriceSheet sheet;
  for (const auto& [key, row] : models->items()) {
    if (!row.is_object()) throw Error("price sheet: row '" + key + "' must be an object");
    ModelPrice price;
    price.display_name = row.value("display_name", key);
    if (!row.contains("input_per_1k") || !row.contains("output_per_1k")) {
      throw Error("price sheet: row '" + key + "' needs input_per_1k and output_per_1k");
    }
    price.input_micro_usd_per_1k = rate_from_json(row["input_per_1k"], key + ".input_per_1k");
    price.output_micro_usd_per_1k = rate_from_json(row["output_per_1k"], key + ".output_per_1k");
    sheet.set(key, std::move(price));
  }
  return sheet;
}

PriceSheet PriceSheet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open price sheet '" + path.string() + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error("price sheet '" + path.string() + "': " + e.what());
  }
}

json PriceSheet::to_json() const {
  json models = json::object();
  for (const auto& [key, price] : rows_) {
    models[key] = {{"display_name", price.display_name},
                   {"input_per_1k", rate_to_string(price.input_micro_usd_per_1k)},
                   {"output_per_1k", rate_to_string(price.output_micro_usd_per_1k)}};
  }
  return {{"schema_version", 1}, {"models", models}};
}

std::string PriceSheet::hash() const { return sha256_hex(to_json().dump()); }

}  // namespace tracepipe
