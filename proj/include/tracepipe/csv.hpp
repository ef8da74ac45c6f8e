#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tracepipe {

using CsvRow = std::vector<std::string>;

// RFC 4180 quoting: fields with commas, quotes or newlines are quoted.
std::string csv_escape(const std::string& field);
void write_csv_row(std::ostream& out, const CsvRow& row);

// Shortest representation that parses back to the same double.
std::string format_number(double value);
// Fixed notation with `decimals` digits after the point.
std::string format_fixed(double value, int decimals);

// Parses a whole document; quoted fields may span lines.
std::vector<CsvRow> parse_csv(std::istream& in);

}  // namespace tracepipe
