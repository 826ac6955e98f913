#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cbx::csv {

using Row = std::vector<std::string>;

// RFC 4180 subset: comma separator, double-quote quoting, LF or CRLF rows.
std::vector<Row> parse(std::string_view text);

std::string quote(std::string_view field);
std::string join(const Row& fields);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

}  // namespace cbx::csv
