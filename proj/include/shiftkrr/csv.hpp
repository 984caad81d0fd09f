#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace shiftkrr {

// Shortest round-trip is not used: CSV floats always carry 17 significant
// digits so output is byte-stable.
std::string format_double(double v);

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace shiftkrr
