#pragma once

// Locale-free number formatting shared by every writer that must produce
// byte-identical output across runs and machines.

#include <string>

namespace qpkpd {

// Shortest decimal form that round-trips the exact double.
void append_double(std::string& out, double v);
std::string format_double(double v);

} // namespace qpkpd
