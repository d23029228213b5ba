#include "qpkpd/text.hpp"

#include <array>
#include <charconv>

namespace qpkpd {

void append_double(std::string& out, double v) {
    std::array<char, 32> buf;
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), ptr);
}

std::string format_double(double v) {
    std::string s;
    append_double(s, v);
    return s;
}

} // namespace qpkpd
