#include "qpkpd/rng.hpp"

#include <cmath>

namespace qpkpd {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t hash_label(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

RngStream::RngStream(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t key = splitmix64(seed);
    for (uint64_t t : tags)
        key = splitmix64(key ^ t);
    engine_.seed(key);
}

double RngStream::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
}

uint64_t RngStream::below(uint64_t n) {
    // Rejection sampling over the top of the range to stay unbiased.
    const uint64_t limit = n * (UINT64_MAX / n);
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

} // namespace qpkpd
