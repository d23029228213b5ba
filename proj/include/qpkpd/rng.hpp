#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qpkpd {

// Deterministic, named random streams.
//
// Every stochastic component draws from its own stream, keyed by the run seed
// plus a list of tags (a purpose label, subject id, iteration number, ...).
// Two streams with different tag lists are statistically independent for our
// purposes, and a given (seed, tags) pair always yields the same sequence.
// This is what makes runs reproducible independently of worker count: work
// units never share a generator, so scheduling cannot reorder draws.

uint64_t splitmix64(uint64_t x);

// FNV-1a over the bytes of a label, for mixing strings into a stream key.
uint64_t hash_label(std::string_view s);

class RngStream {
public:
    // Key = seed mixed with each tag in order via splitmix64.
    RngStream(uint64_t seed, std::initializer_list<uint64_t> tags);

    uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform();

    // Uniform on [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via the polar (Marsaglia) method.  Implemented here
    // rather than through std::normal_distribution so the draw sequence is
    // pinned by this code, not by the standard library in use.
    double normal();

    // Integer in [0, n).
    uint64_t below(uint64_t n);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace qpkpd
