#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace ript {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad call-site arguments (shape mismatch, k > N, ...).
struct ArgumentError : Error {
    using Error::Error;
};

// Unparseable input file; message carries path and line number.
struct FormatError : Error {
    using Error::Error;
};

// Degenerate geometry (zero-area mesh, all points identical, ...).
struct GeometryError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Missing or inconsistent data files.
struct DataError : Error {
    using Error::Error;
};

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic child-seed derivation so independent RNG streams can be
// handed to parallel workers without sharing an engine.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> path) {
    uint64_t s = base;
    (void)splitmix64(s);
    for (uint64_t p : path) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        (void)splitmix64(s);
    }
    return splitmix64(s);
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace ript
