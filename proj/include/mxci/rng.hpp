#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mxci {

/// splitmix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for the substream identified by (master, replication, tag).
/// Adding a new tag never perturbs the draws of existing tags.
constexpr std::uint64_t substream_seed(std::uint64_t master, std::uint64_t rep,
                                       std::string_view tag) noexcept {
    return mix64(mix64(mix64(master) ^ rep) ^ fnv1a64(tag));
}

/// One explicit generator per stream. Holds the normal distribution so the
/// cached second deviate of the polar method stays with the stream.
class Rng {
public:
    using engine_type = std::mt19937_64;

    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return unif_(engine_); }
    double normal() { return normal_(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    engine_type& engine() noexcept { return engine_; }

private:
    engine_type engine_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace mxci
