#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mixnoise {

/// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed of the substream named `label` under `master`. Depends only on the
/// pair, so adding a new labelled consumer never shifts an existing stream.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label) noexcept
{
    return mix64(master ^ mix64(fnv1a64(label)));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept
{
    return mix64(master ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Seeded 64-bit Mersenne Twister with the draws the library needs.
/// Owned per task; never shared between threads.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : seed_{seed}, engine_{seed} {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    [[nodiscard]] Rng substream(std::string_view label) const { return Rng{derive_seed(seed_, label)}; }
    [[nodiscard]] Rng substream(std::uint64_t index) const { return Rng{derive_seed(seed_, index)}; }

    double normal() { return normal_(engine_); }
    double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>{0.0, 1.0}(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>{lo, hi}(engine_); }
    double gamma(double shape, double scale) { return std::gamma_distribution<double>{shape, scale}(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace mixnoise
