#include "regiondiff/rng.hpp"

#include <cmath>

namespace regiondiff {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t NoiseKey::stream_id() const {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
    h = splitmix64(h ^ step);
    h = splitmix64(h ^ slot);
    return h;
}

namespace {
double to_unit(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}
}  // namespace

double uniform_at(const NoiseKey& key, std::uint64_t counter) {
    return to_unit(splitmix64(key.stream_id() ^ splitmix64(counter)));
}

void fill_gaussian(const NoiseKey& key, std::span<float> out) {
    const std::uint64_t id = key.stream_id();
    for (std::size_t e = 0; e < out.size(); e += 2) {
        const std::uint64_t pair = e / 2;
        double u = 0.0, v = 0.0, s = 0.0;
        for (std::uint64_t attempt = 0;; ++attempt) {
            const std::uint64_t base = splitmix64(id ^ splitmix64(pair ^ (attempt << 40)));
            u = 2.0 * to_unit(base) - 1.0;
            v = 2.0 * to_unit(splitmix64(base)) - 1.0;
            s = u * u + v * v;
            if (s > 0.0 && s < 1.0) break;
        }
        // Single-precision log is ample for float output and much cheaper.
        const double f = std::sqrt(-2.0 * static_cast<double>(std::log(static_cast<float>(s))) / s);
        out[e] = static_cast<float>(u * f);
        if (e + 1 < out.size()) {
            out[e + 1] = static_cast<float>(v * f);
        }
    }
}

}  // namespace regiondiff
