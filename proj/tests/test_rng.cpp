#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "regiondiff/rng.hpp"

using namespace regiondiff;

namespace {

std::vector<float> draw(const NoiseKey& key, std::size_t n) {
    std::vector<float> v(n);
    fill_gaussian(key, v);
    return v;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("gaussian moments") {
    const auto v = draw({11, NoisePurpose::post_step, 3, 2}, 400000);
    double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
    for (float x : v) {
        m1 += x;
        m2 += double(x) * x;
        m3 += double(x) * x * x;
        m4 += double(x) * x * x * x;
    }
    const double n = static_cast<double>(v.size());
    m1 /= n;
    m2 /= n;
    m3 /= n;
    m4 /= n;
    // Standard errors at n = 4e5: mean 0.0016, var 0.0022, skew 0.0039, kurtosis 0.0077.
    CHECK(std::abs(m1) < 0.008);
    CHECK(std::abs(m2 - 1.0) < 0.011);
    CHECK(std::abs(m3) < 0.02);
    CHECK(std::abs(m4 - 3.0) < 0.04);
}

TEST_CASE("gaussian distribution matches the normal cdf") {
    auto v = draw({5, NoisePurpose::initial_latent, 0, 0}, 100000);
    std::sort(v.begin(), v.end());
    double d = 0.0;
    const double n = static_cast<double>(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double f = normal_cdf(v[k]);
        d = std::max({d, std::abs(f - k / n), std::abs(f - (k + 1) / n)});
    }
    // Kolmogorov-Smirnov critical value at the 0.1% level is 1.95 / sqrt(n).
    CHECK(d < 1.95 / std::sqrt(n));
}

TEST_CASE("draws are a pure function of key and index") {
    const NoiseKey key{42, NoisePurpose::bootstrap_noise, 2, 7};
    const auto a = draw(key, 1001);
    const auto b = draw(key, 37);
    CHECK(std::equal(b.begin(), b.end(), a.begin()));
    CHECK(draw(key, 1001) == a);
}

TEST_CASE("different keys give uncorrelated streams") {
    const std::size_t n = 200000;
    const std::vector<NoiseKey> keys = {{1, NoisePurpose::post_step, 1, 0},
                                        {1, NoisePurpose::post_step, 1, 1},
                                        {1, NoisePurpose::post_step, 2, 0},
                                        {1, NoisePurpose::initial_latent, 1, 0},
                                        {2, NoisePurpose::post_step, 1, 0}};
    std::vector<std::vector<float>> s;
    for (const auto& k : keys) s.push_back(draw(k, n));
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            double c = 0.0;
            for (std::size_t e = 0; e < n; ++e) c += double(s[i][e]) * s[j][e];
            CAPTURE(i);
            CAPTURE(j);
            // Standard error of the sample correlation is 1/sqrt(n) = 0.0022.
            CHECK(std::abs(c / n) < 0.012);
        }
    }
    // Neighbouring elements, including the two halves of a pair.
    double lag = 0.0;
    for (std::size_t e = 0; e + 1 < n; ++e) lag += double(s[0][e]) * s[0][e + 1];
    CHECK(std::abs(lag / n) < 0.012);
}

TEST_CASE("uniform draws cover the unit interval") {
    const NoiseKey key{9, NoisePurpose::bootstrap_color, 0, 0};
    std::vector<int> bins(10, 0);
    int outside = 0;
    for (std::uint64_t k = 0; k < 100000; ++k) {
        const double u = uniform_at(key, k);
        if (u < 0.0 || u >= 1.0) {
            ++outside;
            continue;
        }
        ++bins[static_cast<std::size_t>(u * 10)];
    }
    CHECK(outside == 0);
    // Expected 10000 per bin, standard deviation 95.
    for (int b : bins) CHECK(std::abs(b - 10000) < 500);
}
