#pragma once

#include <cstdint>
#include <numeric>
#include <string>

namespace psychdx::util {

/// Exact fraction for vote shares, split fractions, and accuracy.
/// Always stored normalized with a positive denominator.
struct Ratio {
    std::int64_t num = 0;
    std::int64_t den = 1;

    constexpr Ratio() = default;
    constexpr Ratio(std::int64_t n, std::int64_t d) : num(n), den(d) { normalize(); }

    constexpr void normalize() {
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const auto g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
    }

    constexpr double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

    friend constexpr bool operator==(const Ratio& a, const Ratio& b) {
        return a.num == b.num && a.den == b.den;
    }
    friend constexpr bool operator<(const Ratio& a, const Ratio& b) {
        return a.num * b.den < b.num * a.den;
    }
    friend constexpr Ratio operator+(const Ratio& a, const Ratio& b) {
        return Ratio{a.num * b.den + b.num * a.den, a.den * b.den};
    }

    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

}  // namespace psychdx::util
