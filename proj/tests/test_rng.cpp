#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ssgd/rng.hpp"
#include "ssgd/tensor.hpp"

using ssgd::RngState;
using ssgd::Tensor;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov statistic of a sample against N(0,1).
double ks_statistic(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = normal_cdf(xs[i]);
        d = std::max(d, std::max((i + 1) / n - f, f - i / n));
    }
    return d;
}

} // namespace

TEST_CASE("seeded streams replay bit-identically") {
    RngState a(0), b(0);
    for (int i = 0; i < 64; ++i) REQUIRE(a.next_u64() == b.next_u64());

    // Pinned reference draws for the documented generator (SplitMix64
    // counter construction). These must never change.
    RngState r(0);
    REQUIRE(r.next_u64() == 0xE220A8397B1DCDAFULL);
    REQUIRE(r.next_u64() == 0x6E789E6AA1B965F4ULL);
    REQUIRE(r.next_u64() == 0x06C45D188009454FULL);

    RngState g(0);
    REQUIRE(g.next_gaussian() == -1.8839083333524405);
    RngState d(0);
    REQUIRE(d.next_double() == 0.88331080821364261);
}

TEST_CASE("state is exactly the (seed, counter) pair") {
    RngState a(7);
    a.next_u64();
    a.next_u64();
    RngState resumed(7, a.counter());
    REQUIRE(a.next_u64() == resumed.next_u64());
}

TEST_CASE("distinct seeds give distinct first draws") {
    REQUIRE(RngState(0).next_u64() != RngState(1).next_u64());
}

TEST_CASE("gaussian sample moments over 1e6 draws") {
    RngState r(123);
    const std::size_t n = 1'000'000;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = r.next_gaussian();
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gaussian tensor draws pass a KS test against N(0,1)") {
    RngState r(5);
    Tensor t = ssgd::gaussian(r, 100'000);
    REQUIRE(ks_statistic(t.values()) < 0.01);
}

TEST_CASE("gaussian rejects an empty request") {
    RngState r(0);
    REQUIRE_THROWS_AS(ssgd::gaussian(r, 0), ssgd::InvalidArgument);
}

TEST_CASE("successive gaussian calls do not repeat the stream") {
    RngState r(9);
    Tensor first = ssgd::gaussian(r, 128);
    Tensor second = ssgd::gaussian(r, 128);
    std::set<double> seen(first.values().begin(), first.values().end());
    for (double v : second.values()) REQUIRE(!seen.contains(v));
}

TEST_CASE("split produces an independent child stream") {
    RngState parent(42);
    RngState sibling(42);
    RngState child = parent.split();
    // Parent advanced by exactly one draw.
    sibling.next_u64();
    REQUIRE(parent.next_u64() == sibling.next_u64());
    // Child does not mirror the parent's continuation.
    RngState parent2(42);
    parent2.next_u64();
    bool all_equal = true;
    for (int i = 0; i < 16; ++i) all_equal &= (child.next_u64() == parent2.next_u64());
    REQUIRE(!all_equal);
    // Same split point, same child.
    RngState again(42);
    REQUIRE(again.split() == RngState(42).split());
}
