#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "cellxai/rng.hpp"

using cellxai::CounterRng;

TEST(CounterRng, SameSeedSameStream) {
    CounterRng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(CounterRng, StreamsAndSplitsDiffer) {
    CounterRng a(42, 0), b(42, 1);
    EXPECT_NE(a.next_u64(), b.next_u64());
    const CounterRng base(42);
    CounterRng c = base.split(0), d = base.split(1);
    EXPECT_NE(c.next_u64(), d.next_u64());
    CounterRng e = base.split(0);
    CounterRng f = base.split(0);
    EXPECT_EQ(e.next_u64(), f.next_u64());
}

TEST(CounterRng, UniformInUnitInterval) {
    CounterRng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(CounterRng, BelowIsRoughlyUniform) {
    CounterRng rng(9);
    std::array<int, 7> counts{};
    const int draws = 70000;
    for (int i = 0; i < draws; ++i) ++counts[rng.below(7)];
    // 5 sigma of a binomial(70000, 1/7)
    const double sigma = std::sqrt(draws * (1.0 / 7) * (6.0 / 7));
    for (int c : counts) EXPECT_NEAR(c, draws / 7.0, 5 * sigma);
}

TEST(CounterRng, ShuffleIsPermutation) {
    CounterRng rng(1);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(std::span<int>(v));
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}
