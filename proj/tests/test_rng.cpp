#include <gtest/gtest.h>

#include <set>

#include "collaq/rng.hpp"

using namespace collaq;

TEST(Rng, SameSeedSameSequence) {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, NextDoubleInUnitInterval) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.next_double();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(Rng, UniformIntBoundsAndRejection) {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const int x = rng.uniform_int(7);
    EXPECT_GE(x, 0);
    EXPECT_LT(x, 7);
  }
  EXPECT_THROW(rng.uniform_int(0), std::invalid_argument);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(11);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(v);
  std::set<int> seen(v.begin(), v.end());
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Rng, StreamDerivationSeparatesNamesAndCounters) {
  const std::uint64_t master = 42;
  EXPECT_NE(derive_stream(master, "env"), derive_stream(master, "init"));
  EXPECT_NE(derive_stream(master, "init", 0), derive_stream(master, "init", 1));
  EXPECT_EQ(derive_stream(master, "env", 3), derive_stream(master, "env", 3));
  EXPECT_NE(derive_stream(1, "env"), derive_stream(2, "env"));
}
