#include <doctest.h>

#include <algorithm>
#include <array>

#include "prunerzero/rng.hpp"

using prunerzero::Rng;

TEST_CASE("mt19937_64 stream matches the standard's 10000th value") {
  Rng rng(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  CHECK(v == 9981545732273789042ULL);
}

TEST_CASE("uniform_index stays in range and covers every bucket") {
  Rng rng(3);
  std::array<int, 7> hits{};
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.uniform_index(7);
    REQUIRE(v < 7);
    ++hits[v];
  }
  for (int h : hits) CHECK(h > 800);
  CHECK(rng.uniform_index(1) == 0);
  CHECK(rng.uniform_index(0) == 0);
}

TEST_CASE("uniform01 and normal moments") {
  Rng rng(11);
  double s = 0, s2 = 0, mn = 1, mx = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    mn = std::min(mn, u);
    mx = std::max(mx, u);
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(mn >= 0.0);
  CHECK(mx < 1.0);
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(-3, 3) == b.uniform_int(-3, 3));
  }
}
