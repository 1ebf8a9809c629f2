#include "doctest.h"

#include "handlift/rng.hpp"

#include <cmath>
#include <set>
#include <vector>

using namespace handlift;

TEST_CASE("published test vectors") {
  // First three outputs of the reference SplitMix64 generator seeded with 0.
  CHECK(splitmix64_mix(0x9E3779B97F4A7C15ULL) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64_mix(2 * 0x9E3779B97F4A7C15ULL) == 0x6E789E6AA1B965F4ULL);
  CHECK(splitmix64_mix(3 * 0x9E3779B97F4A7C15ULL) == 0x06C45D188009454FULL);
  // FNV-1a 64-bit.
  CHECK(fnv1a64("") == 0xCBF29CE484222325ULL);
  CHECK(fnv1a64("a") == 0xAF63DC4C8601EC8CULL);
  CHECK(fnv1a64("foobar") == 0x85944171F73967E8ULL);
}

TEST_CASE("stream definition") {
  const std::uint64_t key = splitmix64_mix(splitmix64_mix(7 ^ fnv1a64("data")) + 3);
  CounterRng r(7, "data", 3);
  for (std::uint64_t n = 1; n <= 5; ++n) CHECK(r.next_u64() == splitmix64_mix(key + n * 0x9E3779B97F4A7C15ULL));
  CHECK(r.counter() == 5);
}

TEST_CASE("streams are reproducible and distinct") {
  CounterRng a(1, "init"), b(1, "init"), c(1, "noise"), d(2, "init"), e(1, "init", 1);
  std::set<std::uint64_t> firsts;
  for (auto* r : {&c, &d, &e}) firsts.insert(r->next_u64());
  const auto va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(firsts.count(va) == 0);
  CHECK(firsts.size() == 3);
}

TEST_CASE("fill matches successive draws") {
  CounterRng a(5, "dropout"), b(5, "dropout");
  a.next_u64();
  b.next_u64();
  std::vector<std::uint64_t> block(17);
  a.fill(block);
  for (auto v : block) CHECK(v == b.next_u64());
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distributions") {
  CounterRng r(11, "test");
  const int n = 200000;
  double sum = 0.0, sq = 0.0, lo = 1.0, hi = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));

  sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));

  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) CHECK(c == doctest::Approx(10000).epsilon(0.05));
  CHECK(r.below(1) == 0);
  CHECK(r.below(0) == 0);

  int heads = 0;
  for (int i = 0; i < 100000; ++i) heads += r.bernoulli(0.25);
  CHECK(heads / 1e5 == doctest::Approx(0.25).epsilon(0.03));
  CHECK(!r.bernoulli(0.0));
  CHECK(r.bernoulli(1.0));
}
