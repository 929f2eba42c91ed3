#include <doctest.h>

#include <cmath>
#include <set>

#include "stlkit/rng.hpp"
#include "stlkit/tensor.hpp"
#include "test_helpers.hpp"

using namespace stlkit;

TEST_CASE("tensor dims and indexing") {
  Tensor4f t(2, 3, 4, 5);
  CHECK(t.size() == 2u * 3 * 4 * 5);
  CHECK(t.dims().count() == t.size());
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
  CHECK(t(0, 0, 0, 0) == 0.0f);
  CHECK_THROWS_AS(Tensor4f(-1, 1, 1, 1), ConfigError);
}

TEST_CASE("tensor row-major layout matches (n,c,h,w) order") {
  Tensor4f t(1, 2, 2, 2);
  float v = 0;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) t(0, c, y, x) = v++;
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == static_cast<float>(i));
}

TEST_CASE("all_finite flags NaN and Inf") {
  Tensor4d t(1, 1, 2, 2, 1.0);
  CHECK(all_finite(t));
  t[2] = std::nan("");
  CHECK_FALSE(all_finite(t));
  t[2] = INFINITY;
  CHECK_FALSE(all_finite(t));
}

TEST_CASE("rng: identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(43);
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 10; ++i) differs |= a2.next_u64() != c.next_u64();
  CHECK(differs);
}

TEST_CASE("rng: state round trip resumes the stream") {
  Rng a(7);
  for (int i = 0; i < 17; ++i) a.next_u64();
  const auto snapshot = a.state();
  std::vector<std::uint64_t> expect;
  for (int i = 0; i < 50; ++i) expect.push_back(a.next_u64());
  Rng b(0);
  b.set_state(snapshot);
  for (int i = 0; i < 50; ++i) CHECK(b.next_u64() == expect[i]);
}

TEST_CASE("rng: below stays in range and covers values") {
  Rng rng(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 3000; ++i) {
    const auto v = rng.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK(rng.below(1) == 0);
}

TEST_CASE("rng: gaussian moments") {
  Rng rng(11);
  const int n = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.005);
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 0.005);
}

TEST_CASE("rng: derived streams are independent of each other") {
  const auto s1 = derive_seed(123, "init:a");
  const auto s2 = derive_seed(123, "init:b");
  const auto s3 = derive_seed(124, "init:a");
  CHECK(s1 != s2);
  CHECK(s1 != s3);
  CHECK(derive_seed(123, "init:a") == s1);
}

TEST_CASE("rng: shuffle is deterministic per seed") {
  std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto v2 = v1;
  Rng a(9), b(9);
  a.shuffle(v1.begin(), v1.end());
  b.shuffle(v2.begin(), v2.end());
  CHECK(v1 == v2);
}
