#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "melle/rng.hpp"
#include "melle/tensor.hpp"

using melle::RngState;

TEST_SUITE("rng") {
  TEST_CASE("same seed reproduces the same stream") {
    RngState a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    RngState c(43);
    CHECK(RngState(42).next_u64() != c.next_u64());
  }

  TEST_CASE("forked streams are reproducible and disjoint from the parent") {
    RngState root(7);
    RngState f1 = root.fork(1);
    RngState f1_again = RngState(7).fork(1);
    RngState f2 = root.fork(2);
    std::vector<std::uint64_t> s1, s1b, s2, sp;
    for (int i = 0; i < 32; ++i) {
      s1.push_back(f1.next_u64());
      s1b.push_back(f1_again.next_u64());
      s2.push_back(f2.next_u64());
      sp.push_back(root.next_u64());
    }
    CHECK(s1 == s1b);
    CHECK(s1 != s2);
    CHECK(s1 != sp);
    // Forking must not consume parent state.
    RngState fresh(7);
    CHECK(fresh.next_u64() == RngState(7).next_u64());
  }

  TEST_CASE("uniform draws lie in (0, 1] with roughly the right mean") {
    RngState rng(99);
    const int n = 100000;
    double sum = 0.0, mn = 1e9, mx = -1e9;
    for (int i = 0; i < n; ++i) {
      const double u = rng.next_uniform();
      sum += u;
      mn = std::min(mn, u);
      mx = std::max(mx, u);
    }
    CHECK(mn > 0.0);
    CHECK(mx <= 1.0);
    CHECK(std::abs(sum / n - 0.5) < 0.005);
  }

  TEST_CASE("gaussian draws have unit-normal moments") {
    RngState rng(123);
    const int n = 1000000;
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = rng.next_gaussian();
      s1 += g;
      s2 += g * g;
      s3 += g * g * g;
    }
    const double mean = s1 / n;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.02);
    CHECK(std::abs(s3 / n) < 0.05);
  }

  TEST_CASE("gaussian tensors repeat with the state and differ across counters") {
    RngState a(55), b(55);
    const auto t1 = melle::Tensor<double>::gaussian(a, {4, 4});
    const auto t2 = melle::Tensor<double>::gaussian(b, {4, 4});
    CHECK(t1.data == t2.data);
    const auto t3 = melle::Tensor<double>::gaussian(a, {4, 4});
    CHECK(t1.data != t3.data);
  }

  TEST_CASE("u64 stream has no short-range repeats") {
    RngState rng(5);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 10000; ++i) seen.insert(rng.next_u64());
    CHECK(seen.size() == 10000);
  }
}
