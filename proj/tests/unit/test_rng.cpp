#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ifprobe/hash.hpp"
#include "ifprobe/rng.hpp"

using ifprobe::SplitMix64;

TEST_CASE("splitmix64 reference outputs") {
  SplitMix64 rng(1234567);
  CHECK(rng.next() == 6457827717110365317ULL);
  CHECK(rng.next() == 3203168211198807973ULL);
  CHECK(rng.next() == 9817491932198370423ULL);
  CHECK(rng.next() == 4593380528125082431ULL);
  CHECK(rng.next() == 16408922859458223821ULL);
  CHECK(SplitMix64(0).next() == 0xe220a8397b1dcdafULL);
}

TEST_CASE("uniform and below derive from next") {
  SplitMix64 a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == static_cast<double>(b.next() >> 11) * 0x1.0p-53);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  SplitMix64 c(5), d(5);
  for (std::uint64_t n = 1; n < 50; ++n) CHECK(c.below(n) == d.next() % n);
}

TEST_CASE("gaussian is one Box-Muller draw from two uniforms") {
  SplitMix64 a(7), b(7);
  for (int i = 0; i < 20; ++i) {
    const double u1 = static_cast<double>((b.next() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(b.next() >> 11) * 0x1.0p-53;
    const double expected = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    CHECK(a.gaussian() == doctest::Approx(expected).epsilon(1e-15));
  }
  SplitMix64 g(11);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = g.gaussian();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(ifprobe::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(ifprobe::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(ifprobe::fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("derive_seed separates keys and bases") {
  CHECK(ifprobe::derive_seed(1, "x") == SplitMix64(1 ^ ifprobe::fnv1a64("x")).next());
  CHECK(ifprobe::derive_seed(1, "x") != ifprobe::derive_seed(1, "y"));
  CHECK(ifprobe::derive_seed(1, "x") != ifprobe::derive_seed(2, "x"));
}

TEST_CASE("shuffle is a seeded permutation") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::vector<int> v(17);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    SplitMix64 r1(seed), r2(seed);
    ifprobe::shuffle(std::span<int>(v), r1);
    ifprobe::shuffle(std::span<int>(w), r2);
    CHECK(v == w);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 17; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  }
  // Hand-run of the pinned walk for three items.
  std::vector<int> v = {0, 1, 2};
  SplitMix64 rng(3), ref(3);
  ifprobe::shuffle(std::span<int>(v), rng);
  std::vector<int> e = {0, 1, 2};
  std::swap(e[2], e[ref.next() % 3]);
  std::swap(e[1], e[ref.next() % 2]);
  CHECK(v == e);
}

TEST_CASE("sha256 known digests") {
  CHECK(ifprobe::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(ifprobe::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
