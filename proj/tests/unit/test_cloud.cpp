#include <doctest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "pcet/cloud.hpp"

using namespace pcet;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, double spread = 5.0) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-1, 1)});
  return c;
}

bool member(const Vec3& p, const PointCloud& c) {
  return std::find(c.points.begin(), c.points.end(), p) != c.points.end();
}

double min_pairwise(const PointCloud& c, const std::vector<std::size_t>& idx) {
  double m = 1e300;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) m = std::min(m, squared_distance(c.points[idx[i]], c.points[idx[j]]));
  return std::sqrt(m);
}

}  // namespace

TEST_CASE("rng is reproducible and splitmix derived seeds differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.index(7) < 7);
  }
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
}

TEST_CASE("fps trivial cases and errors") {
  Rng rng(1);
  const auto c = random_cloud(20, rng);
  CHECK(fps(c, 1, 7) == std::vector<std::size_t>{7});
  auto all = fps(c, 20, 0);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 20);
  CHECK_THROWS_AS(fps(PointCloud{}, 1), std::invalid_argument);
  CHECK_THROWS_AS(fps(c, 0), std::invalid_argument);
  CHECK_THROWS_AS(fps(c, 21), std::invalid_argument);
  CHECK_THROWS_AS(fps(c, 3, 20), std::invalid_argument);
}

TEST_CASE("fps agrees with the brute-force greedy oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(64);
    auto c = random_cloud(n, rng);
    // Duplicates and lattice points force exact ties.
    if (trial % 3 == 0 && n > 4) {
      c.points[n - 1] = c.points[0];
      for (std::size_t i = 0; i < n; ++i) c.points[i] = {std::round(c.points[i].x), std::round(c.points[i].y), 0.0};
    }
    const std::size_t k = 1 + rng.index(n);
    const std::size_t s = rng.index(n);
    CHECK(fps(c, k, s) == oracle::brute_fps(c.points, k, s));
  }
}

TEST_CASE("fps spreads picks wider than random subsets on clustered data") {
  Rng rng(3);
  PointCloud c;
  for (int cluster = 0; cluster < 4; ++cluster) {
    const Vec3 centre{rng.uniform(-10, 10), rng.uniform(-10, 10), 0};
    for (int i = 0; i < 50; ++i) c.points.push_back(centre + Vec3{rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3)});
  }
  const double fps_min = min_pairwise(c, fps(c, 8, 0));
  double random_mean = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> idx;
    const auto sub = resample_to(PointCloud{std::vector<Vec3>(c.points)}, 8, rng);
    for (const auto& p : sub.points) idx.push_back(static_cast<std::size_t>(std::find(c.points.begin(), c.points.end(), p) - c.points.begin()));
    random_mean += min_pairwise(c, idx) / 100;
  }
  CHECK(fps_min >= random_mean);
}

TEST_CASE("resample_to size, membership and determinism") {
  Rng rng(4);
  const auto c = random_cloud(100, rng);
  CHECK_THROWS_AS(resample_to(PointCloud{}, 3, rng), std::invalid_argument);
  const auto same = resample_to(c, 100, rng);
  CHECK(same.points == c.points);

  Rng r1(9), r2(9);
  const auto a = resample_to(c, 10, r1), b = resample_to(c, 10, r2);
  CHECK(a.points == b.points);
  CHECK(a.size() == 10);
  for (const auto& p : a.points) CHECK(member(p, c));

  const auto small = random_cloud(3, rng);
  const auto up = resample_to(small, 7, rng);
  CHECK(up.size() == 7);
  for (const auto& p : up.points) CHECK(member(p, small));
}

TEST_CASE("crop_and_fix") {
  Rng rng(5);
  const Box3D box({0, 0, 0}, {2, 2, 2}, 0.4);
  PointCloud inside;
  while (inside.size() < 300) {
    const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (point_in_box(p, box)) inside.points.push_back(p);
  }
  PointCloud mixed = inside;
  for (int i = 0; i < 200; ++i) mixed.points.push_back({rng.uniform(3, 9), rng.uniform(3, 9), 0});

  const auto r = crop_and_fix(mixed, box, 256, rng);
  CHECK(r.cloud.size() == 256);
  CHECK(r.inside == 300);
  CHECK_FALSE(r.degenerate);
  for (const auto& p : r.cloud.points) CHECK(member(p, inside));

  PointCloud exact{std::vector<Vec3>(inside.points.begin(), inside.points.begin() + 256)};
  CHECK(crop_and_fix(exact, box, 256, rng).cloud.points == exact.points);

  PointCloud far{{{50, 50, 50}}};
  const auto d = crop_and_fix(far, box, 16, rng);
  CHECK(d.degenerate);
  CHECK(d.cloud.size() == 16);
  for (const auto& p : d.cloud.points) CHECK(p == box.center());
}

TEST_CASE("merged template aligns the previous crop") {
  Rng rng(6);
  const Box3D prev_box({2, 1, 0}, {4, 2, 1.5}, 0.2);
  const Box3D cur_box({3, 1.8, 0.1}, {4, 2, 1.5}, 0.5);
  // Rigid object: the same local points posed by each box.
  PointCloud prev, cur;
  for (int i = 0; i < 400; ++i) {
    const Vec3 local{rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(-0.75, 0.75)};
    prev.points.push_back(rotate_z(local, prev_box.yaw()) + prev_box.center());
    cur.points.push_back(rotate_z(local, cur_box.yaw()) + cur_box.center());
  }
  const auto m = build_merged_template(prev, prev_box, cur, cur_box, rng, 256);
  CHECK(m.cloud.size() == 512);
  for (std::size_t i = 0; i < 256; ++i) CHECK(point_in_box(m.cloud.points[i], cur_box, 1e-6));

  const auto same = build_merged_template(cur, cur_box, cur, cur_box, rng);
  CHECK(same.cloud.size() == 512);

  const auto empty_prev = build_merged_template(PointCloud{{{90, 90, 90}}}, prev_box, cur, cur_box, rng);
  CHECK(empty_prev.previous_degenerate);
  for (std::size_t i = 0; i < 256; ++i) CHECK(std::sqrt(squared_distance(empty_prev.cloud.points[i], cur_box.center())) < 1e-12);
}

TEST_CASE("expand_search_region") {
  const Box3D b({1, 2, 3}, {1, 1, 1}, 0.3);
  const auto same = expand_search_region(b, 1.0);
  CHECK(same.size() == b.size());
  CHECK(same.center() == b.center());
  const auto big = expand_search_region(b, 4.0);
  CHECK(big.volume() == doctest::Approx(64.0));
  CHECK(big.yaw() == b.yaw());
  for (const auto& c : b.corners()) CHECK(point_in_box(c, big));
  CHECK_THROWS_AS(expand_search_region(b, 0.5), std::invalid_argument);
}
