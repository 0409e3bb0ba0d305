#include <gtest/gtest.h>

#include "microcarla/geometry.hpp"
#include "microcarla/rng.hpp"

using namespace microcarla;

TEST(Geometry, WrapAngle) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-12);
}

TEST(Geometry, RectangleCornersAndArea) {
  OrientedRect r{{1, 2}, 0.0, 4.0, 1.8};
  const auto c = r.corners();
  EXPECT_EQ(c[0], (Vec2{-1, 1.1}));
  EXPECT_EQ(c[2], (Vec2{3, 2.9}));
  EXPECT_NEAR(area(r.polygon()), 7.2, 1e-12);
  EXPECT_GT(signed_area(r.polygon()), 0.0);
}

TEST(Geometry, ClipBisectedRectangle) {
  const Polygon rect = OrientedRect{{0, 0}, 0.0, 4.0, 2.0}.polygon();
  const Polygon half{{0, -5}, {5, -5}, {5, 5}, {0, 5}};
  EXPECT_NEAR(intersection_area(rect, half), 4.0, 1e-12);
}

TEST(Geometry, ClipMatchesSampling) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    OrientedRect a{{rng.uniform(-2, 2), rng.uniform(-2, 2)}, rng.uniform(-kPi, kPi), 4.0, 1.8};
    OrientedRect b{{rng.uniform(-2, 2), rng.uniform(-2, 2)}, rng.uniform(-kPi, kPi), 3.0, 2.5};
    const double exact = intersection_area(a.polygon(), b.polygon());
    const int n = 400;
    int hits = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Vec2 p = a.to_world({(i + 0.5) / n * 4.0 - 2.0, (j + 0.5) / n * 1.8 - 0.9});
        if (convex_contains(b.polygon(), p)) ++hits;
      }
    EXPECT_NEAR(exact, 7.2 * hits / (n * n), 0.02);
  }
}

TEST(Geometry, ConvexityAndContainment) {
  Polygon sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_TRUE(is_convex(sq));
  EXPECT_FALSE(is_convex(Polygon{{0, 0}, {2, 0}, {1, 0.5}, {2, 2}, {0, 2}}));
  EXPECT_TRUE(convex_contains(sq, {0.5, 0.5}));
  EXPECT_TRUE(convex_contains(sq, {1.0, 0.5}));
  EXPECT_FALSE(convex_contains(sq, {1.01, 0.5}));
}

TEST(Geometry, Rays) {
  Polygon sq{{10, -1}, {12, -1}, {12, 1}, {10, 1}};
  EXPECT_NEAR(*ray_convex({0, 0}, {1, 0}, sq), 10.0, 1e-12);
  EXPECT_FALSE(ray_convex({0, 0}, {-1, 0}, sq).has_value());
  EXPECT_NEAR(*ray_circle({0, 0}, {1, 0}, {5, 0}, 0.5), 4.5, 1e-12);
  EXPECT_FALSE(ray_circle({0, 0}, {0, 1}, {5, 0}, 0.5).has_value());
}

TEST(Geometry, OverlapAndDistance) {
  const Polygon a = OrientedRect{{0, 0}, 0.0}.polygon();
  EXPECT_TRUE(convex_overlap(a, OrientedRect{{3.9, 0}, 0.0}.polygon()));
  EXPECT_FALSE(convex_overlap(a, OrientedRect{{4.1, 0}, 0.0}.polygon()));
  EXPECT_NEAR(point_convex_distance({5, 0}, a), 3.0, 1e-12);
  EXPECT_TRUE(circle_overlaps_convex({2.3, 0}, 0.35, a));
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_LT(a.index(7), 7u);
  EXPECT_NE(mix_seed(1), mix_seed(2));
}
