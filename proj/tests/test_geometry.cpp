#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace mapvec;
using mapvec::testing::line;

TEST(NormalizePoints, CornerCentreAndClamp) {
  const BevExtent e;
  const Polyline pts{{-15, -30}, {0, 0}, {30, 0}};
  const auto n = normalize_points(pts, e);
  EXPECT_EQ(n[0].x, 0.0);
  EXPECT_EQ(n[0].y, 0.0);
  EXPECT_EQ(n[1].x, 0.5);
  EXPECT_EQ(n[1].y, 0.5);
  EXPECT_EQ(n[2].x, 1.0);
  EXPECT_EQ(n[2].y, 0.5);
}

TEST(NormalizePoints, DegenerateExtentThrows) {
  const BevExtent e{1.0, 1.0, -1.0, 1.0};
  const Polyline pts{{0, 0}};
  EXPECT_THROW(normalize_points(pts, e), ValidationError);
}

TEST(Chamfer, Examples) {
  const Polyline a{{0, 0}, {2, 0}}, b{{0, 0}}, c{{1, 0}};
  EXPECT_EQ(chamfer_distance(a, a), 0.0);
  EXPECT_EQ(chamfer_distance(b, c), 1.0);
  EXPECT_DOUBLE_EQ(chamfer_distance(a, b), 0.5);
  EXPECT_THROW(chamfer_distance(Polyline{}, a), ValidationError);
}

TEST(Chamfer, SymmetricAndNonNegative) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Polyline a, b;
    for (int i = 0; i < 1 + trial % 7; ++i) a.push_back({rng.normal() * 3, rng.normal() * 3});
    for (int i = 0; i < 1 + trial % 5; ++i) b.push_back({rng.normal() * 3, rng.normal() * 3});
    EXPECT_EQ(chamfer_distance(a, b), chamfer_distance(b, a));
    EXPECT_GE(chamfer_distance(a, b), 0.0);
  }
}

TEST(EdgeDirections, OpenClosedAndDegenerate) {
  const auto two = edge_directions(Polyline{{0, 0}, {1, 0}}, false);
  ASSERT_EQ(two.size(), 1u);
  EXPECT_EQ(two.directions[0].x, 1.0);
  EXPECT_EQ(two.directions[0].y, 0.0);

  const auto sq = edge_directions(Polyline{{0, 0}, {1, 0}, {1, 1}, {0, 1}}, true);
  ASSERT_EQ(sq.size(), 4u);
  EXPECT_EQ(sq.directions[3].x, 0.0);
  EXPECT_EQ(sq.directions[3].y, -1.0);
  for (const auto& d : sq.directions) EXPECT_DOUBLE_EQ(norm(d), 1.0);

  const auto deg = edge_directions(Polyline{{0, 0}, {0, 0}}, false);
  ASSERT_EQ(deg.size(), 1u);
  EXPECT_TRUE(deg.any_degenerate());
  EXPECT_EQ(norm(deg.directions[0]), 0.0);
}

TEST(EnclosingBox, Examples) {
  const auto b = enclosing_box(Polyline{{0, 0}, {2, 1}});
  EXPECT_EQ(b.min.x, 0.0);
  EXPECT_EQ(b.max.x, 2.0);
  EXPECT_EQ(b.max.y, 1.0);
  const auto single = enclosing_box(Polyline{{3, 4}});
  EXPECT_EQ(single.area(), 0.0);
  const auto c = enclosing_box(Polyline{{-1, 3}, {2, -2}, {0, 0}});
  EXPECT_EQ(c.min.x, -1.0);
  EXPECT_EQ(c.min.y, -2.0);
  EXPECT_EQ(c.max.x, 2.0);
  EXPECT_EQ(c.max.y, 3.0);
}

TEST(Giou, Examples) {
  const Box2D unit{{0, 0}, {1, 1}};
  EXPECT_EQ(giou(unit, unit), 1.0);
  EXPECT_NEAR(giou(unit, Box2D{{2, 0}, {3, 1}}), -1.0 / 3.0, 1e-15);
  // Two 1x2 boxes overlapping in a 1x1 square: IoU 1/3, hull 1x3 = union.
  EXPECT_NEAR(giou(Box2D{{0, 0}, {1, 2}}, Box2D{{0, 1}, {1, 3}}), 1.0 / 3.0, 1e-15);
}

TEST(Giou, CollinearBoxesUseIntervals) {
  // Both boxes have zero width on x = 0.
  const Box2D a{{0, 0}, {0, 2}}, b{{0, 1}, {0, 3}};
  EXPECT_NEAR(giou(a, b), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(giou(a, a), 1.0);
}

TEST(Giou, RangeProperty) {
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    auto box = [&] {
      const double x = rng.uniform(-5, 5), y = rng.uniform(-5, 5);
      return Box2D{{x, y}, {x + rng.uniform(0, 3), y + rng.uniform(0, 3)}};
    };
    const double g = giou(box(), box());
    EXPECT_GE(g, -1.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(EquivalentOrderings, Counts) {
  EXPECT_EQ(equivalent_orderings(line({0, 0}, {2, 0}, 3), false).size(), 2u);
  const Polyline sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const auto ords = equivalent_orderings(sq, true);
  ASSERT_EQ(ords.size(), 8u);
  EXPECT_EQ(ords[0], sq);
  EXPECT_EQ(ords[1].front(), sq[1]);
  EXPECT_EQ(ords[4].front(), sq[3]);  // reversed, shift 0
  const auto two = equivalent_orderings(Polyline{{0, 0}, {1, 0}}, false);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[1].front().x, 1.0);
}

TEST(EquivalentOrderings, AllDistinctOnGenericRing) {
  const Polyline ring{{0, 0}, {2, 0.1}, {2.5, 1.7}, {0.3, 2.2}, {-0.4, 1.1}};
  const auto ords = equivalent_orderings(ring, true);
  ASSERT_EQ(ords.size(), 10u);
  for (std::size_t i = 0; i < ords.size(); ++i) {
    for (std::size_t j = i + 1; j < ords.size(); ++j) EXPECT_NE(ords[i], ords[j]);
    EXPECT_EQ(chamfer_distance(ords[i], ring), 0.0);
  }
}

TEST(Pose, ComposeInverseRoundTrip) {
  const Pose2 a{1.5, -2.0, 0.7}, b{-0.3, 4.0, -1.2};
  const Pose2 id = compose(a, inverse(a));
  EXPECT_NEAR(id.x, 0.0, 1e-12);
  EXPECT_NEAR(id.y, 0.0, 1e-12);
  EXPECT_NEAR(id.yaw, 0.0, 1e-12);
  const Point2 p{0.4, 2.5};
  const Point2 world = transform_point(b, p);
  const Point2 in_a = transform_point(relative_pose(b, a), p);
  const Point2 expect = inverse_transform_point(a, world);
  EXPECT_NEAR(in_a.x, expect.x, 1e-12);
  EXPECT_NEAR(in_a.y, expect.y, 1e-12);
}

TEST(MapClass, NamesRoundTrip) {
  for (MapClass c : kAllClasses) EXPECT_EQ(parse_class(class_name(c)), c);
  EXPECT_THROW(parse_class("stop_line"), ValidationError);
}
