#include <gtest/gtest.h>

#include <sstream>

#include "pgn/flatness.hpp"

using namespace pgn;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(BallNormTest, QuadraticMaximumIsAtACorner) {
  // |A x|_2 with A = I is maximised over the box at the far corner.
  const QuadraticObjective<double> obj(Matrix<double>::Identity(3, 3));
  const Vector<double> x = Vector<double>::Constant(3, 1.0);
  Rng rng(1);
  const auto r = max_grad_norm_in_ball(obj, x, 0.5, 64, rng);
  EXPECT_EQ(r.samples, 64u);
  EXPECT_GT(r.value, std::sqrt(3.0));
  EXPECT_LE(r.value, std::sqrt(3.0) * 1.5);
}

TEST(BallNormTest, ZeroRadiusEvaluatesCentre) {
  Vector<double> w(2);
  w << 3.0, 4.0;
  const LinearObjective<double> obj(w);
  Rng rng(1);
  const auto r = max_grad_norm_in_ball<double>(obj, Vector<double>::Zero(2), 0.0, 32, rng);
  EXPECT_DOUBLE_EQ(r.value, 5.0);
  EXPECT_EQ(r.samples, 1u);
  EXPECT_THROW(max_grad_norm_in_ball<double>(obj, Vector<double>::Zero(2), -1.0, 3, rng), UsageError);
  EXPECT_THROW(max_grad_norm_in_ball<double>(obj, Vector<double>::Zero(2), 1.0, 0, rng), UsageError);
}

TEST(BallNormTest, ExplicitPoints) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(2, 2));
  const std::vector<Vector<double>> pts = {Vector<double>::Ones(2), Vector<double>::Zero(2)};
  EXPECT_DOUBLE_EQ(max_grad_norm_over<double>(obj, pts), std::sqrt(2.0));
}

TEST(BallNormTest, SamplesStayInBall) {
  Rng rng(2);
  const Vector<double> c = Vector<double>::LinSpaced(50, -1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_LE((detail::sample_linf_ball(c, 0.1, rng) - c).cwiseAbs().maxCoeff(), 0.1);
  }
}

TEST(SurfaceTest, GridRowsAndCentreCell) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(4, 4) * 3.0);
  const Vector<double> x = Vector<double>::LinSpaced(4, 0.1, 0.4);
  const auto grid = loss_surface(obj, x, 5, 0.1, 41);
  const auto csv = lines(surface_csv(grid));
  ASSERT_EQ(csv.size(), 1u + 41u * 41u);
  EXPECT_EQ(csv[0], "k1,k2,loss");
  EXPECT_EQ(grid.values(20, 20), grid.center_loss);
  const std::string centre = csv[1 + 20 * 41 + 20];
  EXPECT_EQ(centre, "0,0," + format_sig9(grid.center_loss));
  EXPECT_EQ(csv[1], format_sig9(-0.1) + "," + format_sig9(-0.1) + "," +
                        format_sig9(grid.values(0, 0)));
}

TEST(SurfaceTest, LinearLossGivesPlane) {
  Vector<double> w(6);
  w << 1, -2, 3, 0.5, -1, 2;
  const LinearObjective<double> obj(w, 0.7);
  const Vector<double> x = Vector<double>::Constant(6, 0.2);
  const auto grid = loss_surface(obj, x, 9, 0.3, 7);
  EXPECT_NEAR(grid.r1.norm(), 1.0, 1e-15);
  EXPECT_NEAR(grid.r2.norm(), 1.0, 1e-15);
  const double a = w.dot(grid.r1), b = w.dot(grid.r2);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      const double expect = grid.center_loss + grid.coordinate(i) * a + grid.coordinate(j) * b;
      EXPECT_NEAR(grid.values(i, j), expect, 1e-12);
    }
}

TEST(SurfaceTest, SeededAndValidated) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(3, 3));
  const Vector<double> x = Vector<double>::Ones(3);
  EXPECT_EQ(surface_csv(loss_surface(obj, x, 1, 0.1, 5)),
            surface_csv(loss_surface(obj, x, 1, 0.1, 5)));
  EXPECT_NE(surface_csv(loss_surface(obj, x, 1, 0.1, 5)),
            surface_csv(loss_surface(obj, x, 2, 0.1, 5)));
  EXPECT_THROW(loss_surface(obj, x, 1, 0.1, 4), UsageError);
  EXPECT_THROW(loss_surface(obj, x, 1, -0.1, 5), UsageError);
  const auto single = loss_surface(obj, x, 1, 0.1, 1);
  EXPECT_EQ(lines(surface_csv(single)).size(), 2u);
  EXPECT_EQ(single.values(0, 0), single.center_loss);
}

TEST(SurfaceTest, CoordinatesAreSymmetric) {
  SurfaceGrid g;
  g.range = 0.1;
  g.resolution = 41;
  EXPECT_EQ(g.coordinate(20), 0.0);
  for (int i = 0; i < 41; ++i) EXPECT_EQ(g.coordinate(i), -g.coordinate(40 - i));
  EXPECT_EQ(g.coordinate(40), 0.1);
}
