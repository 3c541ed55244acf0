#include <gtest/gtest.h>

#include <cmath>

#include "pvko/errors.hpp"
#include "pvko/random.hpp"
#include "pvko/sets.hpp"

using pvko::HPolytope;
using pvko::Zonotope;

namespace {

Zonotope unit_box(int d) { return Zonotope::box(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)); }

Eigen::Matrix2d rotation_scaling(double rho, double angle)
{
  Eigen::Matrix2d M;
  M << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return rho * M;
}

}  // namespace

TEST(Sets, SupportOfBoxes)
{
  EXPECT_DOUBLE_EQ(pvko::support(unit_box(2), Eigen::Vector2d(1, 0)), 1.0);
  const auto small = Zonotope::box(Eigen::Vector2d::Zero(), Eigen::Vector2d(0.2, 0.2));
  EXPECT_NEAR(pvko::support(small, Eigen::Vector2d(1, 1)), 0.4, 1e-15);
  const Eigen::Vector2d c(0.3, -2.0);
  const Eigen::Vector2d v(-1.5, 0.25);
  EXPECT_DOUBLE_EQ(pvko::support(Zonotope::point(c), v), v.dot(c));
}

TEST(Sets, LinearMaps)
{
  const auto z = unit_box(2);
  const auto same = pvko::linear_map(Eigen::Matrix2d::Identity(), z);
  EXPECT_EQ(same.generators(), z.generators());
  EXPECT_EQ(same.center(), z.center());
  const auto origin = pvko::linear_map(Eigen::Matrix2d::Zero(), z);
  EXPECT_EQ(origin.radius(), 0.0);
  EXPECT_EQ(origin.center(), Eigen::VectorXd(Eigen::Vector2d::Zero()));
  const auto scaled = pvko::linear_map(Eigen::Vector2d(2, 3).asDiagonal().toDenseMatrix(), z);
  EXPECT_EQ(scaled.interval_half_widths(), Eigen::VectorXd(Eigen::Vector2d(2, 3)));
}

TEST(Sets, MinkowskiSums)
{
  const auto a = unit_box(2);
  const auto same = pvko::minkowski_sum(a, Zonotope::point(Eigen::Vector2d::Zero()));
  EXPECT_EQ(same.interval_half_widths(), a.interval_half_widths());
  const auto half = Zonotope::box(Eigen::Vector2d::Zero(), Eigen::Vector2d(0.5, 0.5));
  EXPECT_EQ(pvko::minkowski_sum(a, half).interval_hull().interval_half_widths(), Eigen::VectorXd(Eigen::Vector2d(1.5, 1.5)));

  pvko::Rng rng(5, 0);
  Eigen::MatrixXd G(2, 3);
  G << 1, 0.5, -0.3, 0.2, 1, 0.7;
  const Zonotope z(Eigen::Vector2d(0.1, -0.4), G);
  const auto s = pvko::minkowski_sum(z, half);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d v = rng.uniform(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
    EXPECT_NEAR(pvko::support(s, v), pvko::support(z, v) + pvko::support(half, v), 1e-12);
  }
}

TEST(Sets, PontryaginDifferenceOfBoxes)
{
  const auto X = HPolytope::box(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
  const auto same = pvko::pontryagin_diff(X, Zonotope::point(Eigen::Vector2d::Zero()));
  EXPECT_EQ(same.b(), X.b());

  const auto W = Zonotope::box(Eigen::Vector2d::Zero(), Eigen::Vector2d(0.2, 0.2));
  const auto T = pvko::pontryagin_diff(X, W);
  // grid-membership oracle: x in X (-) W iff every vertex of x + W lies in X
  for (double a = -1.0; a <= 1.0 + 1e-12; a += 0.05) {
    for (double b = -1.0; b <= 1.0 + 1e-12; b += 0.05) {
      const Eigen::Vector2d x(a, b);
      bool inside = true;
      for (double sa : {-0.2, 0.2}) {
        for (double sb : {-0.2, 0.2}) { inside = inside && X.contains(x + Eigen::Vector2d(sa, sb), 1e-12); }
      }
      EXPECT_EQ(T.contains(x, 1e-12), inside) << a << ", " << b;
    }
  }
  EXPECT_LE((T.b() - Eigen::VectorXd::Constant(4, 0.8)).norm(), 1e-15);
}

TEST(Sets, PontryaginDifferenceCanBeEmpty)
{
  const auto X = HPolytope::box(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
  EXPECT_THROW(
    pvko::pontryagin_diff(X, Zonotope::box(Eigen::Vector2d::Zero(), Eigen::Vector2d(2, 2))), pvko::EmptyTightenedSet);
}

TEST(Sets, ZonotopeMembership)
{
  Eigen::MatrixXd G(2, 2);
  G << 1, 1, 0, 1;  // parallelogram, not axis aligned
  const Zonotope z(Eigen::Vector2d::Zero(), G);
  EXPECT_TRUE(z.contains(Eigen::Vector2d(2, 1)));
  EXPECT_TRUE(z.contains(Eigen::Vector2d(0, 0)));
  EXPECT_FALSE(z.contains(Eigen::Vector2d(2, -1)));
  EXPECT_FALSE(z.contains(Eigen::Vector2d(0, 1.5)));
}

TEST(Sets, RpiOfZeroMapIsW)
{
  const auto W = Zonotope::box(Eigen::Vector2d(0.1, 0), Eigen::Vector2d(0.3, 0.5));
  const auto r = pvko::rpi_outer_approx({Eigen::Matrix2d::Zero()}, W);
  EXPECT_LE((r.set.center() - W.center()).norm(), 1e-15);
  EXPECT_LE((r.set.interval_half_widths() - W.interval_half_widths()).norm(), 1e-15);
  EXPECT_TRUE(r.converged);
}

TEST(Sets, RpiGeometricSeries)
{
  const auto W = unit_box(1);
  pvko::RpiOptions opt;
  opt.epsilon = 1e-4;
  const auto r = pvko::rpi_outer_approx({Eigen::MatrixXd::Constant(1, 1, 0.5)}, W, opt);
  const double half = r.set.interval_half_widths()(0);
  EXPECT_GE(half, 2.0 - 1e-12);
  EXPECT_LE(half, 2.05);
}

TEST(Sets, RpiSampledInvariance)
{
  const std::vector<Eigen::MatrixXd> maps{rotation_scaling(0.8, 0.2), rotation_scaling(0.8, -0.15)};
  const auto W = unit_box(2);
  const auto r = pvko::rpi_outer_approx(maps, W);
  const Zonotope grown = r.set.scaled(1.0 + 1e-6);
  pvko::Rng rng(42, 0);
  int failures = 0;
  for (int s = 0; s < 10000; ++s) {
    const Eigen::VectorXd e = r.set.point_at(
      rng.uniform(Eigen::VectorXd::Constant(r.set.num_generators(), -1), Eigen::VectorXd::Ones(r.set.num_generators())));
    const Eigen::VectorXd w = W.point_at(rng.uniform(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1)));
    const auto & A = maps[static_cast<std::size_t>(s % 2)];
    failures += grown.contains(A * e + w, 0.0) ? 0 : 1;
  }
  EXPECT_EQ(failures, 0);
}

TEST(Sets, RpiRejectsExpandingMaps)
{
  EXPECT_THROW(pvko::rpi_outer_approx({Eigen::MatrixXd::Constant(1, 1, 1.2)}, unit_box(1)), pvko::NotContractive);
}
