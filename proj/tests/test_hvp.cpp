#include <gtest/gtest.h>

#include <random>

#include "pgn/hvp.hpp"

using namespace pgn;

namespace {

Matrix<double> random_symmetric(Index n, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix<double> m(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m(i, j) = gauss(rng);
  return 0.5 * (m + m.transpose());
}

Vector<double> random_vector(Index n, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector<double> v(n);
  for (Index i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

// J(x) = sum_i c_i x_i^4 / 4: gradient c_i x_i^3, Hessian diag(3 c_i x_i^2).
class QuarticObjective final : public Objective<double> {
 public:
  explicit QuarticObjective(Vector<double> c) : c_(std::move(c)) {}
  Index dimension() const override { return c_.size(); }
  double value(const Vector<double>& x) const override {
    return 0.25 * (c_.array() * x.array().pow(4)).sum();
  }
  Evaluation<double> evaluate(const Vector<double>& x) const override {
    return {value(x), (c_.array() * x.array().cube()).matrix()};
  }

 private:
  Vector<double> c_;
};

double rel(const Vector<double>& a, const Vector<double>& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(FdmHvpTest, ExactOnQuadratics) {
  Rng rng(1);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = 3 + trial;
    const Matrix<double> a = random_symmetric(n, rng);
    const QuadraticObjective<double> obj(a, random_vector(n, rng));
    const auto x = random_vector(n, rng), v = random_vector(n, rng);
    const auto r = fdm_hvp<double>(obj, x, v, {1e-3, DirectionNorm::L1});
    EXPECT_EQ(r.gradient_evals, 2u);
    EXPECT_LE(rel(r.product, a * v), 1e-8);
  }
}

TEST(FdmHvpTest, CountsThroughWrapper) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(4, 4));
  CountingObjective<double> counted(obj);
  fdm_hvp<double>(counted, Vector<double>::Ones(4), Vector<double>::Ones(4), {});
  EXPECT_EQ(counted.gradient_evals(), 2u);
}

TEST(FdmHvpTest, RejectsBadInput) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(3, 3));
  EXPECT_THROW(fdm_hvp<double>(obj, Vector<double>::Zero(3), Vector<double>::Zero(4), {}),
               DimensionError);
  EXPECT_THROW(fdm_hvp<double>(obj, Vector<double>::Zero(3), Vector<double>::Zero(3), {0.0}),
               UsageError);
  Vector<double> v = Vector<double>::Zero(3);
  v[1] = std::nan("");
  EXPECT_THROW(fdm_hvp<double>(obj, Vector<double>::Zero(3), v, {}), UsageError);
}

TEST(OracleTest, CentralDifferenceOnQuartic) {
  Rng rng(2);
  const Vector<double> c = random_vector(6, rng);
  const QuarticObjective obj(c);
  const auto x = random_vector(6, rng), v = random_vector(6, rng);
  const Vector<double> expect = (3.0 * c.array() * x.array().square() * v.array()).matrix();
  EXPECT_LE(rel(exact_hvp_oracle<double>(obj, x, v).product, expect), 1e-7);
  // The forward difference carries an O(a) error the oracle does not.
  const auto fwd = fdm_hvp<double>(obj, x, v, {1e-2, DirectionNorm::L1});
  EXPECT_GT(rel(fwd.product, expect), 1e-4);
}

TEST(FullHessianTest, RecoversQuadraticHessian) {
  Rng rng(3);
  for (Index n : {1, 5, 40}) {
    const Matrix<double> a = random_symmetric(n, rng);
    const QuadraticObjective<double> obj(a);
    const auto r = full_hessian<double>(obj, random_vector(n, rng));
    EXPECT_EQ(r.gradient_evals, static_cast<std::size_t>(2 * n));
    EXPECT_LE((r.hessian - a).norm() / a.norm(), 1e-6);
  }
}

TEST(FullHessianTest, CapEnforced) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(20, 20));
  EXPECT_THROW(full_hessian<double>(obj, Vector<double>::Zero(20), 1e-4, 19), UsageError);
  EXPECT_NO_THROW(full_hessian<double>(obj, Vector<double>::Zero(20), 1e-4, 20));
}

TEST(PgnGradientTest, EndpointsAndMidpointAreExact) {
  Rng rng(4);
  const QuarticObjective obj(random_vector(7, rng));
  const Vector<double> x = random_vector(7, rng);
  const FdConfig fd{0.05, DirectionNorm::L1};
  const auto d0 = pgn_gradient(obj, x, 0.0, fd);
  const auto d1 = pgn_gradient(obj, x, 1.0, fd);
  const auto half = pgn_gradient(obj, x, 0.5, fd);
  const Vector<double> g = obj.gradient(x);
  const Vector<double> gstar = obj.gradient(x - (0.05 / g.lpNorm<1>()) * g);
  EXPECT_TRUE(bit_equal(d0.gradient, g));
  EXPECT_TRUE(bit_equal(d1.gradient, gstar));
  const Vector<double> mean = ((g.array() + gstar.array()) * 0.5).matrix();
  EXPECT_TRUE(bit_equal(half.gradient, mean));
  EXPECT_EQ(half.gradient_evals, 2u);
  EXPECT_DOUBLE_EQ(half.sampled_loss, obj.value(x));
}

TEST(PgnGradientTest, FloatMidpointIsExact) {
  const QuadraticObjective<float> obj(Matrix<float>::Identity(3, 3) * 2.0f);
  const Vector<float> x = Vector<float>::LinSpaced(3, 0.1f, 0.7f);
  const auto half = pgn_gradient(obj, x, 0.5, {});
  const Vector<float> mean = ((half.sampled.array() + half.predicted.array()) * 0.5f).matrix();
  EXPECT_TRUE(bit_equal(half.gradient, mean));
}

TEST(PgnGradientTest, ZeroGradientIsDegenerate) {
  const QuadraticObjective<double> obj(Matrix<double>::Identity(3, 3));
  const Vector<double> zero = Vector<double>::Zero(3);
  const auto r = pgn_gradient(obj, zero, 0.5, {});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.gradient_evals, 1u);
  EXPECT_TRUE(r.gradient.isZero());
  EXPECT_THROW(pgn_gradient(obj, zero, 1.5, {}), UsageError);
}

TEST(PgnGradientTest, DeltaBlendsTowardHessianPenalty) {
  // On a quadratic, g* = g' - a A g'/|g'|, so the blend is g' - delta a A u.
  Rng rng(5);
  const Matrix<double> a = random_symmetric(5, rng);
  const QuadraticObjective<double> obj(a);
  const Vector<double> x = random_vector(5, rng);
  const FdConfig fd{0.01, DirectionNorm::L2};
  const auto r = pgn_gradient(obj, x, 0.3, fd);
  const Vector<double> g = a * x;
  const Vector<double> expect = g - 0.3 * 0.01 * a * (g / g.norm());
  EXPECT_LE(rel(r.gradient, expect), 1e-12);
}

TEST(RegGradientTest, LambdaZeroIsPlainGradient) {
  Rng rng(6);
  const QuarticObjective obj(random_vector(4, rng));
  const auto x = random_vector(4, rng), s = random_vector(4, rng);
  const auto r = reg_objective_gradient(obj, x, s, 0.0, {});
  EXPECT_TRUE(bit_equal(r.gradient, obj.gradient(x)));
  EXPECT_EQ(r.gradient_evals, 1u);
}

TEST(RegGradientTest, FdmAndHessianFormsAgree) {
  Rng rng(7);
  const QuarticObjective obj(random_vector(6, rng));
  const auto x = random_vector(6, rng);
  const auto fdm = reg_objective_gradient(obj, x, x, 0.2, {1e-6, DirectionNorm::L2});
  const auto hess = reg_objective_gradient_hessian(obj, x, x, 0.2);
  EXPECT_EQ(fdm.gradient_evals, 2u);
  EXPECT_EQ(hess.gradient_evals, 1u + 2u * 6u);
  EXPECT_LE(rel(fdm.gradient, hess.gradient), 1e-6);
  const auto apart = reg_objective_gradient(obj, x, random_vector(6, rng), 0.2, {});
  EXPECT_EQ(apart.gradient_evals, 3u);
}
