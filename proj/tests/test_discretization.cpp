#include <usmooth/discretization.hpp>
#include <usmooth/harness.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace usmooth;

namespace {

ReducedModel eight_storey_full(std::vector<int> floors = {2}) {
  return modal_reduce(build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, std::move(floors)), 8);
}

double max_abs(const Matrix& x) { return x.cwiseAbs().maxCoeff(); }

// Adaptive Dormand-Prince 5(4) integrator for x' = f(t, x) over [t0, t1].
Vector integrate_dp45(const std::function<Vector(double, const Vector&)>& f, Vector x, double t0, double t1,
                      double rtol, double atol) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                      e6 = 22.0 / 525, e7 = -1.0 / 40;
  double t = t0;
  double h = (t1 - t0) / 16.0;
  while (t < t1) {
    if (t + h > t1) h = t1 - t;
    const Vector k1 = f(t, x);
    const Vector k2 = f(t + c2 * h, x + h * a21 * k1);
    const Vector k3 = f(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    const Vector k4 = f(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = f(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = f(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vector x5 = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vector k7 = f(t + h, x5);
    const Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double norm = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double sc = atol + rtol * std::max(std::abs(x(i)), std::abs(x5(i)));
      norm = std::max(norm, std::abs(err(i)) / sc);
    }
    if (norm <= 1.0) {
      t += h;
      x = x5;
    }
    h *= std::clamp(0.9 * std::pow(std::max(norm, 1e-10), -0.2), 0.2, 5.0);
  }
  return x;
}

}  // namespace

TEST(Discretize, ScalarDecayClosedForm) {
  const double a = 3.0, b = 2.0, dt = 0.1;
  const ContinuousStateSpace c{Matrix::Constant(1, 1, -a), Matrix::Constant(1, 1, b)};
  const DiscretePair d = discretize_zoh(c, dt);
  EXPECT_NEAR(d.A(0, 0), std::exp(-a * dt), 1e-14);
  EXPECT_NEAR(d.G(0, 0), b * (1.0 - std::exp(-a * dt)) / a, 1e-14);
}

TEST(Discretize, HarmonicOscillatorRotation) {
  const double w = 5.0, dt = 0.03;
  Matrix psi(2, 2);
  psi << 0.0, 1.0, -w * w, 0.0;
  Matrix xi(2, 1);
  xi << 0.0, 1.0;
  const DiscretePair d = discretize_zoh({psi, xi}, dt);
  Matrix A(2, 2);
  A << std::cos(w * dt), std::sin(w * dt) / w, -w * std::sin(w * dt), std::cos(w * dt);
  Matrix G(2, 1);
  G << (1.0 - std::cos(w * dt)) / (w * w), std::sin(w * dt) / w;
  EXPECT_LT(max_abs(d.A - A), 1e-13);
  EXPECT_LT(max_abs(d.G - G), 1e-13);
}

TEST(Discretize, SingularSystemUsesAugmentedExponential) {
  // Double integrator: Psi is singular.
  Matrix psi(2, 2);
  psi << 0.0, 1.0, 0.0, 0.0;
  Matrix xi(2, 1);
  xi << 0.0, 1.0;
  const double dt = 0.2;
  const DiscretePair d = discretize_zoh({psi, xi}, dt);
  EXPECT_NEAR(d.A(0, 1), dt, 1e-14);
  EXPECT_NEAR(d.A(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(d.G(0, 0), dt * dt / 2.0, 1e-14);
  EXPECT_NEAR(d.G(1, 0), dt, 1e-14);
}

TEST(Discretize, AugmentedExponentialAgreesOnEightStoreyFrame) {
  const ContinuousStateSpace c = to_continuous(eight_storey_full());
  const DiscretePair a = discretize_zoh(c, 0.01);
  const DiscretePair b = discretize_zoh_augmented(c, 0.01);
  EXPECT_LT(max_abs(a.A - b.A), 1e-10 * max_abs(b.A));
  EXPECT_LT(max_abs(a.G - b.G), 1e-10 * max_abs(b.G));
}

TEST(Discretize, ModalBlocksMatchDampedOscillatorClosedForm) {
  const ReducedModel r = eight_storey_full();
  const DiscretePair d = discretize_zoh(to_continuous(r), 0.01);
  const double dt = 0.01;
  for (int i = 0; i < 8; ++i) {
    const double w = r.basis.frequencies(i);
    const double zeta = (0.01 + 0.01 * w * w) / (2.0 * w);
    const double wd = w * std::sqrt(1.0 - zeta * zeta);
    const double e = std::exp(-zeta * w * dt);
    const double s = std::sin(wd * dt), co = std::cos(wd * dt);
    EXPECT_NEAR(d.A(i, i), e * (co + zeta * w / wd * s), 1e-12);
    EXPECT_NEAR(d.A(i, 8 + i), e * s / wd, 1e-12);
    EXPECT_NEAR(d.A(8 + i, i), -w * w * e * s / wd, 1e-9);
    EXPECT_NEAR(d.A(8 + i, 8 + i), e * (co - zeta * w / wd * s), 1e-12);
  }
}

TEST(Discretize, MatchesAdaptiveOdeIntegrationUnderHeldInput) {
  const ReducedModel r = eight_storey_full();
  const ContinuousStateSpace c = to_continuous(r);
  const double dt = 0.01;
  const DiscretePair d = discretize_zoh(c, dt);
  Vector x = Vector::Zero(16), xo = Vector::Zero(16);
  double scale = 0.0, worst = 0.0;
  for (int k = 1; k <= 300; ++k) {
    const double p = 5e3 * std::sin(8.0 * k * dt);
    x = d.A * x + d.G * Vector::Constant(1, p);
    auto rhs = [&](double, const Vector& s) -> Vector { return c.system_matrix * s + c.input_matrix * p; };
    xo = integrate_dp45(rhs, xo, (k - 1) * dt, k * dt, 1e-12, 1e-15);
    scale = std::max(scale, xo.cwiseAbs().maxCoeff());
    worst = std::max(worst, (x - xo).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-6 * scale);
}

TEST(Discretize, RejectsNonPositiveStep) {
  const ContinuousStateSpace c{Matrix::Constant(1, 1, -1.0), Matrix::Constant(1, 1, 1.0)};
  EXPECT_THROW(discretize_zoh(c, 0.0), InvalidArgument);
  EXPECT_THROW(discretize_zoh_augmented(c, -1.0), InvalidArgument);
}

TEST(OutputMatrices, SingleDegreeOfFreedom) {
  const ReducedModel r = modal_reduce(build_shear_frame(1, 1.0, 4.0, 0.0, 0.0, {1}), 1);
  using enum Quantity;
  const OutputPair acc = build_output_matrices(r, make_sensors({{acceleration, 1}}));
  EXPECT_NEAR(acc.C(0, 0), -4.0, 1e-12);
  EXPECT_NEAR(acc.C(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(acc.H(0, 0), 1.0, 1e-12);
  const OutputPair dis = build_output_matrices(r, make_sensors({{displacement, 1}}));
  EXPECT_NEAR(dis.C(0, 0), 1.0, 1e-12);
  EXPECT_EQ(dis.C(0, 1), 0.0);
  EXPECT_EQ(dis.H(0, 0), 0.0);
  const OutputPair vel = build_output_matrices(r, make_sensors({{velocity, 1}}));
  EXPECT_EQ(vel.C(0, 0), 0.0);
  EXPECT_NEAR(vel.C(0, 1), 1.0, 1e-12);
  EXPECT_EQ(vel.H(0, 0), 0.0);
}

TEST(OutputMatrices, RowsReproducePhysicalResponse) {
  const SecondOrderModel full = build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, {2});
  const ReducedModel r = modal_reduce(full, 8);
  using enum Quantity;
  const SensorConfig s = make_sensors({{displacement, 3}, {velocity, 6}, {acceleration, 2}});
  const OutputPair o = build_output_matrices(r, s);
  // Random physical state (u, u') and input; acceleration from the equation of motion.
  Vector u = Vector::LinSpaced(8, 1e-3, 8e-3), v = Vector::LinSpaced(8, -2e-2, 3e-2);
  const double p = 1234.5;
  const Matrix& Z = r.basis.mode_shapes;
  const Vector q = Z.transpose() * full.mass * u, qd = Z.transpose() * full.mass * v;
  Vector x(16);
  x << q, qd;
  const Vector acc = full.mass.ldlt().solve(full.input_distribution.col(0) * p - full.damping * v - full.stiffness * u);
  const Vector y = o.C * x + o.H * Vector::Constant(1, p);
  EXPECT_NEAR(y(0), u(2), 1e-12);
  EXPECT_NEAR(y(1), v(5), 1e-12);
  EXPECT_NEAR(y(2), acc(1), 1e-9 * std::abs(acc(1)));
}

TEST(OutputMatrices, DisplacementOnlyLayoutHasNoFeedthrough) {
  const OutputPair o = build_output_matrices(eight_storey_full(), sensor_configuration("2.2"));
  EXPECT_EQ(o.H.rows(), 4);
  EXPECT_TRUE(o.H.isZero(0.0));
}

TEST(OutputMatrices, FeedthroughVanishesForNonCollocatedAccelerometer) {
  // Lumped mass: the F1 acceleration row of H is e1' M^-1 B = 0 for a load on F2.
  const OutputPair o = build_output_matrices(eight_storey_full({2}), sensor_configuration("1.2"));
  ASSERT_EQ(o.H.rows(), 5);
  EXPECT_TRUE(o.H.topRows(4).isZero(0.0));
  EXPECT_LT(std::abs(o.H(4, 0)), 1e-15 / 625e3);
}

TEST(OutputMatrices, CollocatedAccelerometerGivesOneNonzeroRow) {
  using enum Quantity;
  const SensorConfig s =
      make_sensors({{displacement, 1}, {displacement, 3}, {displacement, 5}, {displacement, 7}, {acceleration, 2}});
  const OutputPair o = build_output_matrices(eight_storey_full({2}), s);
  int nonzero_rows = 0;
  for (int i = 0; i < 5; ++i) nonzero_rows += o.H.row(i).cwiseAbs().maxCoeff() > 1e-12 / 625e3;
  EXPECT_EQ(nonzero_rows, 1);
  EXPECT_NEAR(o.H(4, 0), 1.0 / 625e3, 1e-9 / 625e3);
}

TEST(OutputMatrices, FeedthroughRank) {
  auto rank = [](const Matrix& h) {
    const Vector s = singular_values(h);
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) > 1e-12 / 625e3;
    return r;
  };
  EXPECT_EQ(rank(build_output_matrices(eight_storey_full({2, 5}), sensor_configuration("2.2")).H), 0);
  // Two inputs, one accelerometer: at most rank one.
  using enum Quantity;
  const SensorConfig one_acc = make_sensors({{displacement, 1}, {acceleration, 2}});
  EXPECT_EQ(rank(build_output_matrices(eight_storey_full({2, 5}), one_acc).H), 1);
  const SensorConfig two_acc = make_sensors({{acceleration, 2}, {acceleration, 5}});
  EXPECT_EQ(rank(build_output_matrices(eight_storey_full({2, 5}), two_acc).H), 2);
}

TEST(OutputMatrices, RejectsBadSensors) {
  using enum Quantity;
  EXPECT_THROW(build_output_matrices(eight_storey_full(), make_sensors({{displacement, 9}})), InvalidArgument);
  EXPECT_THROW(build_output_matrices(eight_storey_full(), make_sensors({{displacement, 0}})), InvalidArgument);
  EXPECT_THROW(build_output_matrices(eight_storey_full(), SensorConfig{}), InvalidArgument);
}

TEST(Sensors, NamesAndParsing) {
  EXPECT_EQ(quantity_from_string("acc"), Quantity::acceleration);
  EXPECT_EQ(quantity_from_string("velocity"), Quantity::velocity);
  EXPECT_THROW(quantity_from_string("strain"), InvalidArgument);
  const SensorConfig s = sensor_configuration("1.1");
  EXPECT_EQ(s.channel_name(0), "disp_F1");
  EXPECT_EQ(s.channel_name(4), "vel_F1");
}

TEST(DiscreteModel, PipelineDimensionsAndValidation) {
  const ReducedModel r = modal_reduce(build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, {2}), 3);
  const SensorConfig s = sensor_configuration("2.3");
  const DiscreteStateSpace sys = make_discrete_model(r, s, 0.01, Matrix::Zero(6, 6), Matrix::Identity(4, 4));
  EXPECT_EQ(sys.state_dim(), 6);
  EXPECT_EQ(sys.input_dim(), 1);
  EXPECT_EQ(sys.output_dim(), 4);
  EXPECT_THROW(make_discrete_model(r, s, 0.01, Matrix::Zero(5, 5), Matrix::Identity(4, 4)), InvalidArgument);
  EXPECT_THROW(make_discrete_model(r, s, 0.0, Matrix::Zero(6, 6), Matrix::Identity(4, 4)), InvalidArgument);
}
