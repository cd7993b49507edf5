#pragma once

#include <optional>
#include <vector>

#include "nkpc/errors.hpp"
#include "nkpc/linalg.hpp"
#include "nkpc/rng.hpp"
#include "nkpc/types.hpp"

namespace nkpc {

/// Linear plant x' = F x + B u + m, sensor y = H x + n, with quadratic control cost (g, r).
template <typename Scalar>
struct LdsModel {
  Matrix<Scalar> F;       // Dx x Dx
  Matrix<Scalar> B;       // Dx x Du
  Matrix<Scalar> H;       // Dy x Dx
  Matrix<Scalar> Q;       // plant noise covariance
  Matrix<Scalar> R_true;  // measurement noise covariance
  Matrix<Scalar> g;       // control cost, Du x Du
  Matrix<Scalar> r;       // state cost, Dx x Dx

  Eigen::Index dx() const { return F.rows(); }
  Eigen::Index du() const { return B.cols(); }
  Eigen::Index dy() const { return H.rows(); }

  /// Throws ParameterError on inconsistent shapes or covariance/cost matrices that are
  /// not symmetric PSD (Q, R) / PD (g, r).
  void validate() const {
    const auto n = dx();
    require_shape(F, n, n, "F");
    require_shape(B, n, B.cols(), "B");
    require_shape(H, H.rows(), n, "H");
    require_shape(Q, n, n, "Q");
    require_shape(R_true, dy(), dy(), "R");
    require_shape(g, du(), du(), "g");
    require_shape(r, n, n, "r");
    covariance_factor(Q);
    covariance_factor(R_true);
    if (du() > 0) {
      if (!is_symmetric(g) || min_eigenvalue(g) <= Scalar(0))
        throw ParameterError("g must be symmetric positive definite");
    }
    if (!is_symmetric(r) || min_eigenvalue(r) <= Scalar(0))
      throw ParameterError("r must be symmetric positive definite");
  }
};

/// The 2-d model used throughout the experiments: F and H are 15 and 50 degree
/// rotations, Q = 1e-5 I, R = 1e-4 I, and B = g = r = I.
template <typename Scalar = double>
LdsModel<Scalar> rotation_model(Scalar f_deg = Scalar(15), Scalar h_deg = Scalar(50),
                                Scalar q = Scalar(1e-5), Scalar rho = Scalar(1e-4)) {
  LdsModel<Scalar> m;
  const auto I = Matrix<Scalar>::Identity(2, 2);
  m.F = rotation2d<Scalar>(f_deg);
  m.H = rotation2d<Scalar>(h_deg);
  m.B = I;
  m.Q = q * I;
  m.R_true = rho * I;
  m.g = I;
  m.r = I;
  return m;
}

template <typename Scalar>
struct PlantState {
  Vector<Scalar> x;
  long t = 0;
};

template <typename Scalar>
struct Trajectory {
  std::vector<PlantState<Scalar>> states;
  std::vector<Vector<Scalar>> measurements;
  std::vector<Vector<Scalar>> ideal_measurements;  // H x_t, oracle/test use only
  std::vector<Vector<Scalar>> controls;

  std::size_t size() const { return states.size(); }
};

/// x0 ~ N(mean, cov).
template <typename Scalar>
struct InitialStateDistribution {
  Vector<Scalar> mean;
  Matrix<Scalar> cov;

  /// Default: mean (1, 0, ...), identity covariance.
  static InitialStateDistribution standard(Eigen::Index dx) {
    InitialStateDistribution d;
    d.mean = Vector<Scalar>::Zero(dx);
    if (dx > 0) d.mean(0) = Scalar(1);
    d.cov = Matrix<Scalar>::Identity(dx, dx);
    return d;
  }
};

/// Zero-mean Gaussian draw with the given covariance: L z with L the tolerant Cholesky factor.
template <typename Derived>
Vector<typename Derived::Scalar> sample_gaussian(const Eigen::MatrixBase<Derived>& cov, RngStream& rng) {
  using Scalar = typename Derived::Scalar;
  const Matrix<Scalar> L = covariance_factor(cov);
  return L * rng.standard_normal<Scalar>(L.rows());
}

/// Same as sample_gaussian with a precomputed factor; `count` draws as columns.
template <typename Scalar>
Matrix<Scalar> sample_gaussian_factored(const Matrix<Scalar>& factor, Eigen::Index count,
                                        RngStream& rng) {
  return factor * rng.standard_normal<Scalar>(factor.cols(), count);
}

template <typename Scalar>
PlantState<Scalar> step_plant(const LdsModel<Scalar>& model, const PlantState<Scalar>& s,
                              const Vector<Scalar>& u, RngStream& rng) {
  require_size(s.x, model.dx(), "state x");
  require_size(u, model.du(), "control u");
  PlantState<Scalar> next;
  next.x = model.F * s.x + model.B * u + sample_gaussian(model.Q, rng);
  next.t = s.t + 1;
  return next;
}

template <typename Scalar>
struct Measurement {
  Vector<Scalar> y;      // H x + n
  Vector<Scalar> ideal;  // H x
};

template <typename Scalar>
Measurement<Scalar> measure(const LdsModel<Scalar>& model, const PlantState<Scalar>& s, RngStream& rng) {
  require_size(s.x, model.dx(), "state x");
  Measurement<Scalar> m;
  m.ideal = model.H * s.x;
  m.y = m.ideal + sample_gaussian(model.R_true, rng);
  return m;
}

/// Stream layout for one simulated feature: child 0 draws x0, child 1 the plant
/// noise, child 2 the sensor noise.
enum class NoiseSource : std::uint64_t { kInitialState = 0, kPlant = 1, kSensor = 2 };

inline RngStream feature_stream(const RngStream& root, std::size_t feature, NoiseSource src) {
  return root.child(feature).child(static_cast<std::uint64_t>(src));
}

/// Simulates `n_feat` independent trajectories of `horizon` samples (t = 0..horizon-1)
/// sharing one model. `controls`, when given, holds u_t for every t and is shared by all
/// features.
template <typename Scalar>
std::vector<Trajectory<Scalar>> simulate_ensemble(
    const LdsModel<Scalar>& model, std::size_t n_feat, std::size_t horizon,
    const std::optional<std::vector<Vector<Scalar>>>& controls, const RngStream& root,
    const InitialStateDistribution<Scalar>& init) {
  if (n_feat < 1) throw ParameterError("simulate_ensemble: n_feat must be >= 1");
  if (horizon < 1) throw ParameterError("simulate_ensemble: horizon must be >= 1");
  if (controls && controls->size() < horizon)
    throw ParameterError("simulate_ensemble: controls shorter than horizon");
  require_size(init.mean, model.dx(), "initial mean");
  const Matrix<Scalar> q_factor = covariance_factor(model.Q);
  const Matrix<Scalar> r_factor = covariance_factor(model.R_true);
  const Matrix<Scalar> p0_factor = covariance_factor(init.cov);
  const Vector<Scalar> zero_u = Vector<Scalar>::Zero(model.du());

  std::vector<Trajectory<Scalar>> out(n_feat);
  for (std::size_t p = 0; p < n_feat; ++p) {
    RngStream init_rng = feature_stream(root, p, NoiseSource::kInitialState);
    RngStream plant_rng = feature_stream(root, p, NoiseSource::kPlant);
    RngStream sensor_rng = feature_stream(root, p, NoiseSource::kSensor);
    auto& traj = out[p];
    traj.states.reserve(horizon);
    PlantState<Scalar> s{init.mean + p0_factor * init_rng.standard_normal<Scalar>(model.dx()), 0};
    for (std::size_t t = 0; t < horizon; ++t) {
      const Vector<Scalar>& u = controls ? (*controls)[t] : zero_u;
      require_size(u, model.du(), "control u");
      Vector<Scalar> ideal = model.H * s.x;
      traj.measurements.push_back(ideal + r_factor * sensor_rng.standard_normal<Scalar>(model.dy()));
      traj.ideal_measurements.push_back(std::move(ideal));
      traj.controls.push_back(u);
      traj.states.push_back(s);
      PlantState<Scalar> next;
      next.x = model.F * s.x + model.B * u + q_factor * plant_rng.standard_normal<Scalar>(model.dx());
      next.t = s.t + 1;
      s = std::move(next);
    }
  }
  return out;
}

/// Uncontrolled ensemble (u = 0).
template <typename Scalar>
std::vector<Trajectory<Scalar>> simulate_ensemble(const LdsModel<Scalar>& model, std::size_t n_feat,
                                                  std::size_t horizon, const RngStream& root,
                                                  const InitialStateDistribution<Scalar>& init) {
  return simulate_ensemble(model, n_feat, horizon, std::optional<std::vector<Vector<Scalar>>>(), root, init);
}

}  // namespace nkpc
