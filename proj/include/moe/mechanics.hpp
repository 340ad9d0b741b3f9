#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "moe/common.hpp"
#include "moe/scene.hpp"

namespace moe {

// Pseudo-rigid-body discretization of one soft finger: n_links rigid
// segments joined by torsional springs, two orthogonal bending angles per
// joint. Four tendons per finger (two antagonistic pairs, one per bending
// plane) couple to the actuators through a series elasticity.
struct FingerModel {
  int n_links = 8;
  double link_length = 0.105 / 8.0;        // m
  double radius = 0.0085;                  // m (17 mm diameter)
  double joint_stiffness = 0.01;           // N*m/rad per torsional joint
  double moment_arm = 0.006;               // m, tendon offset from centerline
  double tendon_series_stiffness = 500.0;  // N/m

  static constexpr int kTendonsPerFinger = 4;

  double total_length() const { return n_links * link_length; }

  void validate() const {
    require(n_links >= 1, "FingerModel: n_links must be >= 1");
    require(link_length > 0.0, "FingerModel: link_length must be > 0");
    require(joint_stiffness > 0.0 && tendon_series_stiffness > 0.0,
            "FingerModel: stiffnesses must be > 0");
    require(moment_arm > 0.0 && moment_arm < radius,
            "FingerModel: moment_arm must lie inside the finger radius");
  }
};

// Two-finger end-effector. Finger bases sit at +-finger_spacing/2 along the
// mount x axis, finger axes along mount +z. Actuator k drives the
// antagonistic pair of finger k/2, bending plane k%2.
struct MoeModel {
  FingerModel finger;
  double finger_spacing = 0.05;  // m between finger base centers

  static constexpr int kFingers = 2;
  static constexpr int kActuators = 4;

  Iso3 finger_base(const Iso3& mount, int finger_index) const {
    const double x = (finger_index == 0 ? -0.5 : 0.5) * finger_spacing;
    return mount * Eigen::Translation3d(x, 0.0, 0.0);
  }

  void validate() const {
    finger.validate();
    require(finger_spacing > 2.0 * finger.radius,
            "MoeModel: fingers must not overlap at the base");
  }
};

// Bending angles of one finger. plane0 rotates about the local y axis
// (+theta tips toward +x); plane1 about the post-plane0 local x axis
// (+theta tips toward -y).
struct FingerAngles {
  VecX plane0;
  VecX plane1;

  static FingerAngles zero(int n_links) {
    return FingerAngles{VecX::Zero(n_links), VecX::Zero(n_links)};
  }
};

struct FingerState {
  std::array<FingerAngles, MoeModel::kFingers> fingers;
  Iso3 base_pose{Iso3::Identity()};

  static FingerState zero(const MoeModel& model, const Iso3& base) {
    FingerState s;
    s.fingers = {FingerAngles::zero(model.finger.n_links),
                 FingerAngles::zero(model.finger.n_links)};
    s.base_pose = base;
    return s;
  }
};

// Joint angles beyond this invalidate the small-curvature model; the
// solver clamps to stay inside.
inline constexpr double kJointAngleLimit = 1.5707963267948966 - 1e-9;

inline int actuator_index(int finger, int plane) { return finger * 2 + plane; }

// Tendon layout: [finger*4 + plane*2 + side], side 0 = the routing that
// shortens under +theta, side 1 = its antagonist.
inline int tendon_index(int finger, int plane, int side) {
  return finger * 4 + plane * 2 + side;
}

struct TendonState {
  Eigen::Matrix<double, 8, 1> tensions = Eigen::Matrix<double, 8, 1>::Zero();
  Vec4 commanded_displacements = Vec4::Zero();
};

struct ContactPoint {
  Vec3 position;   // world, on the finger surface
  Vec3 normal;     // unit, direction the finger pushes (into the head)
  double penetration = 0.0;
  Vec3 force;      // on the head
  int finger = 0;
  int link = 0;
};

struct Wrench {
  Vec3 force{0.0, 0.0, 0.0};
  Vec3 torque{0.0, 0.0, 0.0};
};

// Stiff parallel-jaw reference end-effector.
struct RigidGripperModel {
  double finger_length = 0.09;       // m, jaw plate extent
  double contact_stiffness = 2.0e5;  // N/m
  double jaw_separation = 0.03;      // m
};

// ---------------------------------------------------------------------------
// Kinematics

inline void check_state_dims(const FingerModel& model, const FingerAngles& a) {
  require(a.plane0.size() == model.n_links && a.plane1.size() == model.n_links,
          "finger state dimensions do not match model.n_links");
}

// Frames [0..n_links]: frame 0 is the finger base, frame j+1 follows joint
// j's two rotations and the link translation. Link j spans frames j..j+1.
inline std::vector<Iso3> forward_kinematics(const FingerModel& model,
                                            const Iso3& finger_base,
                                            const FingerAngles& angles) {
  check_state_dims(model, angles);
  std::vector<Iso3> frames;
  frames.reserve(static_cast<std::size_t>(model.n_links) + 1);
  frames.push_back(finger_base);
  Iso3 cur = finger_base;
  for (int j = 0; j < model.n_links; ++j) {
    cur = cur * Eigen::AngleAxisd(angles.plane0[j], Vec3::UnitY()) *
          Eigen::AngleAxisd(angles.plane1[j], Vec3::UnitX()) *
          Eigen::Translation3d(0.0, 0.0, model.link_length);
    frames.push_back(cur);
  }
  return frames;
}

inline std::array<std::vector<Iso3>, MoeModel::kFingers> forward_kinematics(
    const MoeModel& model, const FingerState& state) {
  std::array<std::vector<Iso3>, MoeModel::kFingers> out;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    out[f] = forward_kinematics(model.finger,
                                model.finger_base(state.base_pose, f),
                                state.fingers[f]);
  }
  return out;
}

inline Vec3 finger_tip(const std::vector<Iso3>& frames) {
  return frames.back().translation();
}

// Wrist-fixed force/sensor frame: x along the finger-separation (pinch)
// axis, y opposite the finger direction, z along the palm normal — the
// axis the fingers press against the head in the tangent posture. Forces
// the estimator learns are expressed here, so z carries the dominant
// component.
inline Mat3 sensor_rotation_in_mount() {
  Mat3 r;
  r.col(0) = Vec3::UnitX();
  r.col(1) = -Vec3::UnitZ();
  r.col(2) = Vec3::UnitY();
  return r;
}

inline Mat3 sensor_frame(const Iso3& base_pose) {
  return base_pose.rotation() * sensor_rotation_in_mount();
}

// Centerline sample points used for both contact generation and the grasp
// hull. Two interior points per link plus the very tip.
inline std::vector<Vec3> finger_sample_points(const std::vector<Iso3>& frames) {
  std::vector<Vec3> pts;
  pts.reserve((frames.size() - 1) * 2 + 1);
  for (std::size_t j = 0; j + 1 < frames.size(); ++j) {
    const Vec3 a = frames[j].translation();
    const Vec3 b = frames[j + 1].translation();
    pts.push_back(a + 0.25 * (b - a));
    pts.push_back(a + 0.75 * (b - a));
  }
  pts.push_back(frames.back().translation());
  return pts;
}

// ---------------------------------------------------------------------------
// Tendon coupling

// Per-tendon tension under the series-elastic law. Bending toward a
// routing side shortens that side's path by moment_arm * sum(theta);
// tension is the series stiffness times the positive part of the remaining
// stretch. Slack tendons carry exactly zero.
inline TendonState tendon_tensions(const MoeModel& model,
                                   const FingerState& state,
                                   const Vec4& commands) {
  require(is_finite(commands), "tendon_tensions: commands must be finite");
  TendonState out;
  out.commanded_displacements = commands;
  const double r = model.finger.moment_arm;
  const double k = model.finger.tendon_series_stiffness;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    check_state_dims(model.finger, state.fingers[f]);
    for (int p = 0; p < 2; ++p) {
      const double sum_theta =
          (p == 0 ? state.fingers[f].plane0 : state.fingers[f].plane1).sum();
      const double d = commands[actuator_index(f, p)];
      const double stretch = d - r * sum_theta;  // side 0 routing
      out.tensions[tendon_index(f, p, 0)] = k * std::max(0.0, stretch);
      out.tensions[tendon_index(f, p, 1)] = k * std::max(0.0, -stretch);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contact

// Piecewise-linear penalty: hair layer up to h_hair, scalp beyond.
// Continuous and monotone in the penetration.
inline double hair_layer_force(double penetration, const HeadModel& head) {
  if (penetration <= 0.0) return 0.0;
  if (penetration <= head.h_hair) return head.k_hair * penetration;
  return head.k_hair * head.h_hair + head.k_scalp * (penetration - head.h_hair);
}

namespace detail {

inline void append_finger_contacts(const FingerModel& finger,
                                   const std::vector<Iso3>& frames,
                                   int finger_index, const HeadModel& head,
                                   std::vector<ContactPoint>* out) {
  const double reach = head.hair_surface_radius() + finger.radius;
  for (std::size_t j = 0; j + 1 < frames.size(); ++j) {
    const Vec3 a = frames[j].translation();
    const Vec3 b = frames[j + 1].translation();
    const bool last = j + 2 == frames.size();
    const double fractions[3] = {0.25, 0.75, 1.0};
    const int n_samples = last ? 3 : 2;
    for (int s = 0; s < n_samples; ++s) {
      const Vec3 p = a + fractions[s] * (b - a);
      const Vec3 rel = p - head.center;
      const double dist = rel.norm();
      if (dist < 1e-12) continue;
      const double penetration = reach - dist;
      if (penetration <= 0.0) continue;  // grazing (== 0) is no contact
      const Vec3 outward = rel / dist;
      ContactPoint c;
      c.penetration = penetration;
      c.normal = -outward;
      c.position = p - finger.radius * outward;
      c.force = hair_layer_force(penetration, head) * c.normal;
      c.finger = finger_index;
      c.link = static_cast<int>(j);
      out->push_back(c);
    }
  }
}

}  // namespace detail

inline std::vector<ContactPoint> contact_forces(const MoeModel& model,
                                                const FingerState& state,
                                                const HeadModel& head) {
  std::vector<ContactPoint> contacts;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    const auto frames = forward_kinematics(
        model.finger, model.finger_base(state.base_pose, f), state.fingers[f]);
    detail::append_finger_contacts(model.finger, frames, f, head, &contacts);
  }
  return contacts;
}

// Net wrench applied to the head about its center. Equal and opposite to
// the total contact reaction on the fingers by construction.
inline Wrench head_wrench(const std::vector<ContactPoint>& contacts,
                          const HeadModel& head) {
  Wrench w;
  for (const auto& c : contacts) {
    w.force += c.force;
    w.torque += (c.position - head.center).cross(c.force);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Static equilibrium

struct EquilibriumOptions {
  double tolerance = 1e-6;  // N*m, infinity norm of the joint torque residual
  int max_iterations = 200;
};

struct EquilibriumResult {
  FingerState state;
  std::vector<ContactPoint> contacts;
  TendonState tendons;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

// Joint torque residual of one finger: spring - tendon - contact, stacked
// [plane0; plane1]. Tendon torque is uniform over the joints a tendon
// crosses; contact torque is taken about each upstream joint axis.
inline VecX finger_residual(const MoeModel& model, const Iso3& finger_base,
                            const FingerAngles& angles, int finger_index,
                            double cmd_p0, double cmd_p1,
                            const HeadModel* head) {
  const FingerModel& fm = model.finger;
  const int n = fm.n_links;
  const auto frames = forward_kinematics(fm, finger_base, angles);

  const double r = fm.moment_arm;
  const double kts = fm.tendon_series_stiffness;
  const double s0 = cmd_p0 - r * angles.plane0.sum();
  const double s1 = cmd_p1 - r * angles.plane1.sum();
  const double tau_t0 = r * (kts * std::max(0.0, s0) - kts * std::max(0.0, -s0));
  const double tau_t1 = r * (kts * std::max(0.0, s1) - kts * std::max(0.0, -s1));

  VecX res(2 * n);
  for (int i = 0; i < n; ++i) {
    res[i] = fm.joint_stiffness * angles.plane0[i] - tau_t0;
    res[n + i] = fm.joint_stiffness * angles.plane1[i] - tau_t1;
  }

  if (head != nullptr) {
    std::vector<ContactPoint> contacts;
    append_finger_contacts(fm, frames, finger_index, *head, &contacts);
    for (const auto& c : contacts) {
      const Vec3 f_finger = -c.force;
      for (int i = 0; i <= c.link; ++i) {
        const Vec3 lever = c.position - frames[i].translation();
        const Vec3 moment = lever.cross(f_finger);
        const Mat3 R = frames[i].rotation();
        const Vec3 axis0 = R.col(1);
        const Vec3 axis1 =
            (R * Eigen::AngleAxisd(angles.plane0[i], Vec3::UnitY())).col(0);
        res[i] -= axis0.dot(moment);
        res[n + i] -= axis1.dot(moment);
      }
    }
  }
  return res;
}

inline FingerAngles unpack_angles(const VecX& x, int n) {
  FingerAngles a;
  a.plane0 = x.head(n);
  a.plane1 = x.tail(n);
  return a;
}

inline VecX clamp_angles(VecX x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x[i] = std::clamp(x[i], -kJointAngleLimit, kJointAngleLimit);
  }
  return x;
}

// Damped Newton with forward-difference Jacobian, step halving and an
// escalating ridge when a step fails to reduce the residual.
inline std::pair<FingerAngles, int> solve_finger(const MoeModel& model,
                                                 const Iso3& finger_base,
                                                 int finger_index, double cmd_p0,
                                                 double cmd_p1,
                                                 const HeadModel* head,
                                                 const FingerAngles& initial,
                                                 const EquilibriumOptions& opt) {
  const int n = model.finger.n_links;
  const int dim = 2 * n;
  VecX x(dim);
  x << initial.plane0, initial.plane1;
  x = clamp_angles(x);

  auto residual_at = [&](const VecX& v) {
    return finger_residual(model, finger_base, unpack_angles(v, n),
                           finger_index, cmd_p0, cmd_p1, head);
  };

  VecX res = residual_at(x);
  double res_norm = res.lpNorm<Eigen::Infinity>();
  double ridge = 1e-12;
  const double fd_step = 1e-7;

  int iter = 0;
  for (; iter < opt.max_iterations && res_norm > opt.tolerance; ++iter) {
    MatX jac(dim, dim);
    for (int j = 0; j < dim; ++j) {
      VecX xp = x;
      xp[j] += fd_step;
      jac.col(j) = (residual_at(xp) - res) / fd_step;
    }
    jac.diagonal().array() += ridge;

    const VecX step = jac.partialPivLu().solve(res);
    if (!step.allFinite()) {
      ridge *= 100.0;
      continue;
    }

    bool accepted = false;
    double alpha = 1.0;
    for (int h = 0; h < 20; ++h) {
      const VecX trial = clamp_angles(x - alpha * step);
      const VecX trial_res = residual_at(trial);
      const double trial_norm = trial_res.lpNorm<Eigen::Infinity>();
      if (trial_norm < res_norm) {
        x = trial;
        res = trial_res;
        res_norm = trial_norm;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (accepted) {
      ridge = std::max(1e-12, ridge * 0.1);
    } else {
      ridge *= 100.0;
    }
  }

  if (res_norm > opt.tolerance) {
    throw SolverError("equilibrium_solve: no convergence after " +
                          std::to_string(iter) + " iterations (residual " +
                          std::to_string(res_norm) + " N*m)",
                      res_norm, iter);
  }
  return {unpack_angles(x, n), iter};
}

}  // namespace detail

// Static equilibrium of both fingers under tendon commands and head
// contact. Deterministic given inputs; the optional initial state is a
// warm start and part of the input contract.
inline EquilibriumResult equilibrium_solve(
    const MoeModel& model, const Vec4& commands, const HeadModel& head,
    const Iso3& base_pose, const EquilibriumOptions& opt = {},
    const FingerState* initial = nullptr) {
  require(is_finite(commands), "equilibrium_solve: commands must be finite");
  require(is_finite(base_pose.matrix()),
          "equilibrium_solve: base pose must be finite");
  model.validate();

  EquilibriumResult out;
  out.state.base_pose = base_pose;
  int max_iter = 0;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    const FingerAngles start = initial != nullptr
                                   ? initial->fingers[f]
                                   : FingerAngles::zero(model.finger.n_links);
    auto [angles, iters] = detail::solve_finger(
        model, model.finger_base(base_pose, f), f,
        commands[actuator_index(f, 0)], commands[actuator_index(f, 1)], &head,
        start, opt);
    out.state.fingers[f] = angles;
    max_iter = std::max(max_iter, iters);
  }
  out.iterations = max_iter;
  out.contacts = contact_forces(model, out.state, head);
  out.tendons = tendon_tensions(model, out.state, commands);

  double res_norm = 0.0;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    const VecX res = detail::finger_residual(
        model, model.finger_base(base_pose, f), out.state.fingers[f], f,
        commands[actuator_index(f, 0)], commands[actuator_index(f, 1)], &head);
    res_norm = std::max(res_norm, res.lpNorm<Eigen::Infinity>());
  }
  out.residual = res_norm;
  return out;
}

// Free-space variant used by tests and free-space dataset episodes.
inline EquilibriumResult equilibrium_solve_free(
    const MoeModel& model, const Vec4& commands, const Iso3& base_pose,
    const EquilibriumOptions& opt = {}) {
  HeadModel far_head = make_head(Vec3(0.0, 0.0, 1e6), 0.09, 0.02, 50.0, 2000.0,
                                 /*n_anchors=*/0);
  return equilibrium_solve(model, commands, far_head, base_pose, opt);
}

// Peak head force when a stiff fingertip is pressed a commanded depth past
// first hair contact: the jaw stiffness acts in series with the
// piecewise-linear hair/scalp law. Monotone non-decreasing in depth.
inline double rigid_press(const RigidGripperModel& gripper,
                          const HeadModel& head, double commanded_depth) {
  require(commanded_depth >= 0.0, "rigid_press: depth must be >= 0");
  require(gripper.contact_stiffness >= 100.0 * head.k_scalp &&
              gripper.contact_stiffness >= 100.0 * head.k_hair,
          "rigid_press: gripper must be much stiffer than the head");
  const double kg = gripper.contact_stiffness;
  const double kh = head.k_hair;
  const double ks = head.k_scalp;
  const double f_knee = kh * head.h_hair;
  const double x_knee = head.h_hair + f_knee / kg;
  if (commanded_depth <= x_knee) {
    return commanded_depth * (kg * kh) / (kg + kh);
  }
  return f_knee + (commanded_depth - x_knee) * (kg * ks) / (kg + ks);
}

}  // namespace moe
