#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "moe/common.hpp"
#include "moe/geometry.hpp"
#include "moe/mechanics.hpp"
#include "moe/scene.hpp"

namespace moe {

// ---------------------------------------------------------------------------
// Hair-grasp proxy: anchors enclosed by the finger footprint.

// Counts scalp strand anchors whose radial projection onto the tangent
// plane at the approach point falls inside the convex hull of the finger
// sample points that sit within the hair layer. `margin` extends the layer
// test outward (pass the finger radius for centerline points); points
// beyond it cannot cage strands and do not contribute to the footprint.
inline int count_enclosed_strands(const HeadModel& head,
                                  const std::vector<Vec3>& finger_points,
                                  const Vec3& approach_direction,
                                  double margin = 0.0) {
  const Vec3 n = approach_direction.normalized();
  Vec3 e1 = n.cross(std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX());
  e1.normalize();
  const Vec3 e2 = n.cross(e1);

  auto project = [&](const Vec3& p, Vec2* out) {
    const Vec3 rel = p - head.center;
    const double along = rel.dot(n);
    if (along < 1e-6) return false;  // behind the tangent hemisphere
    const Vec3 q = head.center + rel * (head.radius / along);
    *out = Vec2((q - head.center - head.radius * n).dot(e1),
                (q - head.center - head.radius * n).dot(e2));
    return true;
  };

  std::vector<Vec2> footprint;
  for (const auto& p : finger_points) {
    const double dist = (p - head.center).norm();
    if (dist >= head.hair_surface_radius() + margin) continue;  // above the hair
    Vec2 uv;
    if (project(p, &uv)) footprint.push_back(uv);
  }
  const auto hull = convex_hull(footprint);
  if (hull.size() < 3) return 0;

  int count = 0;
  for (const auto& anchor : head.strand_anchors) {
    Vec2 uv;
    if (project(anchor, &uv) && point_in_convex_hull(uv, hull)) ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Soft press / grasp sequence used by the grasp-compare experiment.

struct PressScenario {
  MoeModel moe;
  HeadModel head = make_head();
  RigidGripperModel gripper;
  double tilt_rad = 0.8;           // mount lean from vertical, toward +y
  double closure_command = 0.006;  // m, plane-0 closing displacement
  int press_steps = 6;
  int closure_steps = 4;
  EquilibriumOptions solver;
};

namespace detail {

// Mount pose leaning `tilt` from vertical, fingers pointing down toward
// the head, positioned so the finger tips sit `height` above the head
// center along world z at zero descent.
inline Iso3 press_mount_pose(const PressScenario& sc, double descent) {
  const double tilt = sc.tilt_rad;
  const double L = sc.moe.finger.total_length();
  Iso3 pose = Iso3::Identity();
  pose.linear() =
      Eigen::AngleAxisd(3.14159265358979323846 + tilt, Vec3::UnitX())
          .toRotationMatrix();
  // finger direction after this rotation: (0, sin(tilt), -cos(tilt))
  const Vec3 finger_dir(0.0, std::sin(tilt), -std::cos(tilt));
  const Vec3 tip_center_target(0.0, 0.0, 0.0);  // tips straddle the crown
  const Vec3 mount_xy = tip_center_target - L * finger_dir;
  pose.translation() =
      sc.head.center + Vec3(mount_xy.x(), mount_xy.y(), 0.0) +
      Vec3(0.0, 0.0, mount_xy.z() - descent);
  return pose;
}

// Maximum penetration of any undeformed finger sample point at the given
// mount z-offset above the crown-touch geometry.
inline double press_max_penetration(const PressScenario& sc, double z_shift) {
  FingerState straight = FingerState::zero(sc.moe, Iso3::Identity());
  Iso3 pose = press_mount_pose(sc, 0.0);
  pose.translation().z() += z_shift;
  straight.base_pose = pose;
  const auto frames = forward_kinematics(sc.moe, straight);
  const double reach = sc.head.hair_surface_radius() + sc.moe.finger.radius;
  double max_pen = -1e9;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    for (const auto& p : finger_sample_points(frames[f])) {
      max_pen = std::max(max_pen, reach - (p - sc.head.center).norm());
    }
  }
  return max_pen;
}

// z-offset at which the undeformed fingers barely touch the hair surface.
inline double press_first_contact_shift(const PressScenario& sc) {
  double lo = -0.3, hi = 0.3;
  // press_max_penetration decreases in z_shift
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (press_max_penetration(sc, mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace detail

struct SoftPressResult {
  double max_force_n = 0.0;
  int strand_count = 0;
  FingerState final_state;
  std::vector<ContactPoint> final_contacts;
  std::vector<Vec3> swept_points;  // in-hair finger points over the closing sweep
};

// Lower the mount `depth` past first hair contact in steps, then ramp the
// closing pair; reports the peak head force over the sequence. Strands are
// counted against the footprint swept by the closing fingers while inside
// the hair layer (closing drags strands along; a press alone cages none).
inline SoftPressResult soft_press_and_grasp(const PressScenario& sc,
                                            double depth) {
  require(depth >= 0.0, "soft_press_and_grasp: depth must be >= 0");
  const double z0 = detail::press_first_contact_shift(sc);

  SoftPressResult out;
  FingerState warm = FingerState::zero(sc.moe, Iso3::Identity());
  auto run = [&](double descent, const Vec4& commands, bool closing) {
    Iso3 pose = detail::press_mount_pose(sc, 0.0);
    pose.translation().z() += z0 - descent;
    const EquilibriumResult eq = equilibrium_solve(
        sc.moe, commands, sc.head, pose, sc.solver, &warm);
    warm = eq.state;
    const Wrench w = head_wrench(eq.contacts, sc.head);
    out.max_force_n = std::max(out.max_force_n, w.force.norm());
    out.final_state = eq.state;
    out.final_contacts = eq.contacts;
    if (closing && commands.cwiseAbs().maxCoeff() > 0.0) {
      const double reach = sc.head.hair_surface_radius() + sc.moe.finger.radius;
      const auto frames = forward_kinematics(sc.moe, eq.state);
      for (int f = 0; f < MoeModel::kFingers; ++f) {
        for (const auto& p : finger_sample_points(frames[f])) {
          if ((p - sc.head.center).norm() < reach) {
            out.swept_points.push_back(p);
          }
        }
      }
    }
  };

  for (int k = 1; k <= sc.press_steps; ++k) {
    run(depth * k / sc.press_steps, Vec4::Zero(), false);
  }
  for (int k = 1; k <= sc.closure_steps; ++k) {
    const double c = sc.closure_command * k / sc.closure_steps;
    Vec4 commands = Vec4::Zero();
    commands[actuator_index(0, 0)] = c;   // finger 0 bends toward +x
    commands[actuator_index(1, 0)] = -c;  // finger 1 bends toward -x
    run(depth, commands, true);
  }

  out.strand_count = count_enclosed_strands(
      sc.head, out.swept_points, Vec3(0.0, 0.0, 1.0), sc.moe.finger.radius);
  return out;
}

// Rigid parallel-jaw press + grasp proxy: closed-form press force,
// enclosed strands from the between-jaw slab widened by the press depth.
inline int rigid_enclosed_strands(const PressScenario& sc, double depth) {
  const double half_width = 0.5 * sc.gripper.jaw_separation + depth;
  const double half_length = 0.5 * sc.gripper.finger_length;
  const Vec3 n(0.0, 0.0, 1.0);
  int count = 0;
  for (const auto& anchor : sc.head.strand_anchors) {
    const Vec3 rel = anchor - sc.head.center;
    const double along = rel.dot(n);
    if (along < 1e-6) continue;
    const Vec3 q = sc.head.center + rel * (sc.head.radius / along);
    const Vec3 local = q - (sc.head.center + sc.head.radius * n);
    if (std::abs(local.x()) <= half_width && std::abs(local.y()) <= half_length) {
      ++count;
    }
  }
  return count;
}

struct GraspCompareRow {
  std::string end_effector;  // "rigid" | "moe"
  double depth_mm = 0.0;
  double max_force_n = 0.0;
  int strand_count = 0;
};

inline std::vector<GraspCompareRow> grasp_compare(
    const PressScenario& sc, const std::vector<double>& depths_mm) {
  std::vector<GraspCompareRow> rows;
  for (double mm : depths_mm) {
    require(mm > 0.0, "grasp_compare: depths must be positive");
    const double depth = mm * 1e-3;
    rows.push_back({"rigid", mm, rigid_press(sc.gripper, sc.head, depth),
                    rigid_enclosed_strands(sc, depth)});
  }
  for (double mm : depths_mm) {
    const double depth = mm * 1e-3;
    const SoftPressResult res = soft_press_and_grasp(sc, depth);
    rows.push_back({"moe", mm, res.max_force_n, res.strand_count});
  }
  return rows;
}

}  // namespace moe
