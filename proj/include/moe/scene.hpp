#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "moe/common.hpp"
#include "moe/rng.hpp"

namespace moe {

// Spherical head with a compressible hair layer over a stiffer scalp.
// strand_anchors seed the hair-grasp proxy metric.
struct HeadModel {
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 0.09;    // m
  double h_hair = 0.02;    // m, hair layer thickness
  double k_hair = 50.0;    // N/m
  double k_scalp = 2000.0; // N/m
  std::vector<Vec3> strand_anchors;

  double hair_surface_radius() const { return radius + h_hair; }

  void validate() const {
    require(radius > 0.0, "HeadModel: radius must be > 0");
    require(h_hair >= 0.0, "HeadModel: h_hair must be >= 0");
    require(k_hair > 0.0 && k_scalp > 0.0, "HeadModel: stiffnesses must be > 0");
  }
};

struct WigPreset {
  std::string name;
  double h_hair;
  double k_hair;
};

// Three hair-layer parameterizations standing in for physically distinct
// wigs (differing length/density realized as thickness/stiffness).
inline const std::array<WigPreset, 3>& wig_presets() {
  static const std::array<WigPreset, 3> presets{{
      {"wig1", 0.015, 70.0},
      {"wig2", 0.030, 40.0},
      {"wig3", 0.020, 50.0},
  }};
  return presets;
}

inline const WigPreset& wig_preset(const std::string& name) {
  for (const auto& p : wig_presets()) {
    if (p.name == name) return p;
  }
  throw ContractViolation("unknown wig preset: " + name);
}

inline std::vector<Vec3> seed_strand_anchors(const Vec3& center, double radius,
                                             int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> anchors;
  anchors.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 6.283185307179586476925286766559);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    anchors.push_back(center +
                      radius * Vec3(s * std::cos(phi), s * std::sin(phi), z));
  }
  return anchors;
}

inline HeadModel make_head(const Vec3& center = Vec3::Zero(),
                           double radius = 0.09, double h_hair = 0.02,
                           double k_hair = 50.0, double k_scalp = 2000.0,
                           int n_anchors = 500,
                           std::uint64_t anchor_seed = 0x5EEDull) {
  HeadModel head;
  head.center = center;
  head.radius = radius;
  head.h_hair = h_hair;
  head.k_hair = k_hair;
  head.k_scalp = k_scalp;
  head.validate();
  head.strand_anchors = seed_strand_anchors(center, radius, n_anchors, anchor_seed);
  return head;
}

inline HeadModel make_head_with_wig(const WigPreset& wig,
                                    const Vec3& center = Vec3::Zero(),
                                    double radius = 0.09,
                                    double k_scalp = 2000.0,
                                    int n_anchors = 500,
                                    std::uint64_t anchor_seed = 0x5EEDull) {
  return make_head(center, radius, wig.h_hair, wig.k_hair, k_scalp, n_anchors,
                   anchor_seed);
}

// Signed distance from a point to the hair outer surface; negative inside.
inline double surface_gap(const HeadModel& head, const Vec3& point) {
  require(is_finite(point), "surface_gap: point must be finite");
  return (point - head.center).norm() - head.hair_surface_radius();
}

enum class HeadMotion { kStatic, kSinusoidalDrift, kSeededRandomWalk };

inline HeadMotion head_motion_from_string(const std::string& s) {
  if (s == "static") return HeadMotion::kStatic;
  if (s == "sinusoidal-drift") return HeadMotion::kSinusoidalDrift;
  if (s == "seeded-random-walk") return HeadMotion::kSeededRandomWalk;
  throw ContractViolation("unknown head motion mode: " + s);
}

// Stand-in for the third-person camera + face-keypoint tracker: true head
// center by a motion law, observations with zero-mean noise emitted at a
// fixed rate and held between ticks.
struct HeadPoseProvider {
  HeadMotion mode = HeadMotion::kStatic;
  double amplitude = 0.0;    // m
  double period = 4.0;       // s
  double noise_sigma = 0.0;  // m
  double rate_hz = 12.5;
  Vec3 base_center{0.0, 0.0, 0.0};
  Vec3 drift_axis{1.0, 0.0, 0.0};

  void validate() const {
    require(noise_sigma >= 0.0, "HeadPoseProvider: noise_sigma must be >= 0");
    require(rate_hz > 0.0, "HeadPoseProvider: rate must be > 0");
    require(period > 0.0, "HeadPoseProvider: period must be > 0");
  }
};

struct HeadPoseSample {
  Vec3 true_center;      // continuous-time truth at query time
  Vec3 observed_center;  // noisy sample from the latest tick, held
  long tick;             // index of the held observation
};

namespace detail {

inline Vec3 random_walk_center(const HeadPoseProvider& p, long tick,
                               std::uint64_t seed) {
  // per-tick step sigma chosen so the RMS drift reaches `amplitude`
  // after `period` seconds
  const double sigma = p.amplitude / std::sqrt(p.period * p.rate_hz);
  Rng rng(derive_seed(seed, 0xA11CEull));
  Vec3 c = p.base_center;
  for (long k = 0; k < tick; ++k) {
    c += Vec3(rng.normal(sigma), rng.normal(sigma), rng.normal(sigma));
  }
  return c;
}

inline Vec3 true_center_at(const HeadPoseProvider& p, double t,
                           std::uint64_t seed) {
  switch (p.mode) {
    case HeadMotion::kStatic:
      return p.base_center;
    case HeadMotion::kSinusoidalDrift:
      return p.base_center +
             p.amplitude *
                 std::sin(6.283185307179586476925286766559 * t / p.period) *
                 p.drift_axis.normalized();
    case HeadMotion::kSeededRandomWalk: {
      const long tick =
          static_cast<long>(std::floor(t * p.rate_hz + 1e-9));
      return random_walk_center(p, tick, seed);
    }
  }
  return p.base_center;
}

}  // namespace detail

inline HeadPoseSample observed_head_pose(const HeadPoseProvider& provider,
                                         double t, std::uint64_t seed) {
  require(t >= 0.0, "observed_head_pose: t must be >= 0");
  provider.validate();
  const long tick = static_cast<long>(std::floor(t * provider.rate_hz + 1e-9));
  const double t_tick = static_cast<double>(tick) / provider.rate_hz;
  const Vec3 true_at_tick = detail::true_center_at(provider, t_tick, seed);

  Rng noise(derive_seed(seed, 0xB0B0ull + static_cast<std::uint64_t>(tick)));
  const Vec3 observed =
      true_at_tick + Vec3(noise.normal(provider.noise_sigma),
                          noise.normal(provider.noise_sigma),
                          noise.normal(provider.noise_sigma));
  return HeadPoseSample{detail::true_center_at(provider, t, seed), observed,
                        tick};
}

struct DemoSample {
  double t;
  Vec3 point;
};

// Hand keypoint trajectory captured at the tracker rate.
struct Demonstration {
  std::vector<DemoSample> samples;

  double duration() const {
    return samples.empty() ? 0.0 : samples.back().t;
  }
};

enum class DemoStyle { kArc, kZigzag };

inline DemoStyle demo_style_from_string(const std::string& s) {
  if (s == "arc") return DemoStyle::kArc;
  if (s == "zigzag") return DemoStyle::kZigzag;
  throw ContractViolation("unknown demonstration style: " + s);
}

// Synthetic combing trajectory on the upper head, in place of a captured
// human hand path. Points stay within h_hair/2 of the scalp sphere and move
// at a fixed angular speed so consecutive samples stay close.
inline Demonstration synth_demonstration(const HeadModel& head, DemoStyle style,
                                         double duration, std::uint64_t seed,
                                         double rate_hz = 12.5) {
  require(duration > 0.0, "synth_demonstration: duration must be > 0");
  Rng rng(seed);
  const double azimuth0 = rng.uniform(0.0, 6.283185307179586476925286766559);
  const double radial = head.radius + 0.25 * head.h_hair +
                        rng.uniform(-0.125, 0.125) * head.h_hair;

  const long n = std::lround(duration * rate_hz);
  Demonstration demo;
  demo.samples.reserve(static_cast<std::size_t>(std::max<long>(n, 1)));

  const double polar_speed = 0.15;  // rad/s, slow sweep over the crown
  const double polar_span = 1.0;    // rad, ping-pong range from the pole
  for (long k = 0; k < std::max<long>(n, 1); ++k) {
    const double t = static_cast<double>(k) / rate_hz;
    // triangle-wave polar sweep in [0.1, 0.1 + polar_span]
    const double phase = std::fmod(polar_speed * t, 2.0 * polar_span);
    const double theta = 0.1 + (phase <= polar_span ? phase : 2.0 * polar_span - phase);
    double psi = azimuth0;
    if (style == DemoStyle::kZigzag) {
      psi += 0.5 * std::sin(6.283185307179586476925286766559 * t / 3.5);
    }
    const Vec3 dir(std::sin(theta) * std::cos(psi),
                   std::sin(theta) * std::sin(psi), std::cos(theta));
    demo.samples.push_back({t, head.center + radial * dir});
  }
  return demo;
}

inline void write_demonstration_csv(const Demonstration& demo,
                                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoError::Kind::Filesystem, "cannot open " + path);
  out << "t,x,y,z\n";
  char buf[160];
  for (const auto& s : demo.samples) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", s.t,
                  s.point.x(), s.point.y(), s.point.z());
    out << buf;
  }
}

inline Demonstration read_demonstration_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::Filesystem, "cannot open " + path);
  Demonstration demo;
  std::string line;
  bool first = true;
  double prev_t = -1.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("t,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    DemoSample s;
    char comma;
    if (!(ls >> s.t >> comma >> s.point.x() >> comma >> s.point.y() >> comma >>
          s.point.z())) {
      throw IoError(IoError::Kind::Malformed,
                    "malformed demonstration row: " + line);
    }
    if (s.t <= prev_t) {
      throw IoError(IoError::Kind::Malformed,
                    "demonstration times must be strictly increasing");
    }
    prev_t = s.t;
    demo.samples.push_back(s);
  }
  return demo;
}

}  // namespace moe
