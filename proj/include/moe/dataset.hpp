#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moe/common.hpp"
#include "moe/estimator.hpp"
#include "moe/mechanics.hpp"
#include "moe/parallel.hpp"
#include "moe/rng.hpp"
#include "moe/scene.hpp"
#include "moe/sensing.hpp"
#include "moe/serialize.hpp"

namespace moe {

// Collection could not produce a usable dataset (failure rate or coverage
// out of bounds).
class CollectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One synchronized training record. w is the ground-truth head force
// expressed in the end-effector frame (z along the approach/closing axis).
struct Sample {
  MaskedDepthFrame masked;
  Vec4 q = Vec4::Zero();
  Vec3 w = Vec3::Zero();
  std::uint32_t episode = 0;
  std::uint32_t time_index = 0;
};

struct DatasetFile {
  std::uint32_t version = 1;
  int width = 0;
  int height = 0;
  std::string wig_name;
  std::uint64_t global_seed = 0;
  std::uint32_t skipped_episodes = 0;
  std::vector<Sample> samples;
};

// Contact-condition sampling ranges (Fig.-3-style randomized collection).
// Approaches are palm-down tangent poses around the upper head, the same
// family the hair-care tasks use.
struct SamplerConfig {
  int n_episodes = 400;
  int steps_per_episode = 5;
  double polar_max_rad = 0.9;       // approach direction cone around +z
  double standoff_min = -0.004;     // m, initial finger gap to the hair surface
  double standoff_max = 0.026;
  double tilt_jitter_rad = 0.2;     // wrist orientation jitter
  double descent_max = 0.034;      // m, total extra descent per episode
  double pinch_min = -0.006;        // m, plane-0 (finger separation) commands
  double pinch_max = 0.006;
  double curl_min = -0.012;         // m, plane-1 commands; negative digs inward
  double curl_max = 0.004;
  double depth_noise_sigma_mm = 2.0;
  double q_noise_sigma = 0.02;
  std::uint64_t seed = 1;
  // the coverage guard assumes contact-seeking ranges; samplers built to
  // stay in free space disable it
  bool enforce_coverage = true;

  void validate() const {
    require(n_episodes >= 1 && steps_per_episode >= 1,
            "SamplerConfig: need at least one episode and step");
    require(standoff_max >= standoff_min && pinch_max >= pinch_min &&
                curl_max >= curl_min,
            "SamplerConfig: ranges must be non-empty");
    require(descent_max >= 0.0 && depth_noise_sigma_mm >= 0.0 &&
                q_noise_sigma >= 0.0,
            "SamplerConfig: noise and descent must be >= 0");
  }
};

namespace detail {

// Mount distance along `dir` at which the straight fingers' minimum gap to
// the hair surface equals `standoff`. `lateral` shifts the mount (e.g. to
// center the finger span) and is applied inside the search.
inline Iso3 approach_pose(const MoeModel& model, const HeadModel& head,
                          const Vec3& dir, const Mat3& orientation,
                          double standoff, const Vec3& lateral = Vec3::Zero()) {
  const double reach = head.hair_surface_radius() + model.finger.radius;
  auto min_gap = [&](double t) {
    Iso3 pose;
    pose.linear() = orientation;
    pose.translation() = head.center + dir * t + lateral;
    const FingerState straight = FingerState::zero(model, pose);
    const auto frames = forward_kinematics(model, straight);
    double gap = 1e9;
    for (int f = 0; f < MoeModel::kFingers; ++f) {
      for (const auto& p : finger_sample_points(frames[f])) {
        gap = std::min(gap, (p - head.center).norm() - reach);
      }
    }
    return gap;
  };
  double lo = 0.02, hi = 0.6;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (min_gap(mid) < standoff ? lo : hi) = mid;
  }
  Iso3 pose;
  pose.linear() = orientation;
  pose.translation() = head.center + dir * (0.5 * (lo + hi)) + lateral;
  return pose;
}

struct EpisodeResult {
  std::vector<Sample> samples;
  bool failed = false;
};

// Equilibrium with substep retries: on failure, walk from the warm pose to
// the target in halved pose/command increments.
inline std::optional<EquilibriumResult> solve_with_substeps(
    const MoeModel& model, const Vec4& commands, const HeadModel& head,
    const Iso3& pose, FingerState* warm, const Vec4& warm_commands) {
  try {
    EquilibriumResult eq = equilibrium_solve(model, commands, head, pose, {}, warm);
    *warm = eq.state;
    return eq;
  } catch (const SolverError&) {
  }
  for (int substeps : {4, 16}) {
    FingerState state = *warm;
    const Iso3 from = state.base_pose;
    bool ok = true;
    EquilibriumResult eq;
    for (int i = 1; i <= substeps && ok; ++i) {
      const double a = static_cast<double>(i) / substeps;
      Iso3 mid = from;
      mid.translation() = (1.0 - a) * from.translation() + a * pose.translation();
      mid.linear() = pose.linear();  // orientation fixed within an episode
      const Vec4 cmd = (1.0 - a) * warm_commands + a * commands;
      try {
        eq = equilibrium_solve(model, cmd, head, mid, {}, &state);
        state = eq.state;
      } catch (const SolverError&) {
        ok = false;
      }
    }
    if (ok) {
      *warm = eq.state;
      return eq;
    }
  }
  return std::nullopt;
}

inline EpisodeResult collect_episode(const SamplerConfig& sampler,
                                     const MoeModel& model,
                                     const HeadModel& head,
                                     const CameraModel& camera,
                                     const CurrentModel& current,
                                     std::uint32_t episode) {
  Rng rng(derive_seed(sampler.seed, 0xE901ull + episode));

  // approach direction uniform on the polar cap around +z
  const double cos_max = std::cos(sampler.polar_max_rad);
  const double cos_phi = rng.uniform(cos_max, 1.0);
  const double sin_phi = std::sqrt(std::max(0.0, 1.0 - cos_phi * cos_phi));
  const double psi = rng.uniform(0.0, 6.283185307179586476925286766559);
  const Vec3 dir(sin_phi * std::cos(psi), sin_phi * std::sin(psi), cos_phi);

  // palm-down tangent pose: mount y faces the head, fingers run tangent
  Mat3 orientation =
      Eigen::Quaterniond::FromTwoVectors(Vec3::UnitY(), -dir).toRotationMatrix();
  const double roll = rng.uniform(0.0, 6.283185307179586476925286766559);
  const double jx = rng.uniform(-sampler.tilt_jitter_rad, sampler.tilt_jitter_rad);
  const double jz = rng.uniform(-sampler.tilt_jitter_rad, sampler.tilt_jitter_rad);
  orientation = orientation *
                Eigen::AngleAxisd(roll, Vec3::UnitY()).toRotationMatrix() *
                Eigen::AngleAxisd(jx, Vec3::UnitX()).toRotationMatrix() *
                Eigen::AngleAxisd(jz, Vec3::UnitZ()).toRotationMatrix();

  const double standoff = rng.uniform(sampler.standoff_min, sampler.standoff_max);
  const double descent_total = rng.uniform(0.0, sampler.descent_max);
  // center the finger span on the approach axis
  const Vec3 lateral =
      -orientation.col(2) * (0.5 * model.finger.total_length());
  const Iso3 start = approach_pose(model, head, dir, orientation, standoff, lateral);

  CameraModel cam = camera;
  cam.noise_sigma_mm = sampler.depth_noise_sigma_mm;
  CurrentModel cur = current;
  cur.noise_sigma = sampler.q_noise_sigma;

  EpisodeResult out;
  FingerState warm = FingerState::zero(model, start);
  Vec4 warm_commands = Vec4::Zero();
  for (int k = 0; k < sampler.steps_per_episode; ++k) {
    Vec4 commands;
    for (int f = 0; f < MoeModel::kFingers; ++f) {
      commands[actuator_index(f, 0)] =
          rng.uniform(sampler.pinch_min, sampler.pinch_max);
      commands[actuator_index(f, 1)] =
          rng.uniform(sampler.curl_min, sampler.curl_max);
    }
    Iso3 pose = start;
    pose.translation() -=
        dir * (descent_total * (k + 1) / sampler.steps_per_episode);

    const auto eq = solve_with_substeps(model, commands, head, pose, &warm,
                                        warm_commands);
    if (!eq.has_value()) {
      out.failed = true;
      out.samples.clear();
      return out;
    }
    warm_commands = commands;

    const std::uint64_t step_stream =
        static_cast<std::uint64_t>(episode) * sampler.steps_per_episode + k;
    DepthFrame depth;
    Mask mask;
    render_view(cam, model, eq->state, head, &depth, &mask,
                derive_seed(sampler.seed, 0xD401ull + step_stream));
    const ActuatorLoad load = actuator_load(
        eq->tendons, cur, derive_seed(sampler.seed, 0xAC01ull + step_stream));

    const Wrench wrench = head_wrench(eq->contacts, head);
    Sample s{apply_mask(depth, mask), load.q,
             sensor_frame(pose).transpose() * wrench.force, episode,
             static_cast<std::uint32_t>(k)};
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

// Randomized self-labeling collection. Episodes are independent seeded
// streams, so parallel and sequential collection produce identical bytes;
// failed episodes are skipped and counted in the header.
inline DatasetFile collect(const SamplerConfig& sampler, const MoeModel& model,
                           const HeadModel& head, const CameraModel& camera,
                           const CurrentModel& current,
                           const std::string& wig_name = "custom",
                           unsigned n_threads = 1) {
  sampler.validate();
  model.validate();
  camera.validate();

  std::vector<detail::EpisodeResult> episodes(
      static_cast<std::size_t>(sampler.n_episodes));
  parallel_for(episodes.size(), n_threads,
               [&](std::size_t begin, std::size_t end) {
                 for (std::size_t e = begin; e < end; ++e) {
                   episodes[e] = detail::collect_episode(
                       sampler, model, head, camera, current,
                       static_cast<std::uint32_t>(e));
                 }
               });

  DatasetFile out;
  out.width = camera.width;
  out.height = camera.height;
  out.wig_name = wig_name;
  out.global_seed = sampler.seed;
  std::uint32_t failed = 0;
  for (auto& ep : episodes) {
    if (ep.failed) {
      ++failed;
      continue;
    }
    for (auto& s : ep.samples) out.samples.push_back(std::move(s));
  }
  out.skipped_episodes = failed;

  if (failed * 2 > static_cast<std::uint32_t>(sampler.n_episodes)) {
    throw CollectionError("collect: over half of the episodes failed to solve");
  }
  if (sampler.enforce_coverage) {
    std::size_t in_contact = 0, free_space = 0;
    for (const auto& s : out.samples) {
      if (s.w.norm() > 0.05) ++in_contact;
      if (s.w.norm() == 0.0) ++free_space;
    }
    const double n = static_cast<double>(out.samples.size());
    if (n == 0.0 || in_contact < 0.30 * n || free_space < 0.10 * n) {
      throw CollectionError(
          "collect: coverage guard failed (" + std::to_string(in_contact) +
          " contact / " + std::to_string(free_space) + " free of " +
          std::to_string(out.samples.size()) + ")");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: header (magic "MOEDSET", version, count, H, W, wig name,
// seed, skip count), packed samples, trailing CRC32 of everything before it.

inline std::vector<std::uint8_t> serialize_dataset(const DatasetFile& ds) {
  ByteWriter w;
  w.bytes("MOEDSET", 7);
  w.u32(ds.version);
  w.u64(ds.samples.size());
  w.u16(static_cast<std::uint16_t>(ds.height));
  w.u16(static_cast<std::uint16_t>(ds.width));
  w.str(ds.wig_name);
  w.u64(ds.global_seed);
  w.u32(ds.skipped_episodes);
  for (const auto& s : ds.samples) {
    w.u32(s.episode);
    w.u32(s.time_index);
    for (std::uint16_t v : s.masked.frame().depth_mm) w.u16(v);
    for (int i = 0; i < 4; ++i) w.f64(s.q[i]);
    for (int i = 0; i < 3; ++i) w.f64(s.w[i]);
  }
  ByteWriter out;
  out.bytes(w.data().data(), w.size());
  out.u32(checksum32(w.data()));
  return out.data();
}

inline DatasetFile deserialize_dataset(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 11) {
    throw IoError(IoError::Kind::Malformed, "dataset file too short");
  }
  if (std::memcmp(buf.data(), "MOEDSET", 7) != 0) {
    throw IoError(IoError::Kind::BadMagic, "not a dataset file");
  }
  const std::size_t body = buf.size() - 4;
  ByteReader crc_reader(buf.data() + body, 4);
  if (checksum32(buf.data(), body) != crc_reader.u32()) {
    throw IoError(IoError::Kind::BadChecksum, "dataset checksum mismatch");
  }

  ByteReader r(buf.data(), body);
  r.take(7);
  DatasetFile ds;
  ds.version = r.u32();
  if (ds.version != 1) {
    throw IoError(IoError::Kind::BadVersion, "unsupported dataset version");
  }
  const std::uint64_t count = r.u64();
  ds.height = r.u16();
  ds.width = r.u16();
  ds.wig_name = r.str();
  ds.global_seed = r.u64();
  ds.skipped_episodes = r.u32();
  const std::size_t pixels =
      static_cast<std::size_t>(ds.width) * static_cast<std::size_t>(ds.height);
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    DepthFrame frame(ds.width, ds.height);
    const std::uint32_t episode = r.u32();
    const std::uint32_t time_index = r.u32();
    for (std::size_t px = 0; px < pixels; ++px) frame.depth_mm[px] = r.u16();
    Vec4 q;
    for (int k = 0; k < 4; ++k) q[k] = r.f64();
    Vec3 wv;
    for (int k = 0; k < 3; ++k) wv[k] = r.f64();
    ds.samples.push_back(
        Sample{masked_from_raw_parts(std::move(frame)), q, wv, episode, time_index});
  }
  if (r.remaining() != 0) {
    throw IoError(IoError::Kind::Malformed, "trailing bytes after samples");
  }
  return ds;
}

inline void write_dataset(const DatasetFile& ds, const std::string& path) {
  write_file(path, serialize_dataset(ds));
}

inline DatasetFile read_dataset(const std::string& path) {
  return deserialize_dataset(read_file(path));
}

// ---------------------------------------------------------------------------
// Episode-level split (samples within an episode are near-duplicates).

struct EpisodeSplit {
  std::vector<std::uint32_t> train_episodes;
  std::vector<std::uint32_t> test_episodes;
};

inline EpisodeSplit split(const DatasetFile& ds, double test_fraction,
                          std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0,
          "split: fraction must be in (0, 1)");
  std::vector<std::uint32_t> episodes;
  for (const auto& s : ds.samples) episodes.push_back(s.episode);
  std::sort(episodes.begin(), episodes.end());
  episodes.erase(std::unique(episodes.begin(), episodes.end()), episodes.end());
  require(episodes.size() >= 2, "split: need at least two episodes");

  Rng rng(derive_seed(seed, 0x5811ull));
  for (std::size_t i = episodes.size(); i > 1; --i) {
    std::swap(episodes[i - 1], episodes[rng.uniform_index(i)]);
  }
  const std::size_t n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(test_fraction * episodes.size())),
      1, episodes.size() - 1);

  EpisodeSplit out;
  out.test_episodes.assign(episodes.begin(), episodes.begin() + n_test);
  out.train_episodes.assign(episodes.begin() + n_test, episodes.end());
  std::sort(out.test_episodes.begin(), out.test_episodes.end());
  std::sort(out.train_episodes.begin(), out.train_episodes.end());
  return out;
}

inline std::vector<TrainExample> examples_for_episodes(
    const DatasetFile& ds, const std::vector<std::uint32_t>& episodes) {
  std::vector<TrainExample> out;
  for (const auto& s : ds.samples) {
    if (std::binary_search(episodes.begin(), episodes.end(), s.episode)) {
      out.push_back({&s.masked.frame(), s.q, s.w});
    }
  }
  return out;
}

inline std::vector<Vec3> dataset_labels(const DatasetFile& ds) {
  std::vector<Vec3> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(s.w);
  return out;
}

}  // namespace moe
