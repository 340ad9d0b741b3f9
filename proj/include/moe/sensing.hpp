#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "moe/common.hpp"
#include "moe/geometry.hpp"
#include "moe/mechanics.hpp"
#include "moe/parallel.hpp"
#include "moe/rng.hpp"
#include "moe/scene.hpp"
#include "moe/serialize.hpp"

namespace moe {

// Wrist-mounted depth camera. mount_pose places the camera in the
// end-effector frame; the optical axis is camera +z, image x right,
// image y down.
struct CameraModel {
  double fx = 48.0;
  double fy = 48.0;
  double cx = 32.0;
  double cy = 32.0;
  int width = 64;
  int height = 64;
  Iso3 mount_pose = Iso3(Eigen::Translation3d(0.0, 0.0, -0.08));
  int quantization_mm = 1;
  double min_range_mm = 70.0;
  double max_range_mm = 500.0;
  double noise_sigma_mm = 0.0;  // per-pixel Gaussian before quantization

  void validate() const {
    require(fx > 0.0 && fy > 0.0, "CameraModel: focal lengths must be > 0");
    require(cx > 0.0 && cx < width && cy > 0.0 && cy < height,
            "CameraModel: principal point must lie inside the image");
    require(width > 0 && height > 0, "CameraModel: image size must be > 0");
    require(quantization_mm >= 1, "CameraModel: quantization must be >= 1 mm");
  }
};

// Row-major 16-bit depth in millimeters; 0 marks no-hit / out-of-range.
struct DepthFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> depth_mm;

  DepthFrame() = default;
  DepthFrame(int w, int h)
      : width(w), height(h),
        depth_mm(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

  std::uint16_t& at(int x, int y) {
    return depth_mm[static_cast<std::size_t>(y) * width + x];
  }
  std::uint16_t at(int x, int y) const {
    return depth_mm[static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const DepthFrame&) const = default;
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h)
      : width(w), height(h),
        bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

  std::uint8_t& at(int x, int y) {
    return bits[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool operator==(const Mask&) const = default;
};

// Depth frame with non-finger pixels zeroed. Only apply_mask produces
// these, so estimator inputs are masked by construction.
class MaskedDepthFrame {
 public:
  const DepthFrame& frame() const { return frame_; }
  bool operator==(const MaskedDepthFrame&) const = default;

 private:
  friend MaskedDepthFrame apply_mask(const DepthFrame&, const Mask&);
  friend MaskedDepthFrame masked_from_raw_parts(DepthFrame frame);
  explicit MaskedDepthFrame(DepthFrame frame) : frame_(std::move(frame)) {}
  DepthFrame frame_;
};

// Deserialization needs to rebuild stored masked frames without a mask.
inline MaskedDepthFrame masked_from_raw_parts(DepthFrame frame) {
  return MaskedDepthFrame(std::move(frame));
}

// Per-actuator current-load observation q.
struct ActuatorLoad {
  Vec4 q = Vec4::Zero();
};

// Tension-to-current model T = k_S * q with a deadband standing in for
// gear backlash and friction loss.
struct CurrentModel {
  double k_S = 2.0;          // N per current unit
  double deadband = 0.05;    // N
  double noise_sigma = 0.0;  // current units

  void validate() const {
    require(k_S > 0.0, "CurrentModel: k_S must be > 0");
    require(deadband >= 0.0, "CurrentModel: deadband must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

struct RayHit {
  double t = 0.0;
  bool is_finger = false;
  bool valid = false;
};

struct RenderScene {
  std::vector<Capsule> capsules;
  Sphere head_sphere;
  Iso3 camera_pose;
};

inline RenderScene build_render_scene(const CameraModel& camera,
                                      const MoeModel& model,
                                      const FingerState& state,
                                      const HeadModel& head) {
  RenderScene scene;
  const auto frames = forward_kinematics(model, state);
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    for (std::size_t j = 0; j + 1 < frames[f].size(); ++j) {
      scene.capsules.push_back(Capsule{frames[f][j].translation(),
                                       frames[f][j + 1].translation(),
                                       model.finger.radius});
    }
  }
  scene.head_sphere = Sphere{head.center, head.hair_surface_radius()};
  scene.camera_pose = state.base_pose * camera.mount_pose;
  return scene;
}

inline RayHit cast_pixel(const RenderScene& scene, const CameraModel& camera,
                         int x, int y) {
  const Vec3 dir_cam((x + 0.5 - camera.cx) / camera.fx,
                     (y + 0.5 - camera.cy) / camera.fy, 1.0);
  const Vec3 o = scene.camera_pose.translation();
  const Vec3 d = (scene.camera_pose.rotation() * dir_cam).normalized();

  RayHit hit;
  for (const auto& cap : scene.capsules) {
    if (auto t = ray_capsule(o, d, cap)) {
      if (!hit.valid || *t < hit.t) hit = RayHit{*t, true, true};
    }
  }
  if (auto t = ray_sphere(o, d, scene.head_sphere)) {
    if (!hit.valid || *t < hit.t) hit = RayHit{*t, false, true};
  }
  return hit;
}

inline std::uint16_t quantize_depth(const CameraModel& camera, double t_mm) {
  if (t_mm < camera.min_range_mm || t_mm > camera.max_range_mm) return 0;
  const double q = static_cast<double>(camera.quantization_mm);
  const double v = std::round(t_mm / q) * q;
  const double clamped = std::clamp(v, 0.0, 65535.0);
  return static_cast<std::uint16_t>(clamped);
}

}  // namespace detail

// Renders depth and the exact finger segmentation in one pass. Each pixel
// is independent (noise comes from a per-pixel stream), so parallel and
// sequential rendering are bit-identical.
inline void render_view(const CameraModel& camera, const MoeModel& model,
                        const FingerState& state, const HeadModel& head,
                        DepthFrame* depth_out, Mask* mask_out,
                        std::uint64_t noise_seed = 0, unsigned n_threads = 1) {
  camera.validate();
  const detail::RenderScene scene =
      detail::build_render_scene(camera, model, state, head);
  if (depth_out) *depth_out = DepthFrame(camera.width, camera.height);
  if (mask_out) *mask_out = Mask(camera.width, camera.height);

  const std::size_t total =
      static_cast<std::size_t>(camera.width) * camera.height;
  parallel_for(total, n_threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      const int x = static_cast<int>(idx % camera.width);
      const int y = static_cast<int>(idx / camera.width);
      const auto hit = detail::cast_pixel(scene, camera, x, y);
      if (!hit.valid) continue;
      if (mask_out && hit.is_finger) mask_out->at(x, y) = 1;
      if (depth_out) {
        double t_mm = hit.t * 1000.0;
        if (camera.noise_sigma_mm > 0.0) {
          Rng pixel_rng(derive_seed(noise_seed, 0xD09ull + idx));
          t_mm += pixel_rng.normal(camera.noise_sigma_mm);
        }
        depth_out->at(x, y) = detail::quantize_depth(camera, t_mm);
      }
    }
  });
}

inline DepthFrame render_depth(const CameraModel& camera, const MoeModel& model,
                               const FingerState& state, const HeadModel& head,
                               std::uint64_t noise_seed = 0,
                               unsigned n_threads = 1) {
  DepthFrame frame;
  render_view(camera, model, state, head, &frame, nullptr, noise_seed,
              n_threads);
  return frame;
}

inline Mask finger_mask(const CameraModel& camera, const MoeModel& model,
                        const FingerState& state, const HeadModel& head,
                        unsigned n_threads = 1) {
  Mask mask;
  render_view(camera, model, state, head, nullptr, &mask, 0, n_threads);
  return mask;
}

// ---------------------------------------------------------------------------
// Masking

// Pixel-wise product I_D'(x,y) = I_D(x,y) * M(x,y).
inline MaskedDepthFrame apply_mask(const DepthFrame& frame, const Mask& mask) {
  require(frame.width == mask.width && frame.height == mask.height,
          "apply_mask: frame and mask dimensions must match");
  DepthFrame out = frame;
  for (std::size_t i = 0; i < out.depth_mm.size(); ++i) {
    if (mask.bits[i] == 0) out.depth_mm[i] = 0;
  }
  return MaskedDepthFrame(std::move(out));
}

enum class MaskCorruption { kDilate, kErode, kFlip };

inline MaskCorruption mask_corruption_from_string(const std::string& s) {
  if (s == "dilate") return MaskCorruption::kDilate;
  if (s == "erode") return MaskCorruption::kErode;
  if (s == "flip") return MaskCorruption::kFlip;
  throw ContractViolation("unknown mask corruption mode: " + s);
}

namespace detail {

inline Mask morph(const Mask& in, int radius, bool dilate) {
  Mask out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      bool acc = !dilate;
      for (int dy = -radius; dy <= radius && acc != dilate; ++dy) {
        for (int dx = -radius; dx <= radius && acc != dilate; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          bool v = false;
          if (nx >= 0 && nx < in.width && ny >= 0 && ny < in.height) {
            v = in.at(nx, ny) != 0;
          }
          if (dilate && v) acc = true;
          if (!dilate && !v) acc = false;
        }
      }
      out.at(x, y) = acc ? 1 : 0;
    }
  }
  return out;
}

}  // namespace detail

// Segmentation-error stand-in: morphological growth/shrink by a pixel
// radius, or random bit flips of a given fraction.
inline Mask corrupt_mask(const Mask& mask, MaskCorruption mode,
                         double magnitude, std::uint64_t seed) {
  require(magnitude >= 0.0, "corrupt_mask: magnitude must be >= 0");
  switch (mode) {
    case MaskCorruption::kDilate:
    case MaskCorruption::kErode: {
      const int radius = static_cast<int>(std::llround(magnitude));
      if (radius == 0) return mask;
      return detail::morph(mask, radius, mode == MaskCorruption::kDilate);
    }
    case MaskCorruption::kFlip: {
      const std::size_t total = mask.bits.size();
      const std::size_t k = static_cast<std::size_t>(std::llround(
          std::min(1.0, magnitude) * static_cast<double>(total)));
      Mask out = mask;
      if (k == 0) return out;
      // partial Fisher-Yates: first k entries of a seeded permutation
      std::vector<std::uint32_t> idx(total);
      for (std::size_t i = 0; i < total; ++i) idx[i] = static_cast<std::uint32_t>(i);
      Rng rng(derive_seed(seed, 0xF11Bull));
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(total - i);
        std::swap(idx[i], idx[j]);
        out.bits[idx[i]] ^= 1;
      }
      return out;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Actuator load observation

// q_i = max(0, pair tension - deadband) / k_S plus seeded zero-mean noise,
// clamped at zero.
inline ActuatorLoad actuator_load(const TendonState& tendons,
                                  const CurrentModel& model,
                                  std::uint64_t seed) {
  model.validate();
  for (int i = 0; i < tendons.tensions.size(); ++i) {
    require(tendons.tensions[i] >= 0.0, "actuator_load: tensions must be >= 0");
  }
  Rng rng(derive_seed(seed, 0x10ADull));
  ActuatorLoad out;
  for (int f = 0; f < MoeModel::kFingers; ++f) {
    for (int p = 0; p < 2; ++p) {
      const double pair_sum = tendons.tensions[tendon_index(f, p, 0)] +
                              tendons.tensions[tendon_index(f, p, 1)];
      const double net = std::max(0.0, pair_sum - model.deadband);
      double q = net / model.k_S;
      if (model.noise_sigma > 0.0) q += rng.normal(model.noise_sigma);
      out.q[actuator_index(f, p)] = std::max(0.0, q);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// DepthFrame serialization: 16-byte header (magic "MOED", u16 width,
// u16 height, u32 reserved, u32 payload checksum), then row-major u16
// little-endian payload.

inline std::vector<std::uint8_t> serialize_depth_frame(const DepthFrame& f) {
  ByteWriter payload;
  for (std::uint16_t v : f.depth_mm) payload.u16(v);
  ByteWriter out;
  out.bytes("MOED", 4);
  out.u16(static_cast<std::uint16_t>(f.width));
  out.u16(static_cast<std::uint16_t>(f.height));
  out.u32(0);
  out.u32(checksum32(payload.data()));
  out.bytes(payload.data().data(), payload.size());
  return out.data();
}

inline DepthFrame deserialize_depth_frame(const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  const auto* magic = r.take(4);
  if (std::memcmp(magic, "MOED", 4) != 0) {
    throw IoError(IoError::Kind::BadMagic, "not a depth frame file");
  }
  DepthFrame f;
  f.width = r.u16();
  f.height = r.u16();
  r.u32();  // reserved
  const std::uint32_t stored = r.u32();
  const std::size_t n =
      static_cast<std::size_t>(f.width) * static_cast<std::size_t>(f.height);
  if (r.remaining() != 2 * n) {
    throw IoError(IoError::Kind::Malformed, "depth frame payload size mismatch");
  }
  const std::uint8_t* payload = buf.data() + r.position();
  if (checksum32(payload, 2 * n) != stored) {
    throw IoError(IoError::Kind::BadChecksum, "depth frame checksum mismatch");
  }
  f.depth_mm.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.depth_mm[i] = r.u16();
  return f;
}

}  // namespace moe
