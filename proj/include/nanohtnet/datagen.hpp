#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nanohtnet/skeleton.hpp"
#include "nanohtnet/tensor.hpp"

namespace nht {

constexpr double kFramesPerSecond = 50.0;

struct CameraView {
  std::array<double, 9> r{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, world -> camera
  std::array<double, 3> t{};                            // mm; x_cam = R x_world + t
  double focal = 950.0;                                 // pixels
  double cx = 500.0, cy = 500.0;                        // principal point, pixels
  int64_t width = 1000, height = 1000;

  bool orthonormal(double tol = 1e-6) const;
};

// Seeded joint-angle choreography: each bone angle is a sum of `components`
// sinusoids drawn from the configured frequency/amplitude bands, scaled by a
// per-bone preset gain and clamped to documented anatomical limits, then run
// through forward kinematics over fixed bone lengths.
struct SyntheticMotionConfig {
  uint64_t seed = 1;
  int64_t frames = 600;
  int64_t components = 2;                      // sinusoids per joint angle
  double freq_lo_hz = 0.2, freq_hi_hz = 2.0;   // band at 50 frames/s
  double amp_lo_rad = 0.08, amp_hi_rad = 0.45; // pre-clamp band
  double amplitude_scale = 1.0;                // 0 => static rest pose
  int32_t action = 0;                          // 0 walk-like, 1 wave-like
  void validate() const;                       // throws ConfigError
};

// World-frame joint centres [frames x J x 3] in mm (double precision so
// rigidity holds to machine accuracy; the dataset container quantizes).
Tensor<double> generate_motion(const SyntheticMotionConfig& cfg, const SkeletonTopology& topo);

// Rest-pose bone length per topology edge, mm.
const std::vector<double>& bone_lengths_mm();

// Cameras on a ring around the capture volume: equal azimuth spacing with
// seeded elevation/radius jitter, all aimed at the subject volume.
std::vector<CameraView> make_camera_rig(int64_t views, uint64_t seed);

// Pinhole projection of [T x J x 3] world mm to [T x J x 2] coordinates
// normalized to [-1, 1] by half the image size (principal point -> (0,0)).
// Throws ContractError when any point has non-positive camera depth.
Tensor<double> project(const Tensor<double>& pose3d, const CameraView& cam);

struct Sequence {
  int32_t action = 0;                  // generator preset tag
  Tensor<float> pose3d;                // [T x J x 3] world mm
  std::vector<CameraView> cameras;
  std::vector<Tensor<float>> pose2d;   // per view [T x J x 2], normalized
};

struct Dataset {
  int64_t joints = 17;
  std::vector<Sequence> sequences;
};

struct DatagenConfig {
  int64_t sequences = 8;
  int64_t frames = 600;
  int64_t views = 4;
  uint64_t seed = 1;
  std::string actions = "mixed";   // "walk" | "wave" | "mixed"
  double amplitude_scale = 1.0;    // global joint-angle amplitude multiplier
  void validate() const;
};
std::string datagen_config_to_json(const DatagenConfig& cfg);
DatagenConfig datagen_config_from_json(const std::string& text);

Dataset generate_dataset(const DatagenConfig& cfg);

// PSEQ1 container, little-endian: magic "PSEQ1"; u32 sequence count, u32
// joint count, u32 view count; then per sequence a u32 frame count, a u32
// action tag, the f32 3D block [T x J x 3], and per view a camera record
// (f32 r[9], t[3], focal, cx, cy; u32 width, height) followed by the f32 2D
// block [T x J x 2]. Reading validates the header against the 17-joint
// topology and re-projects a sample of frames (every view/joint) to confirm
// the stored 2D matches the stored camera and 3D within 1e-3.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace nht
