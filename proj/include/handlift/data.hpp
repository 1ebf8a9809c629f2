#pragma once

#include "handlift/skeleton.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace handlift {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;
using Pose2 = std::array<Vec2, kJointCount>;
using Pose3 = std::array<Vec3, kJointCount>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampleMeta {
  int subject = -1;
  std::string action;
  std::string sequence;
  long frame = -1;
};

// x2d: normalised image coordinates; y3d: wrist-relative camera-frame mm with
// y3d[0] == (0, 0, 0) exactly.
struct PoseSample {
  Pose2 x2d{};
  Pose3 y3d{};
  SampleMeta meta;
};

struct CameraIntrinsics {
  double fx = 475.0;
  double fy = 475.0;
  double cx = 320.0;
  double cy = 240.0;
  double width = 640.0;
  double height = 480.0;

  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

// Pinhole projection to pixels. Throws DataError naming the first joint with
// z <= 0.
Pose2 project_pixels(const Pose3& camera_frame, const CameraIntrinsics& cam);

// u' = 2u/width - 1, v' = 2v/height - 1 after projection.
Pose2 project_and_normalize(const Pose3& camera_frame, const CameraIntrinsics& cam);

Pose3 to_wrist_relative(const Pose3& world);

PoseSample make_sample(const Pose3& camera_frame, const CameraIntrinsics& cam);

// ---------------------------------------------------------------------------
// Synthetic hands

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct FingerArticulation {
  Interval mcp_flexion;
  Interval mcp_abduction;
  Interval pip_flexion;
  Interval dip_flexion;
};

// Anatomical limits every configured articulation range must respect.
inline constexpr double kMinFlexionDeg = -30.0;
inline constexpr double kMaxFlexionDeg = 120.0;
inline constexpr double kMaxAbductionDeg = 40.0;

struct SyntheticHandConfig {
  // Segment length in mm for the bone ending at joint (index + 1).
  std::array<double, kJointCount - 1> bone_lengths{};
  std::array<FingerArticulation, 5> fingers{};  // thumb .. pinky
  // Global hand orientation, applied as Rz(roll) * Ry(yaw) * Rx(pitch).
  Interval yaw, pitch, roll;
  // Wrist position in the camera frame.
  Interval depth_mm{350.0, 550.0};
  Interval lateral_x_mm{-60.0, 60.0};
  Interval lateral_y_mm{-60.0, 60.0};
  CameraIntrinsics camera;
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  // Draws per sample before giving up on fitting the hand inside the image.
  std::size_t max_attempts = 64;

  void validate() const;
};

SyntheticHandConfig default_synthetic_config();
std::array<double, kJointCount - 1> default_bone_lengths();

// Camera-frame joint positions (mm) of sample `index`, before the wrist is
// subtracted. Placement is redrawn until the hand lies inside the image.
Pose3 synthetic_world_pose(const SyntheticHandConfig& cfg, std::size_t index);

// Sample `index` of the dataset defined by cfg; a pure function of
// (cfg, index).
PoseSample synthetic_sample(const SyntheticHandConfig& cfg, std::size_t index);
std::vector<PoseSample> generate_synthetic(const SyntheticHandConfig& cfg);

// ---------------------------------------------------------------------------
// FPHA skeleton files: one frame per line, "frame x0 y0 z0 ... x20 y20 z20".

enum class Split { train, test };

bool subject_in_split(int subject, Split split);

struct SkeletonFrame {
  long frame = 0;
  Pose3 joints{};
};

std::vector<SkeletonFrame> read_fpha_skeleton_file(const std::filesystem::path& path);
void write_fpha_skeleton_file(const std::filesystem::path& path, const std::vector<SkeletonFrame>& frames);

// Walks <root>/Subject_N/<action>/<sequence>/skeleton.txt, keeping subjects in
// the split (train: 1, 3, 4; test: 2, 5, 6).
std::vector<PoseSample> load_fpha_skeleton(const std::filesystem::path& root, const CameraIntrinsics& cam,
                                           Split split);

// ---------------------------------------------------------------------------
// Binary dataset file, little-endian:
//
//   "HLDS"   magic
//   u32      version (1)
//   u32      joint count J
//   u64      record count N
//   f64 x 6  fx, fy, cx, cy, width, height
//   N records of f64[J*2] x2d followed by f64[J*3] y3d
//
// Sample metadata is not stored.

struct Dataset {
  CameraIntrinsics camera;
  std::vector<PoseSample> samples;
};

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

// Adds N(0, sigma_px^2) pixel noise to every 2D joint (stream "noise",
// indexed by sample position). Targets are untouched.
std::vector<PoseSample> add_2d_noise(const std::vector<PoseSample>& samples, double sigma_px,
                                     const CameraIntrinsics& cam, std::uint64_t seed);

}  // namespace handlift
