#include "handlift/data.hpp"

#include "handlift/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace handlift {

static_assert(std::endian::native == std::endian::little, "dataset files are written in host byte order");

namespace {

constexpr double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (!(width > 0.0 && height > 0.0)) throw std::invalid_argument("camera: image size must be positive");
}

Pose2 project_pixels(const Pose3& p, const CameraIntrinsics& cam) {
  Pose2 out{};
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const double z = p[j][2];
    if (!(z > 0.0)) {
      throw DataError("projection: joint " + std::to_string(j) + " has non-positive depth " + std::to_string(z));
    }
    out[j] = {cam.fx * p[j][0] / z + cam.cx, cam.fy * p[j][1] / z + cam.cy};
  }
  return out;
}

Pose2 project_and_normalize(const Pose3& p, const CameraIntrinsics& cam) {
  Pose2 out = project_pixels(p, cam);
  for (auto& uv : out) {
    uv[0] = 2.0 * uv[0] / cam.width - 1.0;
    uv[1] = 2.0 * uv[1] / cam.height - 1.0;
  }
  return out;
}

Pose3 to_wrist_relative(const Pose3& world) {
  Pose3 out{};
  const Vec3 w = world[kWrist];
  for (std::size_t j = 0; j < kJointCount; ++j) {
    for (int c = 0; c < 3; ++c) out[j][c] = world[j][c] - w[c];
  }
  return out;
}

PoseSample make_sample(const Pose3& camera_frame, const CameraIntrinsics& cam) {
  PoseSample s;
  s.x2d = project_and_normalize(camera_frame, cam);
  s.y3d = to_wrist_relative(camera_frame);
  return s;
}

// ---------------------------------------------------------------- synthetic

std::array<double, kJointCount - 1> default_bone_lengths() {
  // Approximate adult segment lengths in mm (metacarpal, proximal, middle,
  // distal), rounded from the anthropometric survey of Buryanov & Kotiuk,
  // "Proportions of hand segments", Int. J. Morphol. 28(3), 2010. The thumb
  // chain is wrist->CMC, metacarpal, proximal, distal.
  static constexpr double kTable[5][4] = {
      {35.0, 46.0, 32.0, 25.0},  // thumb
      {68.0, 40.0, 23.0, 18.0},  // index
      {65.0, 45.0, 27.0, 19.0},  // middle
      {58.0, 42.0, 26.0, 19.0},  // ring
      {53.0, 33.0, 18.0, 17.0},  // pinky
  };
  std::array<double, kJointCount - 1> b{};
  for (std::size_t f = 0; f < 5; ++f) {
    b[(1 + f) - 1] = kTable[f][0];
    b[(6 + 3 * f) - 1] = kTable[f][1];
    b[(7 + 3 * f) - 1] = kTable[f][2];
    b[(8 + 3 * f) - 1] = kTable[f][3];
  }
  return b;
}

SyntheticHandConfig default_synthetic_config() {
  SyntheticHandConfig c;
  c.bone_lengths = default_bone_lengths();
  const FingerArticulation finger{{deg(0), deg(80)}, {deg(-15), deg(15)}, {deg(0), deg(100)}, {deg(0), deg(70)}};
  const FingerArticulation thumb{{deg(0), deg(50)}, {deg(-20), deg(20)}, {deg(0), deg(60)}, {deg(0), deg(70)}};
  c.fingers = {thumb, finger, finger, finger, finger};
  c.yaw = {deg(-60), deg(60)};
  c.pitch = {deg(-60), deg(60)};
  c.roll = {deg(-180), deg(180)};
  return c;
}

void SyntheticHandConfig::validate() const {
  camera.validate();
  for (double b : bone_lengths) {
    if (!(b > 0.0)) throw std::invalid_argument("synthetic config: bone lengths must be positive");
  }
  auto within = [](Interval r, double lo_deg, double hi_deg) {
    return r.lo <= r.hi && r.lo >= deg(lo_deg) - 1e-12 && r.hi <= deg(hi_deg) + 1e-12;
  };
  for (const auto& f : fingers) {
    if (!within(f.mcp_flexion, kMinFlexionDeg, kMaxFlexionDeg) || !within(f.pip_flexion, kMinFlexionDeg, kMaxFlexionDeg) ||
        !within(f.dip_flexion, kMinFlexionDeg, kMaxFlexionDeg) ||
        !within(f.mcp_abduction, -kMaxAbductionDeg, kMaxAbductionDeg)) {
      throw std::invalid_argument("synthetic config: articulation range outside anatomical limits");
    }
  }
  for (auto r : {yaw, pitch, roll, lateral_x_mm, lateral_y_mm, depth_mm}) {
    if (r.lo > r.hi) throw std::invalid_argument("synthetic config: range with lo > hi");
  }
  if (!(depth_mm.lo > 0.0)) throw std::invalid_argument("synthetic config: wrist depth must be positive");
  if (max_attempts == 0) throw std::invalid_argument("synthetic config: max_attempts must be >= 1");
}

namespace {

using Eigen::AngleAxisd;
using Eigen::Matrix3d;
using Eigen::Vector3d;

// Rest-pose metacarpal directions: in-palm splay from +y, and tilt toward the
// palm side (+z).
constexpr double kSplayDeg[5] = {45.0, 12.0, 0.0, -10.0, -22.0};
constexpr double kTiltDeg[5] = {35.0, 0.0, 0.0, 0.0, 0.0};

double draw(CounterRng& rng, Interval r) { return rng.uniform(r.lo, r.hi); }

// Joint positions in the hand frame for one articulation.
Pose3 articulate(const SyntheticHandConfig& cfg, CounterRng& rng) {
  Pose3 p{};
  const Vector3d up = Vector3d::UnitY();
  for (std::size_t f = 0; f < 5; ++f) {
    const auto& a = cfg.fingers[f];
    const double mcp_flex = draw(rng, a.mcp_flexion);
    const double mcp_abd = draw(rng, a.mcp_abduction);
    const double pip_flex = draw(rng, a.pip_flexion);
    const double dip_flex = draw(rng, a.dip_flexion);

    const std::size_t chain[4] = {1 + f, 6 + 3 * f, 7 + 3 * f, 8 + 3 * f};
    Matrix3d r = (AngleAxisd(deg(kSplayDeg[f]), Vector3d::UnitZ()) * AngleAxisd(deg(kTiltDeg[f]), Vector3d::UnitX()))
                     .toRotationMatrix();
    Vector3d pos = Vector3d::Zero();
    const Matrix3d rotations[4] = {
        Matrix3d::Identity(),
        (AngleAxisd(mcp_abd, Vector3d::UnitZ()) * AngleAxisd(mcp_flex, Vector3d::UnitX())).toRotationMatrix(),
        AngleAxisd(pip_flex, Vector3d::UnitX()).toRotationMatrix(),
        AngleAxisd(dip_flex, Vector3d::UnitX()).toRotationMatrix(),
    };
    for (int s = 0; s < 4; ++s) {
      r = r * rotations[s];
      pos += cfg.bone_lengths[chain[s] - 1] * (r * up);
      p[chain[s]] = {pos.x(), pos.y(), pos.z()};
    }
  }
  return p;
}

bool inside_image(const Pose3& cam_frame, const CameraIntrinsics& cam) {
  for (const auto& q : cam_frame) {
    if (!(q[2] > 0.0)) return false;
  }
  for (const auto& uv : project_and_normalize(cam_frame, cam)) {
    if (std::fabs(uv[0]) > 1.0 || std::fabs(uv[1]) > 1.0) return false;
  }
  return true;
}

}  // namespace

Pose3 synthetic_world_pose(const SyntheticHandConfig& cfg, std::size_t index) {
  CounterRng rng(cfg.seed, "data", index);
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const Pose3 local = articulate(cfg, rng);
    const Matrix3d orient = (AngleAxisd(draw(rng, cfg.roll), Vector3d::UnitZ()) *
                             AngleAxisd(draw(rng, cfg.yaw), Vector3d::UnitY()) *
                             AngleAxisd(draw(rng, cfg.pitch), Vector3d::UnitX()))
                                .toRotationMatrix();
    const Vector3d wrist(draw(rng, cfg.lateral_x_mm), draw(rng, cfg.lateral_y_mm), draw(rng, cfg.depth_mm));
    Pose3 world{};
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Vector3d q = wrist + orient * Vector3d(local[j][0], local[j][1], local[j][2]);
      world[j] = {q.x(), q.y(), q.z()};
    }
    if (inside_image(world, cfg.camera)) return world;
  }
  throw DataError("synthetic: sample " + std::to_string(index) + " did not fit the image after " +
                  std::to_string(cfg.max_attempts) + " attempts");
}

PoseSample synthetic_sample(const SyntheticHandConfig& cfg, std::size_t index) {
  PoseSample s = make_sample(synthetic_world_pose(cfg, index), cfg.camera);
  s.meta.frame = static_cast<long>(index);
  return s;
}

std::vector<PoseSample> generate_synthetic(const SyntheticHandConfig& cfg) {
  cfg.validate();
  std::vector<PoseSample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(synthetic_sample(cfg, i));
  return out;
}

// ---------------------------------------------------------------- FPHA

bool subject_in_split(int subject, Split split) {
  const bool train = subject == 1 || subject == 3 || subject == 4;
  const bool test = subject == 2 || subject == 5 || subject == 6;
  return split == Split::train ? train : test;
}

namespace {

constexpr std::size_t kTokensPerLine = 1 + 3 * kJointCount;

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

template <class T>
T parse_number(std::string_view tok, const std::filesystem::path& path, std::size_t line_no) {
  T v{};
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace

std::vector<SkeletonFrame> read_fpha_skeleton_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open skeleton file " + path.string());
  std::vector<SkeletonFrame> frames;
  std::string line;
  for (std::size_t line_no = 1; std::getline(is, line); ++line_no) {
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != kTokensPerLine) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(kTokensPerLine) +
                      " tokens, got " + std::to_string(tokens.size()));
    }
    SkeletonFrame f;
    f.frame = parse_number<long>(tokens[0], path, line_no);
    for (std::size_t j = 0; j < kJointCount; ++j)
      for (std::size_t c = 0; c < 3; ++c) f.joints[j][c] = parse_number<double>(tokens[1 + 3 * j + c], path, line_no);
    frames.push_back(f);
  }
  return frames;
}

void write_fpha_skeleton_file(const std::filesystem::path& path, const std::vector<SkeletonFrame>& frames) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (const auto& f : frames) {
    os << f.frame;
    for (const auto& joint : f.joints) {
      for (double v : joint) {
        // Shortest representation that parses back to the same double.
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
        os << ' ' << std::string_view(buf, static_cast<std::size_t>(end - buf));
      }
    }
    os << '\n';
  }
  if (!os) throw DataError("write failed for " + path.string());
}

std::vector<PoseSample> load_fpha_skeleton(const std::filesystem::path& root, const CameraIntrinsics& cam,
                                           Split split) {
  namespace fs = std::filesystem;
  cam.validate();
  if (!fs::is_directory(root)) throw DataError("FPHA root " + root.string() + " is not a directory");

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "skeleton.txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no skeleton.txt files under " + root.string());

  std::vector<PoseSample> out;
  for (const auto& file : files) {
    const auto rel = fs::relative(file, root);
    std::vector<std::string> parts;
    for (const auto& p : rel) parts.push_back(p.string());
    int subject = -1;
    for (const auto& p : parts) {
      if (p.rfind("Subject_", 0) == 0) {
        subject = parse_number<int>(std::string_view(p).substr(8), file, 0);
        break;
      }
    }
    if (subject < 0) throw DataError(file.string() + ": no Subject_N directory in path");
    if (!subject_in_split(subject, split)) continue;

    std::size_t line_no = 0;
    for (const auto& frame : read_fpha_skeleton_file(file)) {
      ++line_no;
      PoseSample s;
      try {
        s = make_sample(frame.joints, cam);
      } catch (const DataError& e) {
        throw DataError(file.string() + ": frame " + std::to_string(frame.frame) + ": " + e.what());
      }
      s.meta.subject = subject;
      s.meta.action = parts.size() >= 4 ? parts[parts.size() - 3] : "";
      s.meta.sequence = parts.size() >= 3 ? parts[parts.size() - 2] : "";
      s.meta.frame = frame.frame;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------- binary dataset

namespace {

constexpr char kDatasetMagic[4] = {'H', 'L', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& is, T& v, const std::filesystem::path& path) {
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("dataset " + path.string() + ": truncated");
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kDatasetMagic, 4);
  put<std::uint32_t>(os, kDatasetVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(kJointCount));
  put<std::uint64_t>(os, data.samples.size());
  for (double v : {data.camera.fx, data.camera.fy, data.camera.cx, data.camera.cy, data.camera.width, data.camera.height})
    put(os, v);
  for (const auto& s : data.samples) {
    put(os, s.x2d);
    put(os, s.y3d);
  }
  if (!os) throw DataError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw DataError("dataset " + path.string() + ": bad magic");
  }
  std::uint32_t version = 0, joints = 0;
  std::uint64_t count = 0;
  get(is, version, path);
  get(is, joints, path);
  get(is, count, path);
  if (version != kDatasetVersion) throw DataError("dataset " + path.string() + ": unsupported version");
  if (joints != kJointCount) {
    throw DataError("dataset " + path.string() + ": joint count " + std::to_string(joints) + " != " +
                    std::to_string(kJointCount));
  }
  Dataset d;
  for (double* v : {&d.camera.fx, &d.camera.fy, &d.camera.cx, &d.camera.cy, &d.camera.width, &d.camera.height})
    get(is, *v, path);
  d.samples.resize(count);
  for (auto& s : d.samples) {
    get(is, s.x2d, path);
    get(is, s.y3d, path);
  }
  return d;
}

// ---------------------------------------------------------------- noise

std::vector<PoseSample> add_2d_noise(const std::vector<PoseSample>& samples, double sigma_px,
                                     const CameraIntrinsics& cam, std::uint64_t seed) {
  if (!(sigma_px >= 0.0)) throw std::invalid_argument("add_2d_noise: sigma must be >= 0");
  std::vector<PoseSample> out = samples;
  if (sigma_px == 0.0) return out;
  const double sx = 2.0 * sigma_px / cam.width;
  const double sy = 2.0 * sigma_px / cam.height;
  for (std::size_t i = 0; i < out.size(); ++i) {
    CounterRng rng(seed, "noise", i);
    for (auto& uv : out[i].x2d) {
      uv[0] += sx * rng.normal();
      uv[1] += sy * rng.normal();
    }
  }
  return out;
}

}  // namespace handlift
