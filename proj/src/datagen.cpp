#include "nanohtnet/datagen.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nanohtnet/errors.hpp"
#include "nanohtnet/rng.hpp"

namespace nht {

static_assert(std::endian::native == std::endian::little,
              "dataset io assumes a little-endian host");

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

constexpr Mat3 kIdentity3{1, 0, 0, 0, 1, 0, 0, 0, 1};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

Vec3 matvec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

// Rodrigues rotation about a unit axis.
Mat3 axis_angle(const Vec3& u, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
  return {c + u[0] * u[0] * ic,        u[0] * u[1] * ic - u[2] * s, u[0] * u[2] * ic + u[1] * s,
          u[1] * u[0] * ic + u[2] * s, c + u[1] * u[1] * ic,        u[1] * u[2] * ic - u[0] * s,
          u[2] * u[0] * ic - u[1] * s, u[2] * u[1] * ic + u[0] * s, c + u[2] * u[2] * ic};
}

Mat3 yaw_matrix(double angle) { return axis_angle({0, 0, 1}, angle); }

// Rest offsets (mm, parent frame: +x subject left, +y facing direction,
// +z up), swing axes, per-preset amplitude gains, anatomical clamps (rad)
// and gait phase offsets. One entry per topology edge, same order.
struct BoneMotion {
  Vec3 offset;
  Vec3 axis;
  double gain_walk, gain_wave;
  double clamp;
  double phase_walk, phase_wave;
};

const std::array<BoneMotion, 16>& bone_table() {
  constexpr double kPi = 3.14159265358979323846;
  static const std::array<BoneMotion, 16> table{{
      {{-120, 0, 0}, {0, 1, 0}, 0.00, 0.00, 0.30, 0, 0},        // pelvis -> r_hip
      {{0, 0, -450}, {1, 0, 0}, 1.00, 0.08, 0.70, 0, 0},        // r_hip -> r_knee
      {{0, 0, -445}, {1, 0, 0}, 0.80, 0.06, 1.20, 1.2, 0},      // r_knee -> r_ankle
      {{120, 0, 0}, {0, 1, 0}, 0.00, 0.00, 0.30, 0, 0},         // pelvis -> l_hip
      {{0, 0, -450}, {1, 0, 0}, 1.00, 0.08, 0.70, kPi, 0},      // l_hip -> l_knee
      {{0, 0, -445}, {1, 0, 0}, 0.80, 0.06, 1.20, kPi + 1.2, 0},  // l_knee -> l_ankle
      {{0, 0, 230}, {0, 1, 0}, 0.15, 0.12, 0.25, 0, 0},         // pelvis -> spine
      {{0, 0, 255}, {1, 0, 0}, 0.12, 0.10, 0.25, 0, 0},         // spine -> thorax
      {{0, 0, 120}, {1, 0, 0}, 0.08, 0.15, 0.30, 0, 0},         // thorax -> neck
      {{0, 0, 115}, {0, 1, 0}, 0.08, 0.12, 0.30, 0, 0},         // neck -> head
      {{170, 0, 25}, {0, 1, 0}, 0.00, 0.00, 0.20, 0, 0},        // thorax -> l_shoulder
      {{280, 0, 0}, {0, 1, 0}, 0.45, 1.60, 1.00, 0, 0},         // l_shoulder -> l_elbow
      {{250, 0, 0}, {0, 1, 0}, 0.35, 1.30, 1.20, 0.6, 1.0},     // l_elbow -> l_wrist
      {{-170, 0, 25}, {0, 1, 0}, 0.00, 0.00, 0.20, 0, 0},       // thorax -> r_shoulder
      {{-280, 0, 0}, {0, 1, 0}, 0.45, 0.12, 1.00, kPi, 0},      // r_shoulder -> r_elbow
      {{-250, 0, 0}, {0, 1, 0}, 0.35, 0.10, 1.20, kPi + 0.6, 0},  // r_elbow -> r_wrist
  }};
  return table;
}

struct Sinusoid {
  double amp, freq_hz, phase;
};

double eval_angle(const std::vector<Sinusoid>& comps, double t_sec) {
  double a = 0;
  for (const Sinusoid& s : comps) a += s.amp * std::sin(2.0 * M_PI * s.freq_hz * t_sec + s.phase);
  return a;
}

}  // namespace

void SyntheticMotionConfig::validate() const {
  if (frames < 1) throw ConfigError("motion frames must be positive");
  if (components < 1) throw ConfigError("motion needs at least one sinusoid per angle");
  if (freq_lo_hz <= 0 || freq_hi_hz < freq_lo_hz)
    throw ConfigError("motion frequency band must satisfy 0 < lo <= hi");
  if (freq_hi_hz > kFramesPerSecond / 2.0)
    throw ConfigError("motion frequencies must stay below the Nyquist rate");
  if (amp_lo_rad < 0 || amp_hi_rad < amp_lo_rad)
    throw ConfigError("motion amplitude band must satisfy 0 <= lo <= hi");
  if (amplitude_scale < 0) throw ConfigError("amplitude_scale must be non-negative");
  if (action != 0 && action != 1) throw ConfigError("action preset must be 0 (walk) or 1 (wave)");
}

const std::vector<double>& bone_lengths_mm() {
  static const std::vector<double> lengths = [] {
    std::vector<double> out;
    for (const BoneMotion& b : bone_table()) out.push_back(norm(b.offset));
    return out;
  }();
  return lengths;
}

Tensor<double> generate_motion(const SyntheticMotionConfig& cfg, const SkeletonTopology& topo) {
  cfg.validate();
  if (topo.joints != 17 || topo.edges.size() != bone_table().size())
    throw ContractError("motion generator is defined for the 17-joint topology");

  const int64_t T = cfg.frames;
  const int64_t J = topo.joints;
  RngStream rng(cfg.seed, "motion");

  // Shared gait frequency keeps the main harmonics of all bones aligned.
  const double gait_hi = std::min(cfg.freq_hi_hz, std::max(cfg.freq_lo_hz, 1.1));
  const double f0 = rng.next_uniform(cfg.freq_lo_hz, gait_hi);

  const auto& table = bone_table();
  std::vector<std::vector<Sinusoid>> angles(table.size());
  std::vector<Vec3> axes(table.size());
  for (size_t e = 0; e < table.size(); ++e) {
    const BoneMotion& b = table[e];
    const double gain = cfg.action == 0 ? b.gain_walk : b.gain_wave;
    const double phase0 = cfg.action == 0 ? b.phase_walk : b.phase_wave;
    // Small seeded yaw of the swing axis so sequences are not clones.
    axes[e] = normalized(matvec(yaw_matrix(rng.next_uniform(-0.2, 0.2)), b.axis));
    double total = 0;
    for (int64_t k = 0; k < cfg.components; ++k) {
      Sinusoid s;
      s.amp = rng.next_uniform(cfg.amp_lo_rad, cfg.amp_hi_rad) * gain;
      if (k == 0) {
        s.freq_hz = f0;
        s.phase = phase0 + rng.next_uniform(-0.3, 0.3);
      } else {
        s.amp *= 0.3 / static_cast<double>(k);
        s.freq_hz = rng.next_uniform(cfg.freq_lo_hz, cfg.freq_hi_hz);
        s.phase = rng.next_uniform(0.0, 2.0 * M_PI);
      }
      total += std::abs(s.amp);
      angles[e].push_back(s);
    }
    // Anatomical clamp on the worst-case excursion.
    if (total > b.clamp && total > 0)
      for (Sinusoid& s : angles[e]) s.amp *= b.clamp / total;
    for (Sinusoid& s : angles[e]) s.amp *= cfg.amplitude_scale;
  }

  // Bounded root path: planar drift, vertical bounce at twice the gait
  // frequency, and a slow heading sway.
  const double drift = cfg.action == 0 ? 1.0 : 0.25;
  const double ax = rng.next_uniform(250, 550) * drift * cfg.amplitude_scale;
  const double ay = rng.next_uniform(250, 550) * drift * cfg.amplitude_scale;
  const double az = rng.next_uniform(10, 30) * cfg.amplitude_scale;
  const double fx = rng.next_uniform(0.03, 0.1), fy = rng.next_uniform(0.03, 0.1);
  const double fz = std::min(2.0 * f0, cfg.freq_hi_hz);
  const double px = rng.next_uniform(0.0, 2.0 * M_PI), py = rng.next_uniform(0.0, 2.0 * M_PI);
  const double pz = rng.next_uniform(0.0, 2.0 * M_PI);
  const double yaw_amp = rng.next_uniform(0.2, 0.6) * cfg.amplitude_scale;
  const double yaw_freq = rng.next_uniform(0.03, 0.08);
  const double yaw_phase = rng.next_uniform(0.0, 2.0 * M_PI);

  Tensor<double> out({T, J, 3});
  std::vector<Vec3> pos(static_cast<size_t>(J));
  std::vector<Mat3> rot(static_cast<size_t>(J));
  for (int64_t t = 0; t < T; ++t) {
    const double ts = static_cast<double>(t) / kFramesPerSecond;
    pos[0] = {ax * std::sin(2 * M_PI * fx * ts + px), ay * std::sin(2 * M_PI * fy * ts + py),
              890.0 + az * std::sin(2 * M_PI * fz * ts + pz)};
    rot[0] = yaw_matrix(yaw_amp * std::sin(2 * M_PI * yaw_freq * ts + yaw_phase));
    for (size_t e = 0; e < topo.edges.size(); ++e) {
      const auto [parent, child] = topo.edges[e];
      const double theta = eval_angle(angles[e], ts);
      rot[static_cast<size_t>(child)] =
          matmul3(rot[static_cast<size_t>(parent)], axis_angle(axes[e], theta));
      const Vec3 limb = matvec(rot[static_cast<size_t>(child)], table[e].offset);
      for (int d = 0; d < 3; ++d)
        pos[static_cast<size_t>(child)][static_cast<size_t>(d)] =
            pos[static_cast<size_t>(parent)][static_cast<size_t>(d)] + limb[static_cast<size_t>(d)];
    }
    for (int64_t j = 0; j < J; ++j)
      for (int64_t d = 0; d < 3; ++d)
        out[(t * J + j) * 3 + d] = pos[static_cast<size_t>(j)][static_cast<size_t>(d)];
  }
  return out;
}

bool CameraView::orthonormal(double tol) const {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += r[static_cast<size_t>(i * 3 + k)] * r[static_cast<size_t>(j * 3 + k)];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  return true;
}

std::vector<CameraView> make_camera_rig(int64_t views, uint64_t seed) {
  if (views < 1 || views > 64) throw ConfigError("camera rig supports 1..64 views");
  RngStream rng(seed, "rig");
  const Vec3 target{0, 0, 950};
  std::vector<CameraView> rig;
  for (int64_t v = 0; v < views; ++v) {
    const double azim =
        2.0 * M_PI * static_cast<double>(v) / static_cast<double>(views) + rng.next_uniform(-0.05, 0.05);
    const double radius = rng.next_uniform(3800, 4200);
    const double height = rng.next_uniform(1450, 1750);
    const Vec3 eye{radius * std::cos(azim), radius * std::sin(azim), height};
    const Vec3 fwd = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
    const Vec3 right = normalized(cross(fwd, {0, 0, 1}));
    const Vec3 down = cross(fwd, right);
    CameraView cam;
    for (int k = 0; k < 3; ++k) {
      cam.r[static_cast<size_t>(0 + k)] = right[static_cast<size_t>(k)];
      cam.r[static_cast<size_t>(3 + k)] = down[static_cast<size_t>(k)];
      cam.r[static_cast<size_t>(6 + k)] = fwd[static_cast<size_t>(k)];
    }
    const Vec3 rt = matvec(cam.r, eye);
    cam.t = {-rt[0], -rt[1], -rt[2]};
    cam.focal = rng.next_uniform(900, 1000);
    cam.width = 1000;
    cam.height = 1000;
    cam.cx = 500;
    cam.cy = 500;
    rig.push_back(cam);
  }
  return rig;
}

Tensor<double> project(const Tensor<double>& pose3d, const CameraView& cam) {
  if (pose3d.rank() != 3 || pose3d.extent(2) != 3)
    throw DimError("project expects [T x J x 3], got " + shape_str(pose3d.shape()));
  const int64_t T = pose3d.extent(0), J = pose3d.extent(1);
  Tensor<double> out({T, J, 2});
  const double half_w = static_cast<double>(cam.width) / 2.0;
  const double half_h = static_cast<double>(cam.height) / 2.0;
  for (int64_t i = 0; i < T * J; ++i) {
    const Vec3 p{pose3d[i * 3 + 0], pose3d[i * 3 + 1], pose3d[i * 3 + 2]};
    const Vec3 pc = matvec(cam.r, p);
    const Vec3 q{pc[0] + cam.t[0], pc[1] + cam.t[1], pc[2] + cam.t[2]};
    if (q[2] <= 1.0)
      throw ContractError("projected point has non-positive camera depth");
    out[i * 2 + 0] = cam.focal * q[0] / q[2] / half_w;
    out[i * 2 + 1] = cam.focal * q[1] / q[2] / half_h;
  }
  return out;
}

// ---- dataset assembly ------------------------------------------------------

void DatagenConfig::validate() const {
  if (sequences < 1 || sequences > 10000) throw ConfigError("sequences must lie in [1, 10000]");
  if (frames < 1 || frames > 1000000) throw ConfigError("frames must lie in [1, 1000000]");
  if (views < 1 || views > 64) throw ConfigError("views must lie in [1, 64]");
  if (actions != "walk" && actions != "wave" && actions != "mixed")
    throw ConfigError("actions must be \"walk\", \"wave\" or \"mixed\"");
  if (!(amplitude_scale > 0.0) || amplitude_scale > 4.0)
    throw ConfigError("amplitude_scale must lie in (0, 4]");
}

std::string datagen_config_to_json(const DatagenConfig& cfg) {
  nlohmann::json j{{"sequences", cfg.sequences},
                   {"frames", cfg.frames},
                   {"views", cfg.views},
                   {"seed", cfg.seed},
                   {"actions", cfg.actions},
                   {"amplitude_scale", cfg.amplitude_scale}};
  return j.dump(2);
}

DatagenConfig datagen_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  DatagenConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "sequences") cfg.sequences = value.get<int64_t>();
      else if (key == "frames") cfg.frames = value.get<int64_t>();
      else if (key == "views") cfg.views = value.get<int64_t>();
      else if (key == "seed") cfg.seed = value.get<uint64_t>();
      else if (key == "actions") cfg.actions = value.get<std::string>();
      else if (key == "amplitude_scale") cfg.amplitude_scale = value.get<double>();
      else throw ConfigError("unknown generator config key: \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config field has the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Dataset generate_dataset(const DatagenConfig& cfg) {
  cfg.validate();
  const SkeletonTopology& topo = h36m17();
  Dataset ds;
  ds.joints = topo.joints;
  for (int64_t s = 0; s < cfg.sequences; ++s) {
    SyntheticMotionConfig mc;
    mc.seed = rng_u64(cfg.seed, hash_name("sequence"), static_cast<uint64_t>(s));
    mc.frames = cfg.frames;
    mc.action = cfg.actions == "walk" ? 0 : cfg.actions == "wave" ? 1 : static_cast<int32_t>(s % 2);
    mc.amplitude_scale = cfg.amplitude_scale;

    Tensor<double> motion = generate_motion(mc, topo);
    std::vector<CameraView> rig =
        make_camera_rig(cfg.views, rng_u64(cfg.seed, hash_name("rig"), static_cast<uint64_t>(s)));

    // The rig keeps 4 m of clearance, so depth violations cannot occur for
    // in-band motion; if one ever does, pull the root drift in and retry.
    std::vector<Tensor<double>> views2d;
    for (int attempt = 0; attempt < 3 && views2d.size() != rig.size(); ++attempt) {
      try {
        views2d.clear();
        for (const CameraView& cam : rig) views2d.push_back(project(motion, cam));
      } catch (const ContractError&) {
        for (int64_t i = 0; i < motion.numel(); i += 3) {
          motion[i + 0] *= 0.8;
          motion[i + 1] *= 0.8;
        }
      }
    }
    if (views2d.size() != rig.size())
      throw ContractError("could not place the subject in front of every camera");

    Sequence seq;
    seq.action = mc.action;
    seq.pose3d = cast_tensor<float>(motion);
    seq.cameras = rig;
    for (const Tensor<double>& v : views2d) seq.pose2d.push_back(cast_tensor<float>(v));
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

// ---- container io ------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[5] = {'P', 'S', 'E', 'Q', '1'};

void put_u32(std::ofstream& f, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(b, 4);
}

void put_f32(std::ofstream& f, float v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& path) {
  char b[4];
  if (!f.read(b, 4)) throw CorruptFileError("truncated dataset header in " + path);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

float get_f32(std::ifstream& f, const std::string& path) {
  float v;
  if (!f.read(reinterpret_cast<char*>(&v), 4))
    throw CorruptFileError("truncated dataset payload in " + path);
  return v;
}

void read_f32_block(std::ifstream& f, Tensor<float>& t, const std::string& path) {
  if (!f.read(reinterpret_cast<char*>(t.data()), t.numel() * 4))
    throw CorruptFileError("truncated dataset payload in " + path);
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
  if (ds.sequences.empty()) throw ContractError("refusing to write an empty dataset");
  const uint32_t views = static_cast<uint32_t>(ds.sequences.front().cameras.size());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open dataset for writing: " + path);
  f.write(kDatasetMagic, sizeof(kDatasetMagic));
  put_u32(f, static_cast<uint32_t>(ds.sequences.size()));
  put_u32(f, static_cast<uint32_t>(ds.joints));
  put_u32(f, views);
  for (const Sequence& seq : ds.sequences) {
    const int64_t T = seq.pose3d.extent(0);
    if (seq.cameras.size() != views || seq.pose2d.size() != views)
      throw ContractError("every sequence must carry the same view count");
    put_u32(f, static_cast<uint32_t>(T));
    put_u32(f, static_cast<uint32_t>(seq.action));
    f.write(reinterpret_cast<const char*>(seq.pose3d.data()), seq.pose3d.numel() * 4);
    for (size_t v = 0; v < seq.cameras.size(); ++v) {
      const CameraView& cam = seq.cameras[v];
      for (double x : cam.r) put_f32(f, static_cast<float>(x));
      for (double x : cam.t) put_f32(f, static_cast<float>(x));
      put_f32(f, static_cast<float>(cam.focal));
      put_f32(f, static_cast<float>(cam.cx));
      put_f32(f, static_cast<float>(cam.cy));
      put_u32(f, static_cast<uint32_t>(cam.width));
      put_u32(f, static_cast<uint32_t>(cam.height));
      f.write(reinterpret_cast<const char*>(seq.pose2d[v].data()), seq.pose2d[v].numel() * 4);
    }
  }
  f.flush();
  if (!f) throw IoError("failed writing dataset: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset: " + path);
  char magic[sizeof(kDatasetMagic)];
  if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
    throw CorruptFileError("bad dataset magic in " + path);

  const uint32_t n_seq = get_u32(f, path);
  const uint32_t joints = get_u32(f, path);
  const uint32_t views = get_u32(f, path);
  if (joints != static_cast<uint32_t>(h36m17().joints))
    throw CorruptFileError("dataset joint count " + std::to_string(joints) +
                           " does not match the 17-joint topology in " + path);
  if (n_seq == 0 || n_seq > 100000) throw CorruptFileError("implausible sequence count in " + path);
  if (views == 0 || views > 64) throw CorruptFileError("implausible view count in " + path);

  Dataset ds;
  ds.joints = joints;
  for (uint32_t s = 0; s < n_seq; ++s) {
    const uint32_t T = get_u32(f, path);
    const uint32_t action = get_u32(f, path);
    if (T == 0 || T > 1000000) throw CorruptFileError("implausible frame count in " + path);
    Sequence seq;
    seq.action = static_cast<int32_t>(action);
    seq.pose3d = Tensor<float>({T, joints, 3});
    read_f32_block(f, seq.pose3d, path);
    for (uint32_t v = 0; v < views; ++v) {
      CameraView cam;
      for (double& x : cam.r) x = get_f32(f, path);
      for (double& x : cam.t) x = get_f32(f, path);
      cam.focal = get_f32(f, path);
      cam.cx = get_f32(f, path);
      cam.cy = get_f32(f, path);
      cam.width = get_u32(f, path);
      cam.height = get_u32(f, path);
      if (!cam.orthonormal(1e-4))
        throw CorruptFileError("camera rotation is not orthonormal in " + path);
      if (cam.focal <= 0 || cam.width <= 0 || cam.height <= 0)
        throw CorruptFileError("implausible camera intrinsics in " + path);
      Tensor<float> p2d({T, joints, 2});
      read_f32_block(f, p2d, path);
      seq.cameras.push_back(cam);
      seq.pose2d.push_back(std::move(p2d));
    }
    ds.sequences.push_back(std::move(seq));
  }
  if (f.peek() != std::ifstream::traits_type::eof())
    throw CorruptFileError("trailing bytes after the last sequence in " + path);

  // Self-consistency: re-project ~1% of frames (at least one per sequence)
  // through every stored camera and compare with the stored 2D.
  for (const Sequence& seq : ds.sequences) {
    const int64_t T = seq.pose3d.extent(0);
    const int64_t samples = std::max<int64_t>(1, T / 100);
    for (int64_t k = 0; k < samples; ++k) {
      const int64_t t = k * T / samples;
      Tensor<double> frame({1, ds.joints, 3});
      for (int64_t i = 0; i < ds.joints * 3; ++i)
        frame[i] = static_cast<double>(seq.pose3d[t * ds.joints * 3 + i]);
      for (size_t v = 0; v < seq.cameras.size(); ++v) {
        Tensor<double> re;
        try {
          re = project(frame, seq.cameras[v]);
        } catch (const ContractError&) {
          throw CorruptFileError("stored pose lies behind a stored camera in " + path);
        }
        for (int64_t i = 0; i < ds.joints * 2; ++i) {
          const double stored = static_cast<double>(seq.pose2d[v][t * ds.joints * 2 + i]);
          if (std::abs(stored - re[i]) > 1e-3)
            throw CorruptFileError("stored 2D does not match the stored camera projection in " +
                                   path);
        }
      }
    }
  }
  return ds;
}

}  // namespace nht
