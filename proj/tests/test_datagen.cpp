#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nanohtnet/datagen.hpp"
#include "nanohtnet/errors.hpp"
#include "nanohtnet/frequency.hpp"
#include "nanohtnet/skeleton.hpp"

using namespace nht;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("datagen_test_") + name;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TmpFile {
  std::string path;
  explicit TmpFile(const std::string& name) : path(tmp_path(name)) {}
  ~TmpFile() { std::remove(path.c_str()); }
};

double joint_variance(const Tensor<double>& motion, int64_t joint, bool root_relative) {
  const int64_t T = motion.extent(0), J = motion.extent(1);
  double mean[3] = {0, 0, 0};
  std::vector<std::array<double, 3>> p(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t d = 0; d < 3; ++d) {
      double x = motion[(t * J + joint) * 3 + d];
      if (root_relative) x -= motion[(t * J + 0) * 3 + d];
      p[static_cast<size_t>(t)][static_cast<size_t>(d)] = x;
      mean[d] += x / static_cast<double>(T);
    }
  }
  double var = 0;
  for (int64_t t = 0; t < T; ++t)
    for (int64_t d = 0; d < 3; ++d) {
      const double dx = p[static_cast<size_t>(t)][static_cast<size_t>(d)] - mean[d];
      var += dx * dx;
    }
  return var / static_cast<double>(T);
}

// Least-squares triangulation from >= 2 normalized-image observations,
// solving the stacked linear system with 3x3 normal equations (Cramer).
std::array<double, 3> triangulate(const std::vector<CameraView>& cams,
                                  const std::vector<std::array<double, 2>>& obs) {
  double ata[9] = {0}, atb[3] = {0};
  for (size_t v = 0; v < cams.size(); ++v) {
    const CameraView& c = cams[v];
    const double half[2] = {static_cast<double>(c.width) / 2.0,
                            static_cast<double>(c.height) / 2.0};
    for (int axis = 0; axis < 2; ++axis) {
      // n * half * (r2 . p + t2) = focal * (r_axis . p + t_axis)
      const double s = obs[v][static_cast<size_t>(axis)] * half[axis];
      double row[3], rhs = c.focal * c.t[static_cast<size_t>(axis)] - s * c.t[2];
      for (int k = 0; k < 3; ++k)
        row[k] = s * c.r[static_cast<size_t>(6 + k)] - c.focal * c.r[static_cast<size_t>(axis * 3 + k)];
      for (int i = 0; i < 3; ++i) {
        atb[i] += row[i] * rhs;
        for (int j = 0; j < 3; ++j) ata[i * 3 + j] += row[i] * row[j];
      }
    }
  }
  const auto det3 = [](const double m[9]) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  };
  const double d = det3(ata);
  REQUIRE(std::abs(d) > 1e-12);
  std::array<double, 3> p{};
  for (int col = 0; col < 3; ++col) {
    double m[9];
    std::copy(ata, ata + 9, m);
    for (int i = 0; i < 3; ++i) m[i * 3 + col] = atb[i];
    p[static_cast<size_t>(col)] = det3(m) / d;
  }
  return p;
}

}  // namespace

TEST_CASE("bone lengths table matches the rest offsets") {
  const auto& lengths = bone_lengths_mm();
  REQUIRE(lengths.size() == h36m17().edges.size());
  CHECK(lengths[0] == doctest::Approx(120).epsilon(1e-12));
  CHECK(lengths[1] == doctest::Approx(450).epsilon(1e-12));
  CHECK(lengths[2] == doctest::Approx(445).epsilon(1e-12));
  CHECK(lengths[10] == doctest::Approx(std::sqrt(170.0 * 170 + 25 * 25)).epsilon(1e-12));
  for (double l : lengths) CHECK(l > 0);
}

TEST_CASE("generated motion keeps every bone rigid to 1e-6 mm") {
  const SkeletonTopology& topo = h36m17();
  SyntheticMotionConfig cfg;
  cfg.frames = 240;
  for (int32_t action : {0, 1}) {
    cfg.action = action;
    cfg.seed = 40 + static_cast<uint64_t>(action);
    Tensor<double> m = generate_motion(cfg, topo);
    REQUIRE(m.shape() == Shape{240, 17, 3});
    REQUIRE(m.all_finite());
    for (int64_t t = 0; t < m.extent(0); ++t)
      for (size_t e = 0; e < topo.edges.size(); ++e) {
        const auto [a, b] = topo.edges[e];
        double d2 = 0;
        for (int64_t k = 0; k < 3; ++k) {
          const double dx = m[(t * 17 + b) * 3 + k] - m[(t * 17 + a) * 3 + k];
          d2 += dx * dx;
        }
        CHECK(std::abs(std::sqrt(d2) - bone_lengths_mm()[e]) < 1e-6);
      }
  }
}

TEST_CASE("zero amplitude scale yields the static rest pose") {
  SyntheticMotionConfig cfg;
  cfg.frames = 50;
  cfg.amplitude_scale = 0.0;
  Tensor<double> m = generate_motion(cfg, h36m17());
  // Every frame identical...
  for (int64_t t = 1; t < cfg.frames; ++t)
    for (int64_t i = 0; i < 17 * 3; ++i) CHECK(m[t * 17 * 3 + i] == m[i]);
  // ...and equal to the documented rest skeleton (z-up, +x subject left).
  const double expect[17][3] = {
      {0, 0, 890},      {-120, 0, 890},  {-120, 0, 440},  {-120, 0, -5},  {120, 0, 890},
      {120, 0, 440},    {120, 0, -5},    {0, 0, 1120},    {0, 0, 1375},   {0, 0, 1495},
      {0, 0, 1610},     {170, 0, 1400},  {450, 0, 1400},  {700, 0, 1400}, {-170, 0, 1400},
      {-450, 0, 1400},  {-700, 0, 1400}};
  for (int64_t j = 0; j < 17; ++j)
    for (int64_t d = 0; d < 3; ++d) CHECK(m[j * 3 + d] == doctest::Approx(expect[j][d]).epsilon(1e-12));
}

TEST_CASE("motion is band-limited: negligible energy above three times the band edge") {
  SyntheticMotionConfig cfg;
  cfg.frames = 600;
  cfg.seed = 11;
  for (int32_t action : {0, 1}) {
    cfg.action = action;
    Tensor<double> m = generate_motion(cfg, h36m17());
    const int64_t T = cfg.frames;
    // Coefficient index k of the orthonormal cosine transform corresponds to
    // frequency k / (2T) cycles per frame.
    const int64_t cut = static_cast<int64_t>(
        std::ceil(2.0 * static_cast<double>(T) * (3.0 * cfg.freq_hi_hz) / kFramesPerSecond));
    REQUIRE(cut < T);
    for (int64_t j = 0; j < 17; ++j)
      for (int64_t d = 0; d < 3; ++d) {
        Tensor<double> traj({T, 1});
        for (int64_t t = 0; t < T; ++t) traj[t] = m[(t * 17 + j) * 3 + d];
        Tensor<double> coeffs = dct(traj);
        double ac = 0, high = 0;
        for (int64_t k = 1; k < T; ++k) {
          const double e = coeffs[k] * coeffs[k];
          ac += e;
          if (k >= cut) high += e;
        }
        if (ac > 1e-6) CHECK(high / ac < 0.01);
      }
  }
}

TEST_CASE("action presets move different limbs") {
  SyntheticMotionConfig cfg;
  cfg.frames = 400;
  cfg.seed = 5;
  cfg.action = 0;
  Tensor<double> walk = generate_motion(cfg, h36m17());
  cfg.action = 1;
  Tensor<double> wave = generate_motion(cfg, h36m17());
  // Root-relative activity: walking swings the ankles more than the wrists,
  // waving the opposite (joints: 6 = left ankle, 13 = left wrist).
  CHECK(joint_variance(walk, 6, true) > joint_variance(walk, 13, true));
  CHECK(joint_variance(wave, 13, true) > joint_variance(wave, 6, true));
  CHECK(joint_variance(wave, 13, true) > 4.0 * joint_variance(wave, 6, true));
}

TEST_CASE("motion config validation rejects out-of-contract values") {
  const SkeletonTopology& topo = h36m17();
  SyntheticMotionConfig cfg;
  cfg.frames = 0;
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);
  cfg = {};
  cfg.components = 0;
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);
  cfg = {};
  cfg.freq_lo_hz = 2.0;
  cfg.freq_hi_hz = 1.0;
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);
  cfg = {};
  cfg.freq_hi_hz = 30.0;  // above Nyquist at 50 frames/s
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);
  cfg = {};
  cfg.amp_lo_rad = 0.5;
  cfg.amp_hi_rad = 0.1;
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);
  cfg = {};
  cfg.amplitude_scale = -1.0;
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);
  cfg = {};
  cfg.action = 2;
  CHECK_THROWS_AS(generate_motion(cfg, topo), ConfigError);

  SkeletonTopology small;
  small.joints = 5;
  small.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  CHECK_THROWS_AS(generate_motion(SyntheticMotionConfig{}, small), ContractError);
}

TEST_CASE("camera rig geometry") {
  const std::vector<CameraView> rig = make_camera_rig(4, 99);
  REQUIRE(rig.size() == 4);
  for (const CameraView& cam : rig) {
    CHECK(cam.orthonormal(1e-9));
    // Proper rotation: det = +1.
    const auto& r = cam.r;
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                       r[2] * (r[3] * r[7] - r[4] * r[6]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-9));
    // Eye position recovered from the extrinsics sits on the ring.
    double eye[3];
    for (int i = 0; i < 3; ++i)
      eye[i] = -(r[static_cast<size_t>(0 + i)] * cam.t[0] + r[static_cast<size_t>(3 + i)] * cam.t[1] +
                 r[static_cast<size_t>(6 + i)] * cam.t[2]);
    const double radius = std::hypot(eye[0], eye[1]);
    CHECK(radius >= 3800);
    CHECK(radius <= 4200);
    CHECK(eye[2] >= 1450);
    CHECK(eye[2] <= 1750);
    CHECK(cam.focal >= 900);
    CHECK(cam.focal <= 1000);
    // The aim target (0, 0, 950) lands exactly on the principal point.
    Tensor<double> target({1, 1, 3}, {0, 0, 950});
    Tensor<double> c = project(target, cam);
    CHECK(std::abs(c[0]) < 1e-9);
    CHECK(std::abs(c[1]) < 1e-9);
  }
  // Distinct seeds give distinct rigs; equal seeds reproduce exactly.
  const std::vector<CameraView> again = make_camera_rig(4, 99);
  const std::vector<CameraView> other = make_camera_rig(4, 100);
  CHECK(again[0].focal == rig[0].focal);
  CHECK(again[2].t == rig[2].t);
  CHECK(other[0].t != rig[0].t);
  CHECK_THROWS_AS(make_camera_rig(0, 1), ConfigError);
}

TEST_CASE("projection optics") {
  CameraView cam;  // identity R, zero t, focal 950, 1000x1000
  cam.t = {0, 0, 2000};

  SUBCASE("optical axis maps to the image centre") {
    Tensor<double> p({1, 1, 3}, {0, 0, 0});
    Tensor<double> uv = project(p, cam);
    CHECK(uv[0] == 0.0);
    CHECK(uv[1] == 0.0);
  }
  SUBCASE("halving the depth doubles the normalized offset") {
    Tensor<double> far({1, 1, 3}, {100, 50, 0});
    cam.t = {0, 0, 2000};
    Tensor<double> a = project(far, cam);
    cam.t = {0, 0, 1000};
    Tensor<double> b = project(far, cam);
    CHECK(b[0] == doctest::Approx(2 * a[0]).epsilon(1e-12));
    CHECK(b[1] == doctest::Approx(2 * a[1]).epsilon(1e-12));
  }
  SUBCASE("matches an independent homogeneous 3x4 projection") {
    const CameraView rigcam = make_camera_rig(3, 7)[1];
    SyntheticMotionConfig mc;
    mc.frames = 4;
    Tensor<double> m = generate_motion(mc, h36m17());
    Tensor<double> uv = project(m, rigcam);
    for (int64_t i = 0; i < m.lead_count(); ++i) {
      const double p[4] = {m[i * 3], m[i * 3 + 1], m[i * 3 + 2], 1.0};
      // P = K [R | t] with K = [[f,0,cx],[0,f,cy],[0,0,1]].
      double xr[3];
      for (int row = 0; row < 3; ++row)
        xr[row] = rigcam.r[static_cast<size_t>(row * 3)] * p[0] +
                  rigcam.r[static_cast<size_t>(row * 3 + 1)] * p[1] +
                  rigcam.r[static_cast<size_t>(row * 3 + 2)] * p[2] + rigcam.t[static_cast<size_t>(row)] * p[3];
      const double u = (rigcam.focal * xr[0] + rigcam.cx * xr[2]) / xr[2];
      const double v = (rigcam.focal * xr[1] + rigcam.cy * xr[2]) / xr[2];
      CHECK(uv[i * 2 + 0] == doctest::Approx((u - rigcam.cx) / 500.0).epsilon(1e-12));
      CHECK(uv[i * 2 + 1] == doctest::Approx((v - rigcam.cy) / 500.0).epsilon(1e-12));
    }
  }
  SUBCASE("points at or behind the camera are rejected") {
    cam.t = {0, 0, 0};
    Tensor<double> behind({1, 1, 3}, {0, 0, -100});
    CHECK_THROWS_AS(project(behind, cam), ContractError);
    Tensor<double> grazing({1, 1, 3}, {0, 0, 0.5});
    CHECK_THROWS_AS(project(grazing, cam), ContractError);
  }
  SUBCASE("shape is validated") {
    Tensor<double> flat({2, 3});
    CHECK_THROWS_AS(project(flat, cam), DimError);
  }
}

TEST_CASE("triangulating the stored 2D recovers the stored 3D within 1 mm") {
  DatagenConfig cfg;
  cfg.sequences = 1;
  cfg.frames = 30;
  cfg.views = 4;
  cfg.seed = 3;
  Dataset ds = generate_dataset(cfg);
  const Sequence& seq = ds.sequences[0];
  for (int64_t t = 0; t < cfg.frames; t += 7)
    for (int64_t j = 0; j < 17; ++j) {
      std::vector<std::array<double, 2>> obs;
      for (size_t v = 0; v < seq.cameras.size(); ++v)
        obs.push_back({static_cast<double>(seq.pose2d[v][(t * 17 + j) * 2]),
                       static_cast<double>(seq.pose2d[v][(t * 17 + j) * 2 + 1])});
      const std::array<double, 3> p = triangulate(seq.cameras, obs);
      for (int64_t d = 0; d < 3; ++d)
        CHECK(std::abs(p[static_cast<size_t>(d)] -
                       static_cast<double>(seq.pose3d[(t * 17 + j) * 3 + d])) < 1.0);
    }
}

TEST_CASE("generator config json round-trips and rejects bad input") {
  DatagenConfig cfg;
  cfg.sequences = 3;
  cfg.frames = 100;
  cfg.views = 2;
  cfg.seed = 123456789012345ull;
  cfg.actions = "wave";
  DatagenConfig back = datagen_config_from_json(datagen_config_to_json(cfg));
  CHECK(back.sequences == cfg.sequences);
  CHECK(back.frames == cfg.frames);
  CHECK(back.views == cfg.views);
  CHECK(back.seed == cfg.seed);
  CHECK(back.actions == cfg.actions);

  CHECK_THROWS_AS(datagen_config_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(datagen_config_from_json("[1,2]"), ConfigError);
  CHECK_THROWS_AS(datagen_config_from_json("{\"sequence\": 3}"), ConfigError);
  CHECK_THROWS_AS(datagen_config_from_json("{\"frames\": \"ten\"}"), ConfigError);
  CHECK_THROWS_AS(datagen_config_from_json("{\"actions\": \"jump\"}"), ConfigError);
  CHECK_THROWS_AS(datagen_config_from_json("{\"views\": 0}"), ConfigError);
}

TEST_CASE("dataset generation is deterministic and mixes actions") {
  DatagenConfig cfg;
  cfg.sequences = 4;
  cfg.frames = 40;
  cfg.views = 2;
  cfg.seed = 21;
  Dataset a = generate_dataset(cfg);
  Dataset b = generate_dataset(cfg);
  REQUIRE(a.sequences.size() == 4);
  for (size_t s = 0; s < 4; ++s) {
    CHECK(a.sequences[s].action == static_cast<int32_t>(s % 2));
    CHECK(a.sequences[s].pose3d.vec() == b.sequences[s].pose3d.vec());
    for (size_t v = 0; v < 2; ++v)
      CHECK(a.sequences[s].pose2d[v].vec() == b.sequences[s].pose2d[v].vec());
  }
  cfg.actions = "walk";
  Dataset walk = generate_dataset(cfg);
  for (const Sequence& s : walk.sequences) CHECK(s.action == 0);
  cfg.actions = "wave";
  Dataset wave = generate_dataset(cfg);
  for (const Sequence& s : wave.sequences) CHECK(s.action == 1);

  cfg.seed = 22;
  cfg.actions = "mixed";
  Dataset c = generate_dataset(cfg);
  CHECK(a.sequences[0].pose3d.vec() != c.sequences[0].pose3d.vec());
}

TEST_CASE("dataset container round-trips") {
  DatagenConfig cfg;
  cfg.sequences = 2;
  cfg.frames = 120;
  cfg.views = 3;
  cfg.seed = 7;
  Dataset ds = generate_dataset(cfg);
  TmpFile f1("roundtrip_a.pseq"), f2("roundtrip_b.pseq");
  write_dataset(f1.path, ds);
  Dataset back = read_dataset(f1.path);
  REQUIRE(back.sequences.size() == ds.sequences.size());
  CHECK(back.joints == 17);
  for (size_t s = 0; s < ds.sequences.size(); ++s) {
    CHECK(back.sequences[s].action == ds.sequences[s].action);
    CHECK(back.sequences[s].pose3d.vec() == ds.sequences[s].pose3d.vec());
    for (size_t v = 0; v < 3; ++v) {
      CHECK(back.sequences[s].pose2d[v].vec() == ds.sequences[s].pose2d[v].vec());
      // Camera fields survive up to the container's f32 quantization.
      CHECK(static_cast<float>(back.sequences[s].cameras[v].focal) ==
            static_cast<float>(ds.sequences[s].cameras[v].focal));
      for (int k = 0; k < 9; ++k)
        CHECK(static_cast<float>(back.sequences[s].cameras[v].r[static_cast<size_t>(k)]) ==
              static_cast<float>(ds.sequences[s].cameras[v].r[static_cast<size_t>(k)]));
      CHECK(back.sequences[s].cameras[v].width == 1000);
    }
  }
  // A write -> read -> write cycle is byte-stable.
  write_dataset(f2.path, back);
  CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("equal seeds produce byte-identical dataset files") {
  DatagenConfig cfg;
  cfg.sequences = 2;
  cfg.frames = 50;
  cfg.views = 2;
  cfg.seed = 31;
  TmpFile f1("same_a.pseq"), f2("same_b.pseq"), f3("diff.pseq");
  write_dataset(f1.path, generate_dataset(cfg));
  write_dataset(f2.path, generate_dataset(cfg));
  CHECK(slurp(f1.path) == slurp(f2.path));
  cfg.seed = 32;
  write_dataset(f3.path, generate_dataset(cfg));
  CHECK(slurp(f1.path) != slurp(f3.path));
}

TEST_CASE("corrupted dataset files are rejected") {
  DatagenConfig cfg;
  cfg.sequences = 1;
  cfg.frames = 60;
  cfg.views = 2;
  cfg.seed = 13;
  TmpFile good("corrupt_base.pseq");
  write_dataset(good.path, generate_dataset(cfg));
  const std::string bytes = slurp(good.path);
  TmpFile bad("corrupt_case.pseq");

  SUBCASE("missing file") { CHECK_THROWS_AS(read_dataset("no/such/file.pseq"), IoError); }
  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'Q';
    spit(bad.path, b);
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("truncated payload") {
    spit(bad.path, bytes.substr(0, bytes.size() - 100));
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("trailing junk") {
    spit(bad.path, bytes + std::string(8, '\0'));
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("wrong joint count") {
    std::string b = bytes;
    b[9] = 16;  // u32 joint count lives right after magic + sequence count
    spit(bad.path, b);
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("tampered 2D observations") {
    // First stored 2D value of view 0: magic(5) + header(12) + frame/action(8)
    // + 3D block + camera record (14 f32 + 2 u32 = 64 bytes).
    const size_t off = 5 + 12 + 8 + static_cast<size_t>(cfg.frames) * 17 * 3 * 4 + 64;
    std::string b = bytes;
    float v;
    std::memcpy(&v, b.data() + off, 4);
    v += 0.05f;
    std::memcpy(b.data() + off, &v, 4);
    spit(bad.path, b);
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("tampered 3D block") {
    const size_t off = 5 + 12 + 8;  // first f32 of the 3D block (frame 0 is always re-checked)
    std::string b = bytes;
    float v;
    std::memcpy(&v, b.data() + off, 4);
    v += 50.0f;  // 50 mm shift
    std::memcpy(b.data() + off, &v, 4);
    spit(bad.path, b);
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("mangled camera rotation") {
    const size_t off = 5 + 12 + 8 + static_cast<size_t>(cfg.frames) * 17 * 3 * 4;
    std::string b = bytes;
    const float v = 2.0f;
    std::memcpy(b.data() + off, &v, 4);
    spit(bad.path, b);
    CHECK_THROWS_AS(read_dataset(bad.path), CorruptFileError);
  }
  SUBCASE("the unmodified file still reads back") { CHECK_NOTHROW(read_dataset(good.path)); }
}
