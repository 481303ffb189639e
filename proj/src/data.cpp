#include "camerapose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "camerapose/error.hpp"

namespace camerapose::data {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

[[noreturn]] void parse_error(size_t line, const std::string& field, const std::string& what) {
  throw Error(ErrorCode::ParseError,
              "line " + std::to_string(line) + ", field '" + field + "': " + what);
}

template <int D>
Eigen::Matrix<double, kNumJoints, D> joints_from_json(const nlohmann::json& j, size_t line,
                                                      const std::string& field) {
  if (!j.is_array() || j.size() != kNumJoints) {
    parse_error(line, field, "expected " + std::to_string(kNumJoints) + " joints");
  }
  Eigen::Matrix<double, kNumJoints, D> m;
  for (int r = 0; r < kNumJoints; ++r) {
    const auto& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || row.size() != D) {
      parse_error(line, field, "joint " + std::to_string(r) + " needs " + std::to_string(D) + " values");
    }
    for (int c = 0; c < D; ++c) {
      if (!row[static_cast<size_t>(c)].is_number()) parse_error(line, field, "non-numeric entry");
      m(r, c) = row[static_cast<size_t>(c)].get<double>();
    }
  }
  return m;
}

template <typename Derived>
nlohmann::json joints_to_json(const Eigen::MatrixBase<Derived>& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

const nlohmann::json& field(const nlohmann::json& j, const char* name, size_t line) {
  auto it = j.find(name);
  if (it == j.end()) parse_error(line, name, "missing");
  return *it;
}

const std::array<const char*, 7> kCameraFields = {"fx", "fy", "cx", "cy", "tx", "ty", "tz"};
const std::array<const char*, 7> kKnownFields = {"id",          "joints2d_px", "conf",
                                                 "image_wh",    "joints3d_mm", "camera",
                                                 "source_tag"};

}  // namespace

void SampleRecord::validate() const {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::InvariantViolation, "record '" + id + "': " + what);
  };
  if (joints3d_mm.has_value() != camera.has_value()) {
    fail("paired records need both joints3d_mm and camera; weak records neither");
  }
  if (!(width > 0) || !(height > 0)) fail("image_wh must be positive");
  if (!joints2d_px.allFinite()) fail("non-finite 2D joints");
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(conf(j) >= 0.0 && conf(j) <= 1.0)) fail("confidence outside [0, 1]");
  }
  if (joints3d_mm && !joints3d_mm->allFinite()) fail("non-finite 3D joints");
  if (camera && !(camera->fx > 0 && camera->fy > 0)) fail("camera focal lengths must be positive");
}

nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json j = r.extra;
  j["id"] = r.id;
  j["joints2d_px"] = joints_to_json(r.joints2d_px);
  j["conf"] = std::vector<double>(r.conf.data(), r.conf.data() + kNumJoints);
  j["image_wh"] = {r.width, r.height};
  if (r.joints3d_mm) j["joints3d_mm"] = joints_to_json(*r.joints3d_mm);
  if (r.camera) {
    const auto& c = *r.camera;
    j["camera"] = {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
                   {"tx", c.tx}, {"ty", c.ty}, {"tz", c.tz}};
  }
  j["source_tag"] = r.source_tag;
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j, size_t line) {
  if (!j.is_object()) parse_error(line, "<record>", "expected an object");
  SampleRecord r;
  const auto& id = field(j, "id", line);
  if (!id.is_string()) parse_error(line, "id", "expected a string");
  r.id = id.get<std::string>();
  r.joints2d_px = joints_from_json<2>(field(j, "joints2d_px", line), line, "joints2d_px");

  const auto& conf = field(j, "conf", line);
  if (!conf.is_array() || conf.size() != kNumJoints) parse_error(line, "conf", "expected 16 values");
  for (int k = 0; k < kNumJoints; ++k) {
    if (!conf[static_cast<size_t>(k)].is_number()) parse_error(line, "conf", "non-numeric entry");
    r.conf(k) = conf[static_cast<size_t>(k)].get<double>();
  }

  const auto& wh = field(j, "image_wh", line);
  if (!wh.is_array() || wh.size() != 2 || !wh[0].is_number() || !wh[1].is_number()) {
    parse_error(line, "image_wh", "expected [width, height]");
  }
  r.width = wh[0].get<double>();
  r.height = wh[1].get<double>();

  if (auto it = j.find("joints3d_mm"); it != j.end() && !it->is_null()) {
    r.joints3d_mm = joints_from_json<3>(*it, line, "joints3d_mm");
  }
  if (auto it = j.find("camera"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) parse_error(line, "camera", "expected an object");
    CameraRecord c;
    double* slots[] = {&c.fx, &c.fy, &c.cx, &c.cy, &c.tx, &c.ty, &c.tz};
    for (size_t k = 0; k < kCameraFields.size(); ++k) {
      auto f = it->find(kCameraFields[k]);
      if (f == it->end() || !f->is_number()) {
        parse_error(line, std::string("camera.") + kCameraFields[k], "missing or non-numeric");
      }
      *slots[k] = f->get<double>();
    }
    r.camera = c;
  }
  if (auto it = j.find("source_tag"); it != j.end()) {
    if (!it->is_string()) parse_error(line, "source_tag", "expected a string");
    r.source_tag = it->get<std::string>();
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(kKnownFields.begin(), kKnownFields.end(),
                     [&](const char* k) { return key == k; }) == kKnownFields.end()) {
      r.extra[key] = value;
    }
  }
  return r;
}

void write_dataset(const std::vector<SampleRecord>& records, const std::string& path) {
  for (const auto& r : records) r.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  nlohmann::json header = {{"format", kDatasetFormat}, {"version", kDatasetVersion},
                           {"count", records.size()}};
  out << header.dump() << '\n';
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::vector<SampleRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<SampleRecord> records;
  std::string text;
  size_t line = 0;
  bool header_seen = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      parse_error(line, "<line>", e.what());
    }
    if (!header_seen) {
      header_seen = true;
      if (j.is_object() && j.contains("format")) {
        if (j["format"] != kDatasetFormat || j.value("version", 0) != kDatasetVersion) {
          parse_error(line, "format", "unsupported dataset header");
        }
        continue;
      }
    }
    SampleRecord r = record_from_json(j, line);
    r.validate();
    records.push_back(std::move(r));
  }
  return records;
}

CameraIntrinsics normalize_intrinsics(const CameraIntrinsics& px, double width, double height) {
  return {2.0 * px.fx / width, 2.0 * px.fy / height, 2.0 * px.cx / width - 1.0,
          2.0 * px.cy / height - 1.0};
}

CameraIntrinsics denormalize_intrinsics(const CameraIntrinsics& n, double width, double height) {
  return {0.5 * n.fx * width, 0.5 * n.fy * height, 0.5 * (n.cx + 1.0) * width,
          0.5 * (n.cy + 1.0) * height};
}

Sample to_sample(const SampleRecord& r) {
  Sample s;
  s.id = r.id;
  s.x = normalize_2d(r.joints2d_px, r.width, r.height);
  s.conf = r.conf;
  if (r.paired()) {
    s.X = *r.joints3d_mm;
    s.K = normalize_intrinsics(r.camera->intrinsics(), r.width, r.height);
    s.t = r.camera->offset();
  }
  return s;
}

std::vector<Sample> to_samples(const std::vector<SampleRecord>& records) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_sample(r));
  return out;
}

// ---------------------------------------------------------------- synthesis

namespace {

// Rest directions in the body frame: x toward the subject's left, y down,
// z away from the camera when the subject faces it.
const std::array<Eigen::Vector3d, kNumBones>& rest_directions() {
  static const std::array<Eigen::Vector3d, kNumBones> dirs = {
      Eigen::Vector3d(-1, 0, 0), Eigen::Vector3d(0, 1, 0),  Eigen::Vector3d(0, 1, 0),
      Eigen::Vector3d(1, 0, 0),  Eigen::Vector3d(0, 1, 0),  Eigen::Vector3d(0, 1, 0),
      Eigen::Vector3d(0, -1, 0), Eigen::Vector3d(0, -1, 0), Eigen::Vector3d(0, -1, 0),
      Eigen::Vector3d(1, 0, 0),  Eigen::Vector3d(0, 1, 0),  Eigen::Vector3d(0, 1, 0),
      Eigen::Vector3d(-1, 0, 0), Eigen::Vector3d(0, 1, 0),  Eigen::Vector3d(0, 1, 0),
  };
  return dirs;
}

// Semantic angle -> signed rotation. Flexion rotates about x (positive limb
// flexion swings the bone toward the camera), abduction about z (positive moves
// the limb away from the body midline).
constexpr std::array<double, kNumBones> kFlexSign = {0, -1, 1, 0, -1, 1, 1, 1, 1, 0, -1, -1, 0, -1, -1};
constexpr std::array<double, kNumBones> kAbductSign = {0, 1, 0, 0, -1, 0, 1, 1, 1, 1, -1, 0, 1, 1, 0};

// Left/right pairs share a length within a subject.
constexpr std::array<int, kNumBones> kMirrorBone = {3, 4, 5, 0, 1, 2, 6, 7, 8, 12, 13, 14, 9, 10, 11};

Eigen::Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix(); }
Eigen::Matrix3d rot_y(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix(); }
Eigen::Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

double uniform(std::mt19937_64& rng, AngleRange r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

Pose3D pose_from_angles(const std::array<double, kNumBones>& lengths,
                        const std::array<double, kNumBones>& flex,
                        const std::array<double, kNumBones>& abduct,
                        const Eigen::Matrix3d& global) {
  const auto& tree = KinematicTree::canonical();
  std::array<Eigen::Matrix3d, kNumJoints> frame;  // accumulated rotation ending at each joint
  frame[0] = global;
  Pose3D pose = Pose3D::Zero();
  for (int k = 0; k < kNumBones; ++k) {
    const auto& b = tree.bone(k);
    const size_t ku = static_cast<size_t>(k);
    const Eigen::Matrix3d local =
        rot_z(kAbductSign[ku] * abduct[ku] * kDeg) * rot_x(kFlexSign[ku] * flex[ku] * kDeg);
    const Eigen::Matrix3d f = frame[static_cast<size_t>(b.parent)] * local;
    frame[static_cast<size_t>(b.child)] = f;
    pose.row(b.child) = pose.row(b.parent) + (lengths[ku] * (f * rest_directions()[ku])).transpose();
  }
  return pose;
}

}  // namespace

const std::array<double, kNumBones>& template_bone_lengths() {
  static const std::array<double, kNumBones> lengths = {135, 445, 440, 135, 445, 440, 235, 250,
                                                        185, 150, 280, 250, 150, 280, 250};
  return lengths;
}

JointLimits JointLimits::nominal() {
  JointLimits l;
  auto set = [&](std::initializer_list<int> bones, AngleRange flex, AngleRange abd) {
    for (int k : bones) {
      l.flex[static_cast<size_t>(k)] = flex;
      l.abduct[static_cast<size_t>(k)] = abd;
    }
  };
  set({0, 3}, {0, 0}, {0, 0});
  set({1, 4}, {-20, 45}, {-5, 20});
  set({2, 5}, {0, 60}, {0, 0});
  set({6}, {-5, 20}, {-10, 10});
  set({7}, {-10, 15}, {-10, 10});
  set({8}, {-20, 20}, {-10, 10});
  set({9, 12}, {0, 0}, {-5, 5});
  set({10, 13}, {-30, 60}, {0, 40});
  set({11, 14}, {0, 90}, {0, 0});
  return l;
}

JointLimits JointLimits::wide() {
  JointLimits l = nominal();
  auto set = [&](std::initializer_list<int> bones, AngleRange flex, AngleRange abd) {
    for (int k : bones) {
      l.flex[static_cast<size_t>(k)] = flex;
      l.abduct[static_cast<size_t>(k)] = abd;
    }
  };
  set({1, 4}, {-30, 110}, {-10, 45});
  set({2, 5}, {0, 140}, {0, 0});
  set({6}, {-15, 50}, {-25, 25});
  set({7}, {-20, 30}, {-15, 15});
  set({8}, {-30, 30}, {-15, 15});
  set({10, 13}, {-45, 170}, {0, 150});
  set({11, 14}, {0, 150}, {0, 0});
  return l;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (!seed_set) fail("synthetic generation needs an explicit seed");
  if (n_paired < 0 || n_weak < 0) fail("sample counts must be non-negative");
  if (!(image_width > 0) || !(image_height > 0)) fail("image dimensions must be positive");
  if (n_subjects < 1) fail("need at least one subject");
  for (auto r : {subject_scale, yaw_deg, pitch_deg, roll_deg, focal_px, depth_mm}) {
    if (!(r.lo <= r.hi)) fail("empty range in synthetic config");
  }
  if (!(subject_scale.lo > 0) || !(focal_px.lo > 0) || !(depth_mm.lo > 0)) {
    fail("scales, focal lengths and depths must be positive");
  }
  if (!(noise_sigma >= 0)) fail("noise sigma must be >= 0");
  if (!(conf_scale > 0)) fail("confidence scale must be > 0");
  if (!(bone_jitter >= 0 && bone_jitter < 0.5)) fail("bone jitter must be in [0, 0.5)");
  if (!(shift_mm >= 0) || !(principal_jitter_px >= 0)) fail("shift ranges must be >= 0");
}

nlohmann::json SynthConfig::to_json() const {
  auto range = [](AngleRange r) { return nlohmann::json::array({r.lo, r.hi}); };
  return {{"n_paired", n_paired},
          {"n_weak", n_weak},
          {"seed", seed},
          {"image_wh", {image_width, image_height}},
          {"n_subjects", n_subjects},
          {"subject_scale", range(subject_scale)},
          {"bone_jitter", bone_jitter},
          {"yaw_deg", range(yaw_deg)},
          {"pitch_deg", range(pitch_deg)},
          {"roll_deg", range(roll_deg)},
          {"focal_px", range(focal_px)},
          {"principal_jitter_px", principal_jitter_px},
          {"depth_mm", range(depth_mm)},
          {"shift_mm", shift_mm},
          {"noise_sigma", noise_sigma},
          {"conf_scale", conf_scale},
          {"paired_ood", paired_ood},
          {"weak_ood", weak_ood},
          {"id_prefix", id_prefix}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "synthetic config must be an object");
  SynthConfig c;
  auto range = [](const nlohmann::json& v) {
    if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::ConfigError, "ranges are [lo, hi] pairs");
    return AngleRange{v[0].get<double>(), v[1].get<double>()};
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_paired") c.n_paired = v.get<int>();
      else if (key == "n_weak") c.n_weak = v.get<int>();
      else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
        c.seed_set = true;
      } else if (key == "image_wh") {
        const auto wh = range(v);
        c.image_width = wh.lo;
        c.image_height = wh.hi;
      } else if (key == "n_subjects") c.n_subjects = v.get<int>();
      else if (key == "subject_scale") c.subject_scale = range(v);
      else if (key == "bone_jitter") c.bone_jitter = v.get<double>();
      else if (key == "yaw_deg") c.yaw_deg = range(v);
      else if (key == "pitch_deg") c.pitch_deg = range(v);
      else if (key == "roll_deg") c.roll_deg = range(v);
      else if (key == "focal_px") c.focal_px = range(v);
      else if (key == "principal_jitter_px") c.principal_jitter_px = v.get<double>();
      else if (key == "depth_mm") c.depth_mm = range(v);
      else if (key == "shift_mm") c.shift_mm = v.get<double>();
      else if (key == "noise_sigma") c.noise_sigma = v.get<double>();
      else if (key == "conf_scale") c.conf_scale = v.get<double>();
      else if (key == "paired_ood") c.paired_ood = v.get<bool>();
      else if (key == "weak_ood") c.weak_ood = v.get<bool>();
      else if (key == "id_prefix") c.id_prefix = v.get<std::string>();
      else throw Error(ErrorCode::ConfigError, "unknown synthetic config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("synthetic config: ") + e.what());
  }
  return c;
}

double confidence_from_noise(double noise_norm, double sigma, double scale) {
  if (sigma <= 0.0) return 1.0;
  return std::clamp(1.0 - noise_norm / (3.0 * sigma * scale), 0.05, 1.0);
}

Corrupted corrupt_2d(const Pose2D& clean, double sigma, std::mt19937_64& rng, double scale) {
  Corrupted out{clean, ConfVector::Ones()};
  if (sigma <= 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Vector2d n(noise(rng), noise(rng));
    out.noisy.row(j) += n.transpose();
    out.conf(j) = confidence_from_noise(n.norm(), sigma, scale);
  }
  return out;
}

SynthResult generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::array<double, kNumBones>> subjects;
  for (int s = 0; s < cfg.n_subjects; ++s) {
    const double body = uniform(rng, cfg.subject_scale);
    std::array<double, kNumBones> lengths{};
    for (int k = 0; k < kNumBones; ++k) {
      const int mirror = kMirrorBone[static_cast<size_t>(k)];
      if (mirror < k) {
        lengths[static_cast<size_t>(k)] = lengths[static_cast<size_t>(mirror)];
        continue;
      }
      const double jitter = uniform(rng, {1.0 - cfg.bone_jitter, 1.0 + cfg.bone_jitter});
      lengths[static_cast<size_t>(k)] = template_bone_lengths()[static_cast<size_t>(k)] * body * jitter;
    }
    subjects.push_back(lengths);
  }

  const JointLimits nominal = JointLimits::nominal();
  const JointLimits wide = JointLimits::wide();

  auto make = [&](const JointLimits& limits, bool keep_3d, const std::string& id,
                  const std::string& tag) {
    std::uniform_int_distribution<int> pick(0, cfg.n_subjects - 1);
    const auto& lengths = subjects[static_cast<size_t>(pick(rng))];
    std::array<double, kNumBones> flex{}, abduct{};
    for (size_t k = 0; k < kNumBones; ++k) {
      flex[k] = uniform(rng, limits.flex[k]);
      abduct[k] = uniform(rng, limits.abduct[k]);
    }
    const Eigen::Matrix3d global = rot_y(uniform(rng, cfg.yaw_deg) * kDeg) *
                                   rot_x(uniform(rng, cfg.pitch_deg) * kDeg) *
                                   rot_z(uniform(rng, cfg.roll_deg) * kDeg);
    const Pose3D pose = pose_from_angles(lengths, flex, abduct, global);

    CameraRecord cam;
    cam.fx = cam.fy = uniform(rng, cfg.focal_px);
    cam.cx = 0.5 * cfg.image_width + uniform(rng, {-cfg.principal_jitter_px, cfg.principal_jitter_px});
    cam.cy = 0.5 * cfg.image_height + uniform(rng, {-cfg.principal_jitter_px, cfg.principal_jitter_px});
    cam.tx = uniform(rng, {-cfg.shift_mm, cfg.shift_mm});
    cam.ty = uniform(rng, {-cfg.shift_mm, cfg.shift_mm});
    cam.tz = uniform(rng, cfg.depth_mm);

    SampleRecord r;
    r.id = id;
    r.width = cfg.image_width;
    r.height = cfg.image_height;
    r.source_tag = tag;
    const Pose2D clean = project(pose, cam.intrinsics(), cam.offset());
    const Pose2D clean_norm = normalize_2d(clean, r.width, r.height);
    const Corrupted c = corrupt_2d(clean_norm, cfg.noise_sigma, rng, cfg.conf_scale);
    r.joints2d_px = denormalize_2d(c.noisy, r.width, r.height);
    if (cfg.noise_sigma <= 0.0) r.joints2d_px = clean;
    r.conf = c.conf;
    if (keep_3d) {
      r.joints3d_mm = pose;
      r.camera = cam;
    }
    return r;
  };

  auto id_of = [&](char kind, int i) {
    std::ostringstream os;
    os << cfg.id_prefix << kind << std::setw(6) << std::setfill('0') << i;
    return os.str();
  };

  SynthResult out;
  out.paired.reserve(static_cast<size_t>(cfg.n_paired));
  for (int i = 0; i < cfg.n_paired; ++i) {
    out.paired.push_back(make(cfg.paired_ood ? wide : nominal, true, id_of('p', i),
                              cfg.paired_ood ? "synthetic-paired-ood" : "synthetic-paired"));
  }
  out.weak.reserve(static_cast<size_t>(cfg.n_weak));
  for (int i = 0; i < cfg.n_weak; ++i) {
    out.weak.push_back(make(cfg.weak_ood ? wide : nominal, false, id_of('w', i),
                            cfg.weak_ood ? "synthetic-weak-ood" : "synthetic-weak"));
  }
  return out;
}

// ---------------------------------------------------------------- batching

BatchStream::BatchStream(size_t n, size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (n_ == 0) throw Error(ErrorCode::EmptyDataset, "cannot batch an empty dataset");
  if (batch_size_ == 0) throw Error(ErrorCode::ConfigError, "batch size must be positive");
  order_.resize(n_);
  reshuffle();
}

void BatchStream::reshuffle() {
  for (size_t i = 0; i < n_; ++i) order_[i] = i;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
  ++passes_;
}

std::vector<size_t> BatchStream::next() {
  if (cursor_ >= n_) reshuffle();
  const size_t end = std::min(n_, cursor_ + batch_size_);
  std::vector<size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                            order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

nlohmann::json BatchStream::state() const {
  std::ostringstream os;
  os << rng_;
  return {{"rng", os.str()}, {"order", order_}, {"cursor", cursor_}, {"passes", passes_}};
}

void BatchStream::restore(const nlohmann::json& j) {
  std::istringstream is(j.at("rng").get<std::string>());
  is >> rng_;
  order_ = j.at("order").get<std::vector<size_t>>();
  cursor_ = j.at("cursor").get<size_t>();
  passes_ = j.at("passes").get<size_t>();
  if (order_.size() != n_) throw Error(ErrorCode::ParseError, "batch stream size mismatch");
}

std::vector<BatchKind> mixed_schedule(int paired, int weak, size_t total) {
  if (paired < 0 || weak < 0 || paired + weak == 0) {
    throw Error(ErrorCode::ConfigError, "mixed schedule needs a positive ratio");
  }
  std::vector<BatchKind> out;
  out.reserve(total);
  const size_t window = static_cast<size_t>(paired + weak);
  for (size_t i = 0; i < total; ++i) {
    out.push_back(i % window < static_cast<size_t>(paired) ? BatchKind::Paired : BatchKind::Weak);
  }
  return out;
}

}  // namespace camerapose::data
