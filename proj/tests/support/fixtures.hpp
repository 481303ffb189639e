#pragma once

// Small synthetic datasets and random poses shared by the tests.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "camerapose/data.hpp"
#include "camerapose/skeleton.hpp"

namespace camerapose::testing {

inline data::SynthResult synth(int n_paired, int n_weak, std::uint64_t seed, double noise = 0.0) {
  data::SynthConfig c;
  c.n_paired = n_paired;
  c.n_weak = n_weak;
  c.seed = seed;
  c.seed_set = true;
  c.noise_sigma = noise;
  return data::generate_synthetic(c);
}

inline std::vector<data::Sample> paired_samples(int n, std::uint64_t seed) {
  return data::to_samples(synth(n, 0, seed).paired);
}

// Anthropometric pose from the synthetic generator, root at the origin.
inline Pose3D random_pose(std::mt19937_64& rng) {
  const auto r = synth(1, 0, rng());
  return *r.paired.front().joints3d_mm;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("camerapose-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace camerapose::testing
