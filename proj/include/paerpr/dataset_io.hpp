#pragma once

#include "paerpr/scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace paerpr {

// Dataset directory layout:
//   manifest.json   counts, seeds and scene metadata
//   landmarks.bin   per scene: num_landmarks x 3 doubles, little-endian
//   samples.bin     per sample: u64 scene_index, u64 noise_seed,
//                   7 doubles (x y z qw qx qy qz), obs_dim doubles

inline void save_dataset(const Dataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "paerpr-dataset-v1";
  manifest["obs_dim"] = data.observation_dim();
  manifest["num_samples"] = data.samples.size();
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : data.scenes) {
    scenes.push_back({{"seed", s.seed},
                      {"scene_id", s.scene_id},
                      {"num_landmarks", s.landmarks.size()},
                      {"bounds_lo", {s.bounds.lo.x(), s.bounds.lo.y(), s.bounds.lo.z()}},
                      {"bounds_hi", {s.bounds.hi.x(), s.bounds.hi.y(), s.bounds.hi.z()}}});
  }
  manifest["scenes"] = scenes;
  manifest["landmarks_file"] = "landmarks.bin";
  manifest["samples_file"] = "samples.bin";
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "landmarks.bin", std::ios::binary);
    for (const auto& s : data.scenes)
      for (const auto& lm : s.landmarks) {
        double v[3] = {lm.x(), lm.y(), lm.z()};
        out.write(reinterpret_cast<const char*>(v), sizeof(v));
      }
  }
  {
    std::ofstream out(fs::path(dir) / "samples.bin", std::ios::binary);
    for (const auto& s : data.samples) {
      std::uint64_t scene = s.scene_index;
      out.write(reinterpret_cast<const char*>(&scene), 8);
      out.write(reinterpret_cast<const char*>(&s.noise_seed), 8);
      const Quat& q = s.pose.orientation;
      double pose[7] = {s.pose.position.x(), s.pose.position.y(), s.pose.position.z(),
                        q.w, q.x, q.y, q.z};
      out.write(reinterpret_cast<const char*>(pose), sizeof(pose));
      out.write(reinterpret_cast<const char*>(s.observation.values.data()),
                static_cast<std::streamsize>(s.observation.values.size() * sizeof(double)));
    }
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("load_dataset: missing manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.value("format", "") != "paerpr-dataset-v1")
    throw std::runtime_error("load_dataset: unsupported format");
  std::size_t obs_dim = manifest["obs_dim"].get<std::size_t>();
  std::size_t num_samples = manifest["num_samples"].get<std::size_t>();

  Dataset data;
  for (const auto& js : manifest["scenes"]) {
    SceneSpec s;
    s.seed = js["seed"].get<std::uint64_t>();
    s.scene_id = js["scene_id"].get<std::uint64_t>();
    s.bounds.lo = Vec3(js["bounds_lo"][0], js["bounds_lo"][1], js["bounds_lo"][2]);
    s.bounds.hi = Vec3(js["bounds_hi"][0], js["bounds_hi"][1], js["bounds_hi"][2]);
    s.landmarks.resize(js["num_landmarks"].get<std::size_t>());
    data.scenes.push_back(std::move(s));
  }
  {
    std::ifstream in(fs::path(dir) / manifest["landmarks_file"].get<std::string>(),
                     std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: missing landmarks file");
    for (auto& s : data.scenes)
      for (auto& lm : s.landmarks) {
        double v[3];
        in.read(reinterpret_cast<char*>(v), sizeof(v));
        lm = Vec3(v[0], v[1], v[2]);
      }
    if (!in) throw std::runtime_error("load_dataset: landmarks file truncated");
  }
  {
    std::ifstream in(fs::path(dir) / manifest["samples_file"].get<std::string>(), std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: missing samples file");
    for (std::size_t i = 0; i < num_samples; ++i) {
      Sample s;
      std::uint64_t scene;
      in.read(reinterpret_cast<char*>(&scene), 8);
      in.read(reinterpret_cast<char*>(&s.noise_seed), 8);
      double pose[7];
      in.read(reinterpret_cast<char*>(pose), sizeof(pose));
      s.scene_index = static_cast<std::size_t>(scene);
      if (s.scene_index >= data.scenes.size())
        throw std::runtime_error("load_dataset: sample references unknown scene");
      s.pose.position = Vec3(pose[0], pose[1], pose[2]);
      s.pose.orientation = Quat(pose[3], pose[4], pose[5], pose[6]);
      s.observation.values.resize(obs_dim);
      in.read(reinterpret_cast<char*>(s.observation.values.data()),
              static_cast<std::streamsize>(obs_dim * sizeof(double)));
      if (!in) throw std::runtime_error("load_dataset: samples file truncated");
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

}  // namespace paerpr
