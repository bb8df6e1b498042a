#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delta/tensor.hpp"

namespace delta {

// Tensor file format: one JSON header line {"dtype":..., "shape":[...]}
// terminated by '\n', followed by the raw little-endian payload.
// dtypes: "f64" (8-byte doubles) and "u8" (bytes, used for masks).

void save_tensor(const std::filesystem::path& path, const Shape& shape,
                 const std::vector<double>& data);
void save_tensor_u8(const std::filesystem::path& path, const Shape& shape,
                    const std::vector<uint8_t>& data);

struct LoadedTensor {
  Shape shape;
  std::string dtype;
  std::vector<double> f64;
  std::vector<uint8_t> u8;
  int64_t numel() const { return shape_numel(shape); }
};

LoadedTensor load_tensor(const std::filesystem::path& path);
/// Loads and requires dtype f64.
std::vector<double> load_tensor_f64(const std::filesystem::path& path,
                                    Shape* shape = nullptr);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path,
                     const nlohmann::json& j);

/// Per-track trajectory container: a directory with meta.json plus raw
/// tensors. Used for predictions and ground truth alike.
struct TrackFile {
  int64_t t = 0, n = 0;
  int64_t height = 0, width = 0;  // source video resolution
  double focal = 0, cx = 0, cy = 0;
  std::vector<double> uv;        // T*N*2
  std::vector<double> depth;     // T*N
  std::vector<uint8_t> vis;      // T*N
  std::vector<double> query_uv;  // N*2
};

void save_tracks(const std::filesystem::path& dir, const TrackFile& tf);
TrackFile load_tracks(const std::filesystem::path& dir);

}  // namespace delta
