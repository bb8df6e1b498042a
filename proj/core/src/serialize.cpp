#include "delta/serialize.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace delta {

using nlohmann::json;

namespace {

void write_header_and_payload(const std::filesystem::path& path,
                              const Shape& shape, const char* dtype,
                              const void* payload, size_t bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open ", path.string(), " for writing");
  json hdr;
  hdr["dtype"] = dtype;
  hdr["shape"] = shape;
  const std::string line = hdr.dump() + "\n";
  f.write(line.data(), static_cast<std::streamsize>(line.size()));
  f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
  check(f.good(), "write failed for ", path.string());
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Shape& shape,
                 const std::vector<double>& data) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        "save_tensor: shape ", shape_str(shape), " vs ", data.size(),
        " values for ", path.string());
  write_header_and_payload(path, shape, "f64", data.data(),
                           data.size() * sizeof(double));
}

void save_tensor_u8(const std::filesystem::path& path, const Shape& shape,
                    const std::vector<uint8_t>& data) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        "save_tensor_u8: shape ", shape_str(shape), " vs ", data.size(),
        " values for ", path.string());
  write_header_and_payload(path, shape, "u8", data.data(), data.size());
}

LoadedTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open tensor file ", path.string());
  std::string line;
  std::getline(f, line);
  check(f.good() && !line.empty(), "corrupt header in ", path.string());
  json hdr;
  try {
    hdr = json::parse(line);
  } catch (const std::exception& e) {
    fail("corrupt JSON header in ", path.string(), ": ", e.what());
  }
  check(hdr.contains("dtype") && hdr.contains("shape"),
        "header of ", path.string(), " lacks dtype/shape");
  LoadedTensor t;
  t.dtype = hdr["dtype"].get<std::string>();
  t.shape = hdr["shape"].get<Shape>();
  const int64_t n = t.numel();
  const size_t elem = t.dtype == "f64" ? 8 : (t.dtype == "u8" ? 1 : 0);
  check(elem != 0, "unsupported dtype '", t.dtype, "' in ", path.string());
  const size_t want = static_cast<size_t>(n) * elem;
  std::vector<char> buf(want);
  f.read(buf.data(), static_cast<std::streamsize>(want));
  check(static_cast<size_t>(f.gcount()) == want, "tensor file ", path.string(),
        " truncated: expected ", want, " payload bytes, got ", f.gcount());
  if (t.dtype == "f64") {
    t.f64.resize(n);
    std::memcpy(t.f64.data(), buf.data(), want);
  } else {
    t.u8.assign(buf.begin(), buf.end());
  }
  return t;
}

std::vector<double> load_tensor_f64(const std::filesystem::path& path,
                                    Shape* shape) {
  LoadedTensor t = load_tensor(path);
  check(t.dtype == "f64", "tensor file ", path.string(), " has dtype ",
        t.dtype, ", expected f64");
  if (shape) *shape = t.shape;
  return std::move(t.f64);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open ", path.string());
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    fail("invalid JSON in ", path.string(), ": ", e.what());
  }
  return j;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), "cannot open ", path.string(), " for writing");
  f << j.dump(2) << "\n";
  check(f.good(), "write failed for ", path.string());
}

void save_tracks(const std::filesystem::path& dir, const TrackFile& tf) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["kind"] = "tracks";
  meta["T"] = tf.t;
  meta["N"] = tf.n;
  meta["height"] = tf.height;
  meta["width"] = tf.width;
  meta["focal"] = tf.focal;
  meta["cx"] = tf.cx;
  meta["cy"] = tf.cy;
  write_json_file(dir / "meta.json", meta);
  save_tensor(dir / "uv.bin", {tf.t, tf.n, 2}, tf.uv);
  save_tensor(dir / "depth.bin", {tf.t, tf.n}, tf.depth);
  save_tensor_u8(dir / "vis.bin", {tf.t, tf.n}, tf.vis);
  save_tensor(dir / "query_uv.bin", {tf.n, 2}, tf.query_uv);
}

TrackFile load_tracks(const std::filesystem::path& dir) {
  json meta = read_json_file(dir / "meta.json");
  check(meta.value("kind", "") == "tracks", dir.string(),
        " is not a tracks container");
  TrackFile tf;
  tf.t = meta.at("T").get<int64_t>();
  tf.n = meta.at("N").get<int64_t>();
  tf.height = meta.value("height", int64_t{0});
  tf.width = meta.value("width", int64_t{0});
  tf.focal = meta.value("focal", 0.0);
  tf.cx = meta.value("cx", 0.0);
  tf.cy = meta.value("cy", 0.0);
  Shape s;
  tf.uv = load_tensor_f64(dir / "uv.bin", &s);
  check(s == Shape({tf.t, tf.n, 2}), "uv.bin in ", dir.string(),
        " has shape ", shape_str(s), ", expected ",
        shape_str({tf.t, tf.n, 2}));
  tf.depth = load_tensor_f64(dir / "depth.bin", &s);
  check(s == Shape({tf.t, tf.n}), "depth.bin shape mismatch in ", dir.string());
  LoadedTensor vis = load_tensor(dir / "vis.bin");
  check(vis.dtype == "u8" && vis.shape == Shape({tf.t, tf.n}),
        "vis.bin malformed in ", dir.string());
  tf.vis = std::move(vis.u8);
  tf.query_uv = load_tensor_f64(dir / "query_uv.bin", &s);
  check(s == Shape({tf.n, 2}), "query_uv.bin shape mismatch in ",
        dir.string());
  return tf;
}

}  // namespace delta
