#include "delta/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "delta/serialize.hpp"

namespace delta {

using nlohmann::json;

void SceneConfig::validate() const {
  check(t >= 2, "SceneConfig: T must be >= 2, got ", t);
  check(h >= 8 && w >= 8, "SceneConfig: frame too small: ", h, "x", w);
  check(near > 0, "SceneConfig: near must be positive, got ", near);
  check(far > near, "SceneConfig: far (", far, ") must exceed near (", near, ")");
  check(n_sprites >= 0, "SceneConfig: negative sprite count");
  check(depth_noise_std >= 0, "SceneConfig: negative depth noise std");
}

namespace {

// A textured fronto-parallel surface. The background is a surface covering
// everything at `far` depth.
struct Surface {
  std::array<double, 2> pos0{0, 0};   // top-left at frame 0 (pre camera shift)
  std::array<double, 2> size{0, 0};
  double depth0 = 1.0;
  std::array<double, 2> velocity{0, 0};
  double depth_vel = 0.0;
  bool is_background = false;
  int tex_cells = 8;
  std::vector<double> texture;  // tex_cells * tex_cells * 3

  std::array<double, 2> pos(int64_t t, const std::vector<std::array<double, 2>>& cam_shift) const {
    return {pos0[0] + velocity[0] * t + cam_shift[t][0],
            pos0[1] + velocity[1] * t + cam_shift[t][1]};
  }
  double depth_at_frame(int64_t t, const std::vector<double>& cam_log_scale) const {
    return depth0 * std::exp(depth_vel * t + cam_log_scale[t]);
  }
  bool covers(double u, double v, int64_t t,
              const std::vector<std::array<double, 2>>& cam_shift,
              int64_t w, int64_t h) const {
    if (is_background) return true;
    (void)w;
    (void)h;
    const auto p = pos(t, cam_shift);
    return u >= p[0] && u < p[0] + size[0] && v >= p[1] && v < p[1] + size[1];
  }
  // Smooth value-noise lookup in surface-local coordinates.
  void sample_rgb(double u, double v, int64_t t,
                  const std::vector<std::array<double, 2>>& cam_shift,
                  int64_t frame_w, int64_t frame_h, double* rgb_out) const {
    const auto p = pos(t, cam_shift);
    double lx, ly;
    if (is_background) {
      lx = (u - p[0]) / static_cast<double>(frame_w) * (tex_cells - 1);
      ly = (v - p[1]) / static_cast<double>(frame_h) * (tex_cells - 1);
    } else {
      lx = (u - p[0]) / size[0] * (tex_cells - 1);
      ly = (v - p[1]) / size[1] * (tex_cells - 1);
    }
    // wrap into the grid so the background tiles seamlessly under motion
    auto wrap = [this](double x) {
      const double m = static_cast<double>(tex_cells - 1);
      double r = std::fmod(x, m);
      if (r < 0) r += m;
      return r;
    };
    lx = wrap(lx);
    ly = wrap(ly);
    const int64_t x0 = static_cast<int64_t>(std::floor(lx));
    const int64_t y0 = static_cast<int64_t>(std::floor(ly));
    const int64_t x1 = std::min<int64_t>(x0 + 1, tex_cells - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, tex_cells - 1);
    const double fx = lx - x0, fy = ly - y0;
    for (int c = 0; c < 3; ++c) {
      const double v00 = texture[(y0 * tex_cells + x0) * 3 + c];
      const double v01 = texture[(y0 * tex_cells + x1) * 3 + c];
      const double v10 = texture[(y1 * tex_cells + x0) * 3 + c];
      const double v11 = texture[(y1 * tex_cells + x1) * 3 + c];
      rgb_out[c] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                   fy * ((1 - fx) * v10 + fx * v11);
    }
  }
};

std::vector<double> make_texture(Rng& rng, int cells) {
  std::vector<double> tex(cells * cells * 3);
  for (auto& v : tex) v = rng.uniform();
  return tex;
}

}  // namespace

RgbdSequence generate_sequence(const SceneConfig& config, uint64_t seed) {
  config.validate();
  const int64_t t_len = config.t, h = config.h, w = config.w;

  Rng root(seed);
  Rng cam_rng = root.fork(1);
  Rng sprite_rng = root.fork(2);
  Rng tex_rng = root.fork(3);
  Rng noise_rng = root.fork(4);

  // Camera: per-frame translation deltas and log depth-scale deltas,
  // accumulated so frame 0 is the identity.
  std::vector<std::array<double, 2>> cam_delta(t_len, {0, 0});
  std::vector<double> cam_dlog(t_len, 0.0);
  if (!config.cam_translation_override.empty()) {
    check(config.cam_translation_override.size() == static_cast<size_t>(t_len),
          "camera translation override needs ", t_len, " frames, got ",
          config.cam_translation_override.size());
    cam_delta = config.cam_translation_override;
  } else {
    const double sx = cam_rng.uniform(-config.cam_speed_max, config.cam_speed_max);
    const double sy = cam_rng.uniform(-config.cam_speed_max, config.cam_speed_max);
    for (int64_t t = 1; t < t_len; ++t) cam_delta[t] = {sx, sy};
  }
  if (!config.cam_depth_scale_override.empty()) {
    check(config.cam_depth_scale_override.size() == static_cast<size_t>(t_len),
          "camera depth-scale override needs ", t_len, " frames, got ",
          config.cam_depth_scale_override.size());
    cam_dlog = config.cam_depth_scale_override;
  } else {
    const double sz =
        cam_rng.uniform(-config.cam_depth_scale_max, config.cam_depth_scale_max);
    for (int64_t t = 1; t < t_len; ++t) cam_dlog[t] = sz;
  }
  std::vector<std::array<double, 2>> cam_shift(t_len, {0, 0});
  std::vector<double> cam_log_scale(t_len, 0.0);
  for (int64_t t = 1; t < t_len; ++t) {
    cam_shift[t] = {cam_shift[t - 1][0] + cam_delta[t][0],
                    cam_shift[t - 1][1] + cam_delta[t][1]};
    cam_log_scale[t] = cam_log_scale[t - 1] + cam_dlog[t];
  }

  // Surfaces: background last in depth, sprites at distinct depths.
  std::vector<Surface> surfaces;
  {
    Surface bg;
    bg.is_background = true;
    bg.depth0 = config.far;
    bg.tex_cells = std::max(4, config.texture_cells * 2);
    bg.texture = make_texture(tex_rng, bg.tex_cells);
    surfaces.push_back(std::move(bg));
  }
  std::vector<SpriteSpec> sprites = config.sprites_override;
  if (sprites.empty()) {
    const double max_sw = std::min<double>(config.sprite_max_size, w);
    const double max_sh = std::min<double>(config.sprite_max_size, h);
    const double min_sw = std::min(config.sprite_min_size, max_sw);
    const double min_sh = std::min(config.sprite_min_size, max_sh);
    for (int i = 0; i < config.n_sprites; ++i) {
      SpriteSpec s;
      s.size = {sprite_rng.uniform(min_sw, max_sw),
                sprite_rng.uniform(min_sh, max_sh)};
      s.position = {sprite_rng.uniform(0, w - s.size[0]),
                    sprite_rng.uniform(0, h - s.size[1])};
      // Stratified depths keep sprites strictly ordered and clear of the
      // background plane.
      const double lo = config.near +
                        (config.far * 0.85 - config.near) * i / std::max(1, config.n_sprites);
      const double hi = config.near + (config.far * 0.85 - config.near) *
                                          (i + 0.7) / std::max(1, config.n_sprites);
      s.depth = sprite_rng.uniform(lo, hi);
      s.velocity = {sprite_rng.uniform(-config.sprite_speed_max, config.sprite_speed_max),
                    sprite_rng.uniform(-config.sprite_speed_max, config.sprite_speed_max)};
      s.depth_vel = sprite_rng.uniform(-config.sprite_depth_vel_max,
                                       config.sprite_depth_vel_max);
      sprites.push_back(s);
    }
  }
  for (const auto& s : sprites) {
    check(s.size[0] <= w && s.size[1] <= h, "sprite of size ", s.size[0], "x",
          s.size[1], " larger than frame ", w, "x", h);
    check(s.depth > 0, "sprite depth must be positive, got ", s.depth);
    Surface sf;
    sf.pos0 = s.position;
    sf.size = s.size;
    sf.depth0 = s.depth;
    sf.velocity = s.velocity;
    sf.depth_vel = s.depth_vel;
    sf.tex_cells = std::max(4, config.texture_cells);
    sf.texture = make_texture(tex_rng, sf.tex_cells);
    surfaces.push_back(std::move(sf));
  }

  RgbdSequence seq;
  seq.t = t_len;
  seq.h = h;
  seq.w = w;
  seq.seed = seed;
  seq.config = config;
  seq.focal = config.focal;
  seq.cx = (w - 1) * 0.5;
  seq.cy = (h - 1) * 0.5;
  seq.rgb.assign(t_len * h * w * 3, 0.0);
  seq.depth.assign(t_len * h * w, 0.0);
  seq.has_gt = true;
  seq.gt_tracks.assign(t_len * h * w * 3, 0.0);
  seq.gt_vis.assign(t_len * h * w, 0);

  // Front-most surface at a continuous location.
  auto front_surface = [&](double u, double v, int64_t t) -> int {
    int best = -1;
    double best_d = 0;
    for (size_t s = 0; s < surfaces.size(); ++s) {
      if (!surfaces[s].covers(u, v, t, cam_shift, w, h)) continue;
      const double d = surfaces[s].depth_at_frame(t, cam_log_scale);
      if (best < 0 || d < best_d) {
        best = static_cast<int>(s);
        best_d = d;
      }
    }
    return best;
  };

  // Render frames.
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const double u = static_cast<double>(x), v = static_cast<double>(y);
        const int s = front_surface(u, v, t);
        const Surface& sf = surfaces[s];
        sf.sample_rgb(u, v, t, cam_shift, w, h,
                      &seq.rgb[((t * h + y) * w + x) * 3]);
        seq.depth[(t * h + y) * w + x] = sf.depth_at_frame(t, cam_log_scale);
      }
    }
  }

  // Ground truth: each frame-0 pixel follows its owning surface.
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double u0 = static_cast<double>(x), v0 = static_cast<double>(y);
      const int owner = front_surface(u0, v0, 0);
      const Surface& sf = surfaces[owner];
      const auto p0 = sf.pos(0, cam_shift);
      for (int64_t t = 0; t < t_len; ++t) {
        const auto pt = sf.pos(t, cam_shift);
        const double ut = u0 + (pt[0] - p0[0]);
        const double vt = v0 + (pt[1] - p0[1]);
        const double dt = sf.depth_at_frame(t, cam_log_scale);
        double* g = &seq.gt_tracks[((t * h + y) * w + x) * 3];
        g[0] = ut;
        g[1] = vt;
        g[2] = dt;
        const bool in_frame =
            ut >= 0 && ut <= w - 1 && vt >= 0 && vt <= h - 1;
        bool nearest = in_frame;
        if (in_frame) {
          const int f = front_surface(ut, vt, t);
          nearest = (f == owner);
        }
        seq.gt_vis[(t * h + y) * w + x] = nearest ? 1 : 0;
      }
    }
  }

  // Depth noise on the input maps only, and never on the anchor frame.
  if (config.depth_noise_std > 0) {
    for (int64_t t = 1; t < t_len; ++t)
      for (int64_t i = 0; i < h * w; ++i)
        seq.depth[t * h * w + i] *=
            std::exp(config.depth_noise_std * noise_rng.normal());
  }
  return seq;
}

void save_dataset(const RgbdSequence& seq, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json cfg;
  const SceneConfig& c = seq.config;
  cfg["T"] = c.t;
  cfg["H"] = c.h;
  cfg["W"] = c.w;
  cfg["n_sprites"] = c.n_sprites;
  cfg["near"] = c.near;
  cfg["far"] = c.far;
  cfg["sprite_speed_max"] = c.sprite_speed_max;
  cfg["sprite_depth_vel_max"] = c.sprite_depth_vel_max;
  cfg["sprite_min_size"] = c.sprite_min_size;
  cfg["sprite_max_size"] = c.sprite_max_size;
  cfg["cam_speed_max"] = c.cam_speed_max;
  cfg["cam_depth_scale_max"] = c.cam_depth_scale_max;
  cfg["texture_cells"] = c.texture_cells;
  cfg["depth_noise_std"] = c.depth_noise_std;
  cfg["focal"] = c.focal;

  json meta;
  meta["kind"] = "rgbd_sequence";
  meta["T"] = seq.t;
  meta["H"] = seq.h;
  meta["W"] = seq.w;
  meta["seed"] = seq.seed;
  meta["focal"] = seq.focal;
  meta["cx"] = seq.cx;
  meta["cy"] = seq.cy;
  meta["has_gt"] = seq.has_gt;
  meta["config"] = cfg;
  write_json_file(dir / "meta.json", meta);

  save_tensor(dir / "rgb.bin", {seq.t, seq.h, seq.w, 3}, seq.rgb);
  save_tensor(dir / "depth.bin", {seq.t, seq.h, seq.w}, seq.depth);
  if (seq.has_gt) {
    save_tensor(dir / "gt_tracks.bin", {seq.t, seq.h, seq.w, 3}, seq.gt_tracks);
    save_tensor_u8(dir / "gt_vis.bin", {seq.t, seq.h, seq.w}, seq.gt_vis);
  }
}

RgbdSequence load_dataset(const std::filesystem::path& dir) {
  json meta = read_json_file(dir / "meta.json");
  check(meta.value("kind", "") == "rgbd_sequence", dir.string(),
        " is not a dataset directory");
  RgbdSequence seq;
  seq.t = meta.at("T").get<int64_t>();
  seq.h = meta.at("H").get<int64_t>();
  seq.w = meta.at("W").get<int64_t>();
  seq.seed = meta.at("seed").get<uint64_t>();
  seq.focal = meta.at("focal").get<double>();
  seq.cx = meta.at("cx").get<double>();
  seq.cy = meta.at("cy").get<double>();
  seq.has_gt = meta.value("has_gt", false);
  if (meta.contains("config")) {
    const json& cfg = meta["config"];
    SceneConfig& c = seq.config;
    c.t = cfg.value("T", seq.t);
    c.h = cfg.value("H", seq.h);
    c.w = cfg.value("W", seq.w);
    c.n_sprites = cfg.value("n_sprites", c.n_sprites);
    c.near = cfg.value("near", c.near);
    c.far = cfg.value("far", c.far);
    c.sprite_speed_max = cfg.value("sprite_speed_max", c.sprite_speed_max);
    c.sprite_depth_vel_max =
        cfg.value("sprite_depth_vel_max", c.sprite_depth_vel_max);
    c.sprite_min_size = cfg.value("sprite_min_size", c.sprite_min_size);
    c.sprite_max_size = cfg.value("sprite_max_size", c.sprite_max_size);
    c.cam_speed_max = cfg.value("cam_speed_max", c.cam_speed_max);
    c.cam_depth_scale_max =
        cfg.value("cam_depth_scale_max", c.cam_depth_scale_max);
    c.texture_cells = cfg.value("texture_cells", c.texture_cells);
    c.depth_noise_std = cfg.value("depth_noise_std", c.depth_noise_std);
    c.focal = cfg.value("focal", c.focal);
  }

  Shape s;
  seq.rgb = load_tensor_f64(dir / "rgb.bin", &s);
  check(s == Shape({seq.t, seq.h, seq.w, 3}), "rgb.bin in ", dir.string(),
        " has shape ", shape_str(s));
  seq.depth = load_tensor_f64(dir / "depth.bin", &s);
  check(s == Shape({seq.t, seq.h, seq.w}), "depth.bin in ", dir.string(),
        " has shape ", shape_str(s));
  for (double d : seq.depth)
    check(d > 0, "depth.bin in ", dir.string(), " contains non-positive depth");
  if (seq.has_gt) {
    seq.gt_tracks = load_tensor_f64(dir / "gt_tracks.bin", &s);
    check(s == Shape({seq.t, seq.h, seq.w, 3}), "gt_tracks.bin in ",
          dir.string(), " has shape ", shape_str(s));
    LoadedTensor vis = load_tensor(dir / "gt_vis.bin");
    check(vis.dtype == "u8" && vis.shape == Shape({seq.t, seq.h, seq.w}),
          "gt_vis.bin malformed in ", dir.string());
    seq.gt_vis = std::move(vis.u8);
  }
  return seq;
}

void save_dataset_collection(const std::vector<RgbdSequence>& seqs,
                             const std::filesystem::path& dir) {
  check(!seqs.empty(), "save_dataset_collection: nothing to save");
  std::filesystem::create_directories(dir);
  json index;
  index["kind"] = "rgbd_collection";
  index["count"] = seqs.size();
  json seeds = json::array();
  for (size_t i = 0; i < seqs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%05zu", i);
    save_dataset(seqs[i], dir / name);
    seeds.push_back(seqs[i].seed);
  }
  index["seeds"] = seeds;
  write_json_file(dir / "index.json", index);
}

std::vector<RgbdSequence> load_dataset_collection(
    const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / "index.json")) {
    json index = read_json_file(dir / "index.json");
    check(index.value("kind", "") == "rgbd_collection", dir.string(),
          " index.json is not a collection index");
    const size_t count = index.at("count").get<size_t>();
    std::vector<RgbdSequence> seqs;
    seqs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "seq_%05zu", i);
      seqs.push_back(load_dataset(dir / name));
    }
    return seqs;
  }
  std::vector<RgbdSequence> seqs;
  seqs.push_back(load_dataset(dir));
  return seqs;
}

double zero_motion_baseline(const RgbdSequence& seq) {
  check(seq.has_gt, "zero_motion_baseline: sequence has no ground truth");
  double total = 0;
  int64_t count = 0;
  const int64_t pix = seq.pix();
  for (int64_t t = 1; t < seq.t; ++t) {
    for (int64_t i = 0; i < pix; ++i) {
      const double* g0 = &seq.gt_tracks[i * 3];
      const double* gt = &seq.gt_tracks[(t * pix + i) * 3];
      total += std::hypot(gt[0] - g0[0], gt[1] - g0[1]);
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

double zero_motion_depth_baseline(const RgbdSequence& seq) {
  check(seq.has_gt, "zero_motion_depth_baseline: sequence has no ground truth");
  double total = 0;
  int64_t count = 0;
  const int64_t pix = seq.pix();
  for (int64_t t = 1; t < seq.t; ++t) {
    for (int64_t i = 0; i < pix; ++i) {
      const double d0 = seq.gt_tracks[i * 3 + 2];
      const double dt = seq.gt_tracks[(t * pix + i) * 3 + 2];
      total += std::fabs(std::log(dt / d0));
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

}  // namespace delta
