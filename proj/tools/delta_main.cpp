// Command-line front end for the dense 3D tracking pipeline: data
// generation, training, tracking, evaluation, attention-cost benchmarks,
// ablations, and plot-data export.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "delta/costing.hpp"
#include "delta/metrics.hpp"
#include "delta/model.hpp"
#include "delta/serialize.hpp"
#include "delta/synthdata.hpp"
#include "delta/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path default_out(const std::string& command) {
  if (const char* env = std::getenv("DELTA_OUT_DIR"))
    return fs::path(env) / command;
  return fs::path("delta_out") / command;
}

void write_resolved_config(const fs::path& out_dir, const std::string& command,
                           const json& cfg) {
  fs::create_directories(out_dir);
  json j;
  j["command"] = command;
  j["config"] = cfg;
  delta::write_json_file(out_dir / "config.resolved.json", j);
}

json scene_config_json(const delta::SceneConfig& c, uint64_t seed, int count) {
  json j;
  j["T"] = c.t;
  j["H"] = c.h;
  j["W"] = c.w;
  j["n_sprites"] = c.n_sprites;
  j["near"] = c.near;
  j["far"] = c.far;
  j["sprite_speed_max"] = c.sprite_speed_max;
  j["sprite_depth_vel_max"] = c.sprite_depth_vel_max;
  j["cam_speed_max"] = c.cam_speed_max;
  j["cam_depth_scale_max"] = c.cam_depth_scale_max;
  j["texture_cells"] = c.texture_cells;
  j["depth_noise_std"] = c.depth_noise_std;
  j["focal"] = c.focal;
  j["seed"] = seed;
  j["count"] = count;
  return j;
}

// ---- gen -------------------------------------------------------------

struct GenArgs {
  std::string out;
  uint64_t seed = 0;
  int count = 1;
  int queries_grid = 0;
  std::string preset = "desk";
  delta::SceneConfig scene;
};

int run_gen(const GenArgs& a) {
  delta::SceneConfig cfg = a.scene;
  std::vector<delta::RgbdSequence> seqs;
  for (int i = 0; i < a.count; ++i)
    seqs.push_back(delta::generate_sequence(cfg, a.seed + i));
  const fs::path out = a.out.empty() ? default_out("gen") : fs::path(a.out);
  delta::save_dataset_collection(seqs, out);
  write_resolved_config(out, "gen", scene_config_json(cfg, a.seed, a.count));
  if (a.queries_grid > 0) {
    // Uniform query grid for sparse-mode tracking.
    const int k = a.queries_grid;
    std::vector<double> q;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        q.push_back((j + 0.5) * cfg.w / k);
        q.push_back((i + 0.5) * cfg.h / k);
      }
    delta::save_tensor(out / "queries.bin", {static_cast<int64_t>(k) * k, 2},
                       q);
  }
  std::cout << "wrote " << seqs.size() << " sequence(s) to " << out << "\n";
  return 0;
}

// ---- model config plumbing -------------------------------------------

struct ModelArgs {
  std::string preset = "desk";
  std::string config_file;
  std::string depth_repr;
  std::string variant;
  bool no_local = false;
  bool sparse_mode = false;
  bool no_pos_depth = false;

  delta::ModelConfig resolve() const {
    delta::ModelConfig cfg = config_file.empty()
                                 ? delta::ModelConfig::preset(preset)
                                 : delta::ModelConfig::from_json(
                                       delta::read_json_file(config_file));
    if (!depth_repr.empty()) {
      json patch = cfg.to_json();
      patch["tracker"]["depth_repr"] = depth_repr;
      cfg = delta::ModelConfig::from_json(patch);
    }
    if (!variant.empty()) {
      json patch = cfg.to_json();
      patch["tracker"]["variant"] = variant;
      cfg = delta::ModelConfig::from_json(patch);
    }
    if (no_local || sparse_mode) cfg.tracker.local_attention = false;
    if (no_pos_depth) cfg.tracker.pos_embed_depth = false;
    return cfg;
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Model preset (desk|paper)")
        ->capture_default_str();
    cmd->add_option("--config", config_file,
                    "Model config JSON (overrides --preset)");
    cmd->add_option("--depth-repr", depth_repr,
                    "Depth representation override (log|delta|inverse)");
    cmd->add_option("--variant", variant,
                    "Spatial attention variant override "
                    "(none|full|cotracker|ours)");
    cmd->add_flag("--no-local-attention", no_local,
                  "Disable dense local attention");
    cmd->add_flag("--sparse-mode", sparse_mode,
                  "Sparse mode: no local attention, no upsampler");
    cmd->add_flag("--no-pos-depth", no_pos_depth,
                  "Disable the depth channel of the positional embedding");
  }
};

// ---- train ------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string val_data;
  std::string out;
  ModelArgs model;
  delta::TrainConfig train;
  uint64_t model_seed = 0;
};

int run_train(const TrainArgs& a) {
  delta::ModelConfig mcfg = a.model.resolve();
  const fs::path out = a.out.empty() ? default_out("train") : fs::path(a.out);

  std::vector<delta::RgbdSequence> train_seqs =
      delta::load_dataset_collection(a.data);
  std::vector<delta::RgbdSequence> val_seqs;
  if (!a.val_data.empty())
    val_seqs = delta::load_dataset_collection(a.val_data);

  delta::DeltaModel model(mcfg, a.model_seed);
  json resolved;
  resolved["model"] = mcfg.to_json();
  resolved["model_seed"] = a.model_seed;
  resolved["steps"] = a.train.steps;
  resolved["lr"] = a.train.lr;
  resolved["warmup"] = a.train.warmup;
  resolved["schedule"] = a.train.schedule;
  resolved["grad_clip"] = a.train.grad_clip;
  resolved["patch_h"] = a.train.patch_h;
  resolved["patch_w"] = a.train.patch_w;
  resolved["use_anchors"] = a.train.use_anchors;
  resolved["use_upsampler"] = a.train.use_upsampler;
  resolved["batch"] = a.train.batch;
  resolved["threads"] = a.train.threads;
  resolved["val_every"] = a.train.val_every;
  resolved["augment"] = a.train.augment;
  resolved["supervise_occluded"] = a.train.supervise_occluded;
  resolved["seed"] = a.train.seed;
  resolved["lambda_2d"] = a.train.loss.lambda_2d;
  resolved["lambda_depth"] = a.train.loss.lambda_depth;
  resolved["lambda_visib"] = a.train.loss.lambda_visib;
  write_resolved_config(out, "train", resolved);

  delta::TrainResult res =
      delta::train_model(model, train_seqs, val_seqs, a.train, out);
  std::cout << "trained " << res.steps_run << " steps; checkpoint at "
            << res.checkpoint_dir;
  if (!val_seqs.empty())
    std::cout << "; val EPE " << res.final_val_epe << ", val log-depth err "
              << res.final_val_log_depth_err;
  std::cout << "\n";
  return 0;
}

// ---- track ------------------------------------------------------------

struct TrackArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string queries_file;
  bool sparse_mode = false;
  bool save_coarse = false;
};

int run_track(const TrackArgs& a) {
  auto model = delta::DeltaModel::load_checkpoint(a.checkpoint);
  if (a.sparse_mode) model->cfg.tracker.local_attention = false;
  std::vector<delta::RgbdSequence> seqs =
      delta::load_dataset_collection(a.data);
  delta::check(seqs.size() == 1, "track: expected one sequence, got ",
               seqs.size());
  const delta::RgbdSequence& seq = seqs[0];
  const fs::path out = a.out.empty() ? default_out("track") : fs::path(a.out);

  json resolved;
  resolved["checkpoint"] = a.checkpoint;
  resolved["sparse_mode"] = a.sparse_mode;
  resolved["data"] = a.data;
  write_resolved_config(out, "track", resolved);

  if (a.sparse_mode) {
    delta::check(!a.queries_file.empty(),
                 "track: --queries is required in sparse mode");
    delta::Shape qs;
    std::vector<double> queries = delta::load_tensor_f64(a.queries_file, &qs);
    delta::check(qs.size() == 2 && qs[1] == 2,
                 "track: queries file must hold an [N,2] tensor");
    delta::TrackFile tf = model->track_video_sparse(seq, queries);
    delta::save_tracks(out / "tracks", tf);
    std::cout << "wrote sparse tracks for " << tf.n << " queries to "
              << (out / "tracks") << "\n";
  } else {
    delta::DenseTrackResult res = model->track_video_dense(seq);
    delta::save_tracks(out / "tracks", res.fine);
    if (a.save_coarse) delta::save_tracks(out / "tracks_coarse", res.coarse);
    std::cout << "wrote dense tracks (" << res.fine.n << " pixels x "
              << res.fine.t << " frames) to " << (out / "tracks") << "\n";
  }
  return 0;
}

// ---- eval -------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
};

delta::TrackFile load_pred_or_gt(const std::string& path) {
  if (fs::exists(fs::path(path) / "index.json")) {
    auto seqs = delta::load_dataset_collection(path);
    delta::check(seqs.size() == 1, "eval: expected one sequence in ", path);
    return delta::dataset_gt_tracks(seqs[0]);
  }
  json meta = delta::read_json_file(fs::path(path) / "meta.json");
  const std::string kind = meta.value("kind", "");
  if (kind == "rgbd_sequence") return delta::dataset_gt_tracks(fs::path(path));
  return delta::load_tracks(path);
}

int run_eval(const EvalArgs& a) {
  delta::TrackFile pred = load_pred_or_gt(a.pred);
  delta::TrackFile gt = load_pred_or_gt(a.gt);
  delta::EvalReport rep = delta::evaluate_tracks(pred, gt);
  const fs::path out = a.out.empty() ? default_out("eval") : fs::path(a.out);
  json resolved;
  resolved["pred"] = a.pred;
  resolved["gt"] = a.gt;
  write_resolved_config(out, "eval", resolved);
  delta::write_json_file(out / "eval_report.json", rep.to_json());
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

// ---- bench-attn -------------------------------------------------------

struct BenchArgs {
  int64_t t_len = 8;
  int64_t k = 16;
  int64_t n = 1200;
  int64_t m = 108;
  int patch = 4;
  std::string out;
  bool sweep = true;
};

int run_bench(const BenchArgs& a) {
  delta::AttentionLayout layout{a.k, a.m, a.patch};
  const fs::path out = a.out.empty() ? default_out("bench-attn") : fs::path(a.out);
  json resolved;
  resolved["T"] = a.t_len;
  resolved["K"] = a.k;
  resolved["N"] = a.n;
  resolved["M"] = a.m;
  resolved["patch"] = a.patch;
  write_resolved_config(out, "bench-attn", resolved);

  delta::CostReport rep = delta::attention_cost(
      layout, a.t_len, a.n,
      {delta::CostVariant::kFull, delta::CostVariant::kCoTrackerVirtual,
       delta::CostVariant::kOursGlobal, delta::CostVariant::kOursGlobalLocal});
  json jr;
  jr["T"] = rep.t_len;
  jr["N"] = rep.n_prime;
  jr["K"] = layout.k_virtual;
  jr["M"] = layout.m_anchors;
  jr["patch_size"] = layout.patch_size;
  json entries = json::array();
  for (const auto& e : rep.entries) {
    json je;
    je["variant"] = delta::cost_variant_name(e.variant);
    je["predicted_spatial"] = e.predicted_spatial;
    je["measured_spatial"] = e.measured_spatial;
    je["predicted_total"] = e.predicted_total;
    je["measured_total"] = e.measured_total;
    entries.push_back(je);
    std::cout << delta::cost_variant_name(e.variant) << ": predicted "
              << e.predicted_spatial << ", measured " << e.measured_spatial
              << (e.predicted_spatial == e.measured_spatial ? " (exact)"
                                                            : " (MISMATCH)")
              << "\n";
  }
  jr["entries"] = entries;
  delta::write_json_file(out / "cost_report.json", jr);

  if (a.sweep) {
    std::vector<int64_t> ns;
    for (int64_t n = 64; n <= 4096; n *= 2) ns.push_back(n);
    std::ofstream csv(out / "cost_vs_n.csv", std::ios::trunc);
    csv << "n,variant,measured,predicted\n";
    for (auto v : {delta::CostVariant::kOursGlobal, delta::CostVariant::kFull,
                   delta::CostVariant::kCoTrackerVirtual}) {
      auto rows = delta::cost_sweep(v, layout, a.t_len, ns);
      for (const auto& r : rows)
        csv << r.n_prime << "," << delta::cost_variant_name(v) << ","
            << r.measured << "," << r.predicted << "\n";
    }
    std::cout << "sweep written to " << (out / "cost_vs_n.csv") << "\n";
  }
  return 0;
}

// ---- ablate -----------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string val_data;
  std::string out;
  std::string axis = "all";  // depth|attention|anchors|upsampler|all
  std::vector<uint64_t> seeds = {0, 1, 2};
  delta::TrainConfig train;
};

struct AblationArm {
  std::string axis;
  std::string arm;
  delta::ModelConfig model;
  bool use_anchors = true;
};

std::vector<AblationArm> ablation_arms(const std::string& axis) {
  std::vector<AblationArm> arms;
  auto base = delta::ModelConfig::desk();
  auto add = [&](const std::string& ax, const std::string& name,
                 delta::ModelConfig cfg, bool anchors = true) {
    arms.push_back({ax, name, std::move(cfg), anchors});
  };
  if (axis == "depth" || axis == "all") {
    auto log_cfg = base;
    add("depth", "log", log_cfg);
    auto delta_cfg = base;
    delta_cfg.tracker.depth_repr = delta::DepthRepr::kDeltaDepth;
    add("depth", "delta", delta_cfg);
    auto inv_cfg = base;
    inv_cfg.tracker.depth_repr = delta::DepthRepr::kInvDepth;
    add("depth", "inverse", inv_cfg);
  }
  if (axis == "attention" || axis == "all") {
    add("attention", "global_local", base);
    auto none_cfg = base;
    none_cfg.tracker.variant = delta::SpatialVariant::kNone;
    none_cfg.tracker.local_attention = false;
    add("attention", "none", none_cfg);
  }
  if (axis == "anchors" || axis == "all") {
    add("anchors", "with_anchors", base);
    auto no_anchor = base;
    no_anchor.tracker.variant = delta::SpatialVariant::kCoTracker;
    add("anchors", "without_anchors", no_anchor, false);
  }
  if (axis == "upsampler" || axis == "all") {
    add("upsampler", "attention_alibi", base);
    auto mk = [&](delta::UpsamplerVariant v) {
      auto c = base;
      c.upsampler.variant = v;
      return c;
    };
    add("upsampler", "attention", mk(delta::UpsamplerVariant::kAttention));
    add("upsampler", "conv", mk(delta::UpsamplerVariant::kConv));
    add("upsampler", "bilinear", mk(delta::UpsamplerVariant::kBilinear));
    add("upsampler", "nearest", mk(delta::UpsamplerVariant::kNearest));
  }
  delta::check(!arms.empty(), "ablate: unknown axis '", axis, "'");
  return arms;
}

int run_ablate(const AblateArgs& a) {
  const fs::path out = a.out.empty() ? default_out("ablate") : fs::path(a.out);
  std::vector<delta::RgbdSequence> train_seqs =
      delta::load_dataset_collection(a.data);
  std::vector<delta::RgbdSequence> val_seqs =
      delta::load_dataset_collection(a.val_data);

  json resolved;
  resolved["axis"] = a.axis;
  resolved["seeds"] = a.seeds;
  resolved["steps"] = a.train.steps;
  write_resolved_config(out, "ablate", resolved);

  std::vector<AblationArm> arms = ablation_arms(a.axis);
  std::ofstream csv(out / "ablation_table.csv", std::ios::trunc);
  csv << "axis,arm,seed,val_epe,val_log_depth_err\n";
  json table = json::array();
  for (const auto& arm : arms) {
    double epe_sum = 0, d_sum = 0;
    for (uint64_t seed : a.seeds) {
      delta::DeltaModel model(arm.model, seed);
      delta::TrainConfig tc = a.train;
      tc.seed = seed;
      tc.use_anchors = arm.use_anchors;
      tc.val_every = 0;  // validate once at the end
      delta::TrainResult r = delta::train_model(
          model, train_seqs, {}, tc,
          out / (arm.axis + "_" + arm.arm + "_s" + std::to_string(seed)));
      delta::ValScores v = delta::validate_dense(model, val_seqs);
      (void)r;
      csv << arm.axis << "," << arm.arm << "," << seed << "," << v.epe << ","
          << v.log_depth_err << "\n";
      json row;
      row["axis"] = arm.axis;
      row["arm"] = arm.arm;
      row["seed"] = seed;
      row["val_epe"] = v.epe;
      row["val_log_depth_err"] = v.log_depth_err;
      table.push_back(row);
      epe_sum += v.epe;
      d_sum += v.log_depth_err;
      std::cout << arm.axis << "/" << arm.arm << " seed " << seed << ": EPE "
                << v.epe << ", log-depth err " << v.log_depth_err << "\n";
    }
    std::cout << arm.axis << "/" << arm.arm << " mean: EPE "
              << epe_sum / a.seeds.size() << ", log-depth err "
              << d_sum / a.seeds.size() << "\n";
  }
  delta::write_json_file(out / "ablation.json", table);
  std::cout << "table written to " << (out / "ablation_table.csv") << "\n";
  return 0;
}

// ---- plot-data ---------------------------------------------------------

struct PlotArgs {
  std::string train_log;
  std::string out;
  bool cost_sweep = false;
  int64_t t_len = 8, k = 16, m = 16;
};

int run_plot(const PlotArgs& a) {
  const fs::path out = a.out.empty() ? default_out("plot-data") : fs::path(a.out);
  json resolved;
  resolved["train_log"] = a.train_log;
  resolved["cost_sweep"] = a.cost_sweep;
  write_resolved_config(out, "plot-data", resolved);
  if (!a.train_log.empty()) {
    std::ifstream in(a.train_log);
    delta::check(in.good(), "plot-data: cannot open ", a.train_log);
    std::ofstream csv(out / "training_curves.csv", std::ios::trunc);
    csv << "step,total,l2d_coarse,ldepth_coarse,lvisib_coarse,l2d_fine,"
           "ldepth_fine,lvisib_fine,lr,val_epe,val_log_depth_err\n";
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json r = json::parse(line);
      csv << r.value("step", -1) << "," << r.value("total", 0.0) << ","
          << r.value("l2d_coarse", 0.0) << "," << r.value("ldepth_coarse", 0.0)
          << "," << r.value("lvisib_coarse", 0.0) << ","
          << r.value("l2d_fine", 0.0) << "," << r.value("ldepth_fine", 0.0)
          << "," << r.value("lvisib_fine", 0.0) << "," << r.value("lr", 0.0);
      csv << ",";
      if (r.contains("val_epe")) csv << r["val_epe"].get<double>();
      csv << ",";
      if (r.contains("val_log_depth_err"))
        csv << r["val_log_depth_err"].get<double>();
      csv << "\n";
    }
    std::cout << "training curves written to " << (out / "training_curves.csv")
              << "\n";
  }
  if (a.cost_sweep) {
    delta::AttentionLayout layout{a.k, a.m, 4};
    std::vector<int64_t> ns;
    for (int64_t n = 64; n <= 4096; n *= 2) ns.push_back(n);
    std::ofstream csv(out / "cost_scaling.csv", std::ios::trunc);
    csv << "n,variant,measured,predicted\n";
    for (auto v : {delta::CostVariant::kOursGlobal, delta::CostVariant::kFull}) {
      for (const auto& r : delta::cost_sweep(v, layout, a.t_len, ns))
        csv << r.n_prime << "," << delta::cost_variant_name(v) << ","
            << r.measured << "," << r.predicted << "\n";
    }
    std::cout << "cost scaling written to " << (out / "cost_scaling.csv")
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"delta: dense 3D point tracking pipeline"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenArgs gen;
  CLI::App* c_gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  c_gen->add_option("--out", gen.out, "Output directory");
  c_gen->add_option("--seed", gen.seed, "Base seed")->capture_default_str();
  c_gen->add_option("--count", gen.count, "Number of sequences")
      ->capture_default_str();
  c_gen->add_option("--queries-grid", gen.queries_grid,
                    "Also write a KxK sparse query grid (queries.bin)")
      ->capture_default_str();
  c_gen->add_option("--T", gen.scene.t, "Frames")->capture_default_str();
  c_gen->add_option("--H", gen.scene.h, "Height")->capture_default_str();
  c_gen->add_option("--W", gen.scene.w, "Width")->capture_default_str();
  c_gen->add_option("--sprites", gen.scene.n_sprites, "Sprite count")
      ->capture_default_str();
  c_gen->add_option("--near", gen.scene.near, "Near depth")
      ->capture_default_str();
  c_gen->add_option("--far", gen.scene.far, "Far depth")->capture_default_str();
  c_gen->add_option("--depth-noise", gen.scene.depth_noise_std,
                    "Log-space Gaussian depth noise std")
      ->capture_default_str();
  c_gen->add_option("--cam-speed", gen.scene.cam_speed_max,
                    "Max camera translation per frame")
      ->capture_default_str();
  c_gen->add_option("--cam-depth-scale", gen.scene.cam_depth_scale_max,
                    "Max camera log depth-scale per frame")
      ->capture_default_str();
  c_gen->add_option("--sprite-speed", gen.scene.sprite_speed_max,
                    "Max sprite speed px/frame")
      ->capture_default_str();

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--data", train.data, "Training dataset directory")
      ->required();
  c_train->add_option("--val-data", train.val_data, "Validation dataset");
  c_train->add_option("--out", train.out, "Output directory");
  train.model.attach(c_train);
  c_train->add_option("--model-seed", train.model_seed, "Model init seed")
      ->capture_default_str();
  c_train->add_option("--steps", train.train.steps, "Training steps")
      ->capture_default_str();
  c_train->add_option("--lr", train.train.lr, "Learning rate")
      ->capture_default_str();
  c_train->add_option("--warmup", train.train.warmup, "Warmup steps")
      ->capture_default_str();
  c_train->add_option("--schedule", train.train.schedule,
                      "LR schedule (constant|onecycle)")
      ->capture_default_str();
  c_train->add_option("--grad-clip", train.train.grad_clip,
                      "Global gradient-norm clip")
      ->capture_default_str();
  c_train->add_option("--patch-h", train.train.patch_h,
                      "Training patch height (coarse cells)")
      ->capture_default_str();
  c_train->add_option("--patch-w", train.train.patch_w,
                      "Training patch width (coarse cells)")
      ->capture_default_str();
  c_train->add_option("--batch", train.train.batch, "Batch size")
      ->capture_default_str();
  c_train->add_option("--threads", train.train.threads,
                      "Data-parallel worker threads (bit-exactness is only "
                      "guaranteed single-threaded)")
      ->capture_default_str();
  c_train->add_option("--val-every", train.train.val_every,
                      "Validation interval (steps)")
      ->capture_default_str();
  c_train->add_option("--seed", train.train.seed, "Training seed")
      ->capture_default_str();
  bool no_anchors = false, no_augment = false, no_upsampler = false,
       no_occluded = false;
  c_train->add_flag("--no-anchors", no_anchors,
                    "Train without appended anchor tracks");
  c_train->add_flag("--no-augment", no_augment, "Disable augmentation");
  c_train->add_flag("--no-upsampler", no_upsampler,
                    "Skip the fine-resolution loss term");
  c_train->add_flag("--no-occluded-supervision", no_occluded,
                    "Do not supervise positions of occluded points");
  c_train->add_option("--lambda-2d", train.train.loss.lambda_2d, "2D loss weight")
      ->capture_default_str();
  c_train->add_option("--lambda-depth", train.train.loss.lambda_depth,
                      "Inverse-depth loss weight")
      ->capture_default_str();
  c_train->add_option("--lambda-visib", train.train.loss.lambda_visib,
                      "Visibility loss weight")
      ->capture_default_str();

  TrackArgs track;
  CLI::App* c_track = app.add_subcommand("track", "Track a video");
  c_track->add_option("--data", track.data, "Sequence directory")->required();
  c_track->add_option("--checkpoint", track.checkpoint, "Checkpoint directory")
      ->required();
  c_track->add_option("--out", track.out, "Output directory");
  c_track->add_flag("--sparse-mode", track.sparse_mode,
                    "Track explicit query points without local attention or "
                    "the upsampler");
  c_track->add_option("--queries", track.queries_file,
                      "Query tensor file ([N,2] f64), sparse mode");
  c_track->add_flag("--save-coarse", track.save_coarse,
                    "Also write the coarse-resolution tracks");

  EvalArgs eval;
  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate tracks against gt");
  c_eval->add_option("--pred", eval.pred, "Predicted tracks directory")
      ->required();
  c_eval->add_option("--gt", eval.gt, "Ground truth (tracks or dataset dir)")
      ->required();
  c_eval->add_option("--out", eval.out, "Output directory");

  BenchArgs bench;
  CLI::App* c_bench =
      app.add_subcommand("bench-attn", "Verify attention-cost formulas");
  c_bench->add_option("--T", bench.t_len, "Window length")->capture_default_str();
  c_bench->add_option("--K", bench.k, "Virtual tracks")->capture_default_str();
  c_bench->add_option("--N", bench.n, "Tracks (patch size N')")
      ->capture_default_str();
  c_bench->add_option("--M", bench.m, "Anchor tracks")->capture_default_str();
  c_bench->add_option("--patch", bench.patch, "Local patch size p")
      ->capture_default_str();
  c_bench->add_option("--out", bench.out, "Output directory");
  bool no_sweep = false;
  c_bench->add_flag("--no-sweep", no_sweep, "Skip the N' scaling sweep");

  AblateArgs ablate;
  CLI::App* c_ablate = app.add_subcommand(
      "ablate", "Train/evaluate ablation arms (depth repr, attention, "
                "anchors, upsampler)");
  c_ablate->add_option("--data", ablate.data, "Training dataset")->required();
  c_ablate->add_option("--val-data", ablate.val_data, "Held-out dataset")
      ->required();
  c_ablate->add_option("--out", ablate.out, "Output directory");
  c_ablate->add_option("--axis", ablate.axis,
                       "depth|attention|anchors|upsampler|all")
      ->capture_default_str();
  c_ablate->add_option("--seeds", ablate.seeds, "Seeds to average over")
      ->capture_default_str();
  ablate.train.steps = 400;
  ablate.train.val_every = 0;
  ablate.train.checkpoint_every = 0;
  c_ablate->add_option("--steps", ablate.train.steps, "Steps per arm")
      ->capture_default_str();
  c_ablate->add_option("--patch-h", ablate.train.patch_h, "Patch height")
      ->capture_default_str();
  c_ablate->add_option("--patch-w", ablate.train.patch_w, "Patch width")
      ->capture_default_str();
  c_ablate->add_option("--lr", ablate.train.lr, "Learning rate")
      ->capture_default_str();
  c_ablate->add_option("--threads", ablate.train.threads, "Worker threads")
      ->capture_default_str();

  PlotArgs plot;
  CLI::App* c_plot =
      app.add_subcommand("plot-data", "Export CSV series for figures");
  c_plot->add_option("--train-log", plot.train_log,
                     "train_log.jsonl to convert");
  c_plot->add_option("--out", plot.out, "Output directory");
  c_plot->add_flag("--cost-sweep", plot.cost_sweep,
                   "Also emit the attention-cost scaling series");
  c_plot->add_option("--T", plot.t_len, "Window length for the cost sweep")
      ->capture_default_str();
  c_plot->add_option("--K", plot.k, "Virtual tracks")->capture_default_str();
  c_plot->add_option("--M", plot.m, "Anchor tracks")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*c_gen) return run_gen(gen);
    if (*c_train) {
      train.train.use_anchors = !no_anchors;
      train.train.augment = !no_augment;
      train.train.use_upsampler = !no_upsampler;
      train.train.supervise_occluded = !no_occluded;
      return run_train(train);
    }
    if (*c_track) return run_track(track);
    if (*c_eval) return run_eval(eval);
    if (*c_bench) {
      bench.sweep = !no_sweep;
      return run_bench(bench);
    }
    if (*c_ablate) return run_ablate(ablate);
    if (*c_plot) return run_plot(plot);
  } catch (const delta::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
