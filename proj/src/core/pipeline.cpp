#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "physloss.hpp"
#include "segmentation.hpp"

namespace pv {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// PHYSVAE_LOG in {error, info, debug}; messages go to standard error only
int log_level() {
  static int level = [] {
    const char* v = std::getenv("PHYSVAE_LOG");
    if (!v) return 0;
    std::string s(v);
    if (s == "debug") return 2;
    if (s == "info") return 1;
    return 0;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "info: %s\n", msg.c_str());
}

void check_keys(const json& j, const std::string& ctx, std::set<std::string> allowed) {
  if (!j.is_object()) fail(ErrKind::Config, ctx + " must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      fail(ErrKind::Config, "unknown key \"" + item.key() + "\" in " + ctx);
}

std::string req_str(const json& args, const char* key, const std::string& cmd) {
  if (!args.contains(key) || !args.at(key).is_string() ||
      args.at(key).get<std::string>().empty())
    fail(ErrKind::Config, cmd + ": required argument \"" + std::string(key) + "\" missing");
  return args.at(key).get<std::string>();
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.output);
  fs::create_directories(dir);
  return dir;
}

SyntheticTruth make_synthetic(const RunConfig& cfg) {
  if (cfg.data.kind == "two-phase")
    return synth_two_phase(cfg.data.seed, cfg.data.side, cfg.data.two_phase);
  if (cfg.data.kind == "multiphase")
    return synth_multiphase(cfg.data.seed, cfg.data.side, cfg.data.multiphase);
  fail(ErrKind::Config, "data.kind \"file\" has no synthetic generator");
}

Micrograph acquire_micrograph(const RunConfig& cfg) {
  if (cfg.data.kind == "file") {
    Micrograph m;
    m.pixels = read_pgm(cfg.data.path);
    m.source = cfg.data.path;
    return m;
  }
  return make_synthetic(cfg).micrograph;
}

void save_patchset(const fs::path& dir, const PatchSet& ps, const std::string& source) {
  std::size_t npix = ps.patches.empty() ? 0 : ps.patches.front().size();
  Array flat = Array::zeros({ps.patches.size(), npix});
  for (std::size_t i = 0; i < ps.patches.size(); ++i)
    std::copy(ps.patches[i].data.begin(), ps.patches[i].data.end(),
              flat.data.begin() + static_cast<std::ptrdiff_t>(i * npix));
  write_tensor((dir / "patchset.pvtn").string(), flat);

  std::vector<std::vector<double>> rows;
  for (const auto& [r, c] : ps.coords)
    rows.push_back({static_cast<double>(r), static_cast<double>(c)});
  write_csv((dir / "patchset_coords.csv").string(), {"row", "col"}, rows);

  json meta = {{"patch_side", ps.patch_side},
               {"stride", ps.stride},
               {"grid_h", ps.grid_h},
               {"grid_w", ps.grid_w},
               {"n_patches", ps.patches.size()},
               {"source", source}};
  std::ofstream os(dir / "patchset_meta.json");
  if (!os) fail(ErrKind::Io, "cannot write " + (dir / "patchset_meta.json").string());
  os << meta.dump(2) << "\n";
}

PatchSet load_patchset(const std::string& tensor_path) {
  fs::path meta_path = fs::path(tensor_path).parent_path() / "patchset_meta.json";
  std::ifstream is(meta_path);
  if (!is) fail(ErrKind::Io, "cannot read " + meta_path.string());
  json meta = json::parse(is, nullptr, false);
  if (meta.is_discarded()) fail(ErrKind::Format, meta_path.string() + ": not valid JSON");

  PatchSet ps;
  ps.patch_side = meta.value("patch_side", 0);
  ps.stride = meta.value("stride", 0);
  ps.grid_h = meta.value("grid_h", std::size_t{0});
  ps.grid_w = meta.value("grid_w", std::size_t{0});

  Array flat = read_tensor(tensor_path);
  if (flat.ndim() != 2)
    fail(ErrKind::Format, tensor_path + ": patch tensor must be 2D (N x s^2)");
  std::size_t n = flat.rows(), npix = flat.cols();
  if (n != ps.grid_h * ps.grid_w ||
      npix != static_cast<std::size_t>(ps.patch_side) * ps.patch_side)
    fail(ErrKind::Format, tensor_path + ": tensor shape disagrees with patchset_meta.json");
  for (std::size_t i = 0; i < n; ++i) {
    Array p = Array::zeros({npix});
    std::copy(flat.data.begin() + static_cast<std::ptrdiff_t>(i * npix),
              flat.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * npix),
              p.data.begin());
    ps.patches.push_back(std::move(p));
    ps.coords.emplace_back(i / ps.grid_w, i % ps.grid_w);
  }
  return ps;
}

PatchSet acquire_patches(const RunConfig& cfg, const json& args) {
  if (args.contains("patches"))
    return load_patchset(req_str(args, "patches", "train"));
  Micrograph m = acquire_micrograph(cfg);
  return extract_patches(m, cfg.patch.side, cfg.patch.stride);
}

ModelParams fresh_model(const RunConfig& cfg) {
  LatentLayout layout{cfg.model.n_content, cfg.model.k};
  return ModelParams::init(layout, cfg.patch.side, cfg.model.enc_hidden,
                           cfg.model.dec_hidden, ReconKind::Bernoulli,
                           cfg.model.init_seed);
}

Array field_tensor(const LatentField& f) {
  Array t = Array::zeros({f.maps.size(), f.grid_h, f.grid_w});
  std::size_t per = f.grid_h * f.grid_w;
  for (std::size_t j = 0; j < f.maps.size(); ++j)
    std::copy(f.maps[j].data.begin(), f.maps[j].data.end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(j * per));
  return t;
}

LatentField load_field(const std::string& path) {
  Array t = read_tensor(path);
  if (t.ndim() != 3)
    fail(ErrKind::Format, path + ": latent field tensor must be 3D (n x H x W)");
  LatentField f;
  f.grid_h = t.shape[1];
  f.grid_w = t.shape[2];
  std::size_t per = f.grid_h * f.grid_w;
  for (std::size_t j = 0; j < t.shape[0]; ++j) {
    Array m = Array::zeros({f.grid_h, f.grid_w});
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(j * per),
              t.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * per),
              m.data.begin());
    f.maps.push_back(std::move(m));
  }
  return f;
}

Array minmax_unit(const Array& a) {
  double lo = a.data[0], hi = a.data[0];
  for (double v : a.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Array out = Array::zeros(a.shape);
  if (hi - lo >= 1e-12)
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] - lo) / (hi - lo);
  return out;
}

// gray segmentation map with label boundaries burned in as white pixels
Array boundary_overlay(const Array& map, const Array& labels) {
  Array out = minmax_unit(map);
  for (std::size_t r = 0; r < labels.rows(); ++r)
    for (std::size_t c = 0; c < labels.cols(); ++c) {
      bool edge = (c + 1 < labels.cols() && labels.at(r, c) != labels.at(r, c + 1)) ||
                  (r + 1 < labels.rows() && labels.at(r, c) != labels.at(r + 1, c));
      if (edge) out.at(r, c) = 1.0;
    }
  return out;
}

// map PGM gray values back to dense class indices by sorted unique level
Array gray_to_labels(const Array& img, int& n_classes) {
  std::set<long> levels;
  for (double v : img.data) levels.insert(std::lround(v * 255.0));
  std::map<long, double> index;
  double next = 0.0;
  for (long l : levels) index[l] = next++;
  Array labels = Array::zeros(img.shape);
  for (std::size_t i = 0; i < img.size(); ++i)
    labels.data[i] = index[std::lround(img.data[i] * 255.0)];
  n_classes = static_cast<int>(levels.size());
  return labels;
}

// per-truth-class IoU under the label permutation maximizing the mean IoU
std::vector<double> best_iou(const Array& pred, int n_pred, const Array& truth,
                             int n_truth) {
  if (pred.shape != truth.shape)
    fail(ErrKind::Shape, "metrics: truth mask shape does not match the field grid");
  int n = std::max(n_pred, n_truth);
  std::vector<std::vector<double>> iou(n, std::vector<double>(n, 0.0));
  for (int t = 0; t < n; ++t)
    for (int p = 0; p < n; ++p) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        bool a = std::lround(truth.data[i]) == t;
        bool b = std::lround(pred.data[i]) == p;
        inter += a && b;
        uni += a || b;
      }
      iou[t][p] = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    }
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  std::vector<double> best(n_truth, 0.0);
  double best_mean = -1.0;
  do {
    double mean = 0.0;
    for (int t = 0; t < n_truth; ++t) mean += iou[t][perm[t]];
    if (mean > best_mean) {
      best_mean = mean;
      for (int t = 0; t < n_truth; ++t) best[t] = iou[t][perm[t]];
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// full-field Psi value of one map under the configured statistics
double field_psi(const Array& map, const PhysicsLossConfig& base, PhysKind kind) {
  PhysicsLossConfig cfg = base;
  cfg.kind = kind;
  cfg.map_mask = {0};
  BatchMap bm;
  bm.maps = {constant(map)};
  bm.b_h = map.rows();
  bm.b_w = map.cols();
  NodePtr psi = kind == PhysKind::SL1 ? sl1(bm, cfg) : sl2(bm, cfg);
  return psi->value.data[0];
}

void cmd_synth(const RunConfig& cfg, const json& args) {
  check_keys(args, "synth args", {});
  if (cfg.data.kind == "file")
    fail(ErrKind::Config, "synth: data.kind must be a generator, not \"file\"");
  SyntheticTruth truth = make_synthetic(cfg);
  fs::path dir = out_dir(cfg);
  write_pgm((dir / "micrograph.pgm").string(), truth.micrograph.pixels, 65535);
  Array gray = labels_to_gray(truth.phase_mask, truth.n_phases);
  for (double& v : gray.data) v /= 255.0;
  write_pgm((dir / "truth_mask.pgm").string(), gray);
  json meta = {{"kind", cfg.data.kind},
               {"seed", cfg.data.seed},
               {"side", cfg.data.side},
               {"n_phases", truth.n_phases},
               {"patch_side", cfg.patch.side},
               {"stride", cfg.patch.stride},
               {"mask_grid_h", truth.phase_mask.rows()},
               {"mask_grid_w", truth.phase_mask.cols()}};
  std::ofstream os(dir / "synth_meta.json");
  if (!os) fail(ErrKind::Io, "cannot write " + (dir / "synth_meta.json").string());
  os << meta.dump(2) << "\n";
  log_info("synth: wrote micrograph.pgm, truth_mask.pgm, synth_meta.json");
}

void cmd_extract(const RunConfig& cfg, const json& args) {
  check_keys(args, "extract args", {"input"});
  RunConfig c = cfg;
  if (args.contains("input")) {
    c.data.kind = "file";
    c.data.path = req_str(args, "input", "extract");
  }
  Micrograph m = acquire_micrograph(c);
  PatchSet ps = extract_patches(m, c.patch.side, c.patch.stride);
  save_patchset(out_dir(c), ps, m.source.empty() ? c.data.kind : m.source);
  log_info("extract: wrote patchset.pvtn + coords + meta (" +
           std::to_string(ps.patches.size()) + " patches)");
}

void write_metrics_csv(const fs::path& path, const std::vector<EpochMetrics>& metrics) {
  std::vector<std::vector<double>> rows;
  for (const EpochMetrics& m : metrics)
    rows.push_back({static_cast<double>(m.epoch), m.beta, m.vae_loss, m.psi,
                    m.total_loss, m.wall_ms});
  write_csv(path.string(), {"epoch", "beta", "vae_loss", "psi", "total_loss", "wall_ms"},
            rows);
}

void cmd_train(const RunConfig& cfg, const json& args) {
  check_keys(args, "train args", {"patches"});
  PatchSet ps = acquire_patches(cfg, args);
  ModelParams init = fresh_model(cfg);
  TrainConfig tc = cfg.train;
  tc.physics = cfg.physics;
  tc.snapshot_denoise = cfg.segment.denoise;
  fs::path dir = out_dir(cfg);
  TrainResult res = train(ps, init, tc, dir.string());
  write_metrics_csv(dir / "metrics.csv", res.metrics);
  LatentField field = embed(res.params, ps);
  write_tensor((dir / "field.pvtn").string(), field_tensor(field));
  log_info("train: wrote checkpoint.pvae, metrics.csv, field.pvtn");
}

// accepts both plain model files and trainer checkpoints
ModelParams load_any_model(const std::string& path) {
  std::vector<unsigned char> extra;  // trainer state, ignored here
  return load_model(path, &extra);
}

void cmd_embed(const RunConfig& cfg, const json& args) {
  check_keys(args, "embed args", {"checkpoint", "patches"});
  ModelParams params = load_any_model(req_str(args, "checkpoint", "embed"));
  PatchSet ps = load_patchset(req_str(args, "patches", "embed"));
  LatentField field = embed(params, ps);
  fs::path dir = out_dir(cfg);
  write_tensor((dir / "field.pvtn").string(), field_tensor(field));
  log_info("embed: wrote field.pvtn");
}

void cmd_segment(const RunConfig& cfg, const json& args) {
  check_keys(args, "segment args", {"field"});
  LatentField field = load_field(req_str(args, "field", "segment"));
  SegmentResult seg = segment_pipeline(field, cfg.segment.denoise,
                                       cfg.segment.mode == "binary",
                                       cfg.segment.n_classes);
  fs::path dir = out_dir(cfg);
  for (std::size_t j = 0; j < seg.per_map.size(); ++j) {
    Array gray = labels_to_gray(seg.per_map[j].labels, seg.per_map[j].n_classes);
    for (double& v : gray.data) v /= 255.0;
    write_pgm((dir / ("labels_z" + std::to_string(j) + ".pgm")).string(), gray);
    write_pgm((dir / ("overlay_z" + std::to_string(j) + ".pgm")).string(),
              boundary_overlay(field.maps[j], seg.per_map[j].labels));
  }
  log_info("segment: wrote labels_z*.pgm and overlay_z*.pgm");
}

void cmd_metrics(const RunConfig& cfg, const json& args) {
  check_keys(args, "metrics args", {"field", "truth"});
  LatentField field = load_field(req_str(args, "field", "metrics"));

  Array truth;
  int n_truth = 0;
  bool have_truth = args.contains("truth");
  if (have_truth)
    truth = gray_to_labels(read_pgm(req_str(args, "truth", "metrics")), n_truth);

  SegmentResult seg = segment_pipeline(field, cfg.segment.denoise,
                                       cfg.segment.mode == "binary",
                                       cfg.segment.n_classes);
  std::vector<std::string> header = {"map", "sl1", "sl2"};
  if (have_truth)
    for (int t = 0; t < n_truth; ++t) header.push_back("iou_" + std::to_string(t));
  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < field.maps.size(); ++j) {
    std::vector<double> row = {static_cast<double>(j),
                               field_psi(field.maps[j], cfg.physics, PhysKind::SL1),
                               field_psi(field.maps[j], cfg.physics, PhysKind::SL2)};
    if (have_truth) {
      std::vector<double> iou = best_iou(seg.per_map[j].labels,
                                         seg.per_map[j].n_classes, truth, n_truth);
      row.insert(row.end(), iou.begin(), iou.end());
    }
    rows.push_back(std::move(row));
  }
  fs::path dir = out_dir(cfg);
  write_csv((dir / "field_metrics.csv").string(), header, rows);
  log_info("metrics: wrote field_metrics.csv");
}

void cmd_manifold(const RunConfig& cfg, const json& args) {
  check_keys(args, "manifold args", {"checkpoint", "lo", "hi", "m"});
  ModelParams params = load_any_model(req_str(args, "checkpoint", "manifold"));
  double lo = args.value("lo", -3.0), hi = args.value("hi", 3.0);
  int m = args.value("m", 12);
  Array tiling = decode_manifold(params, lo, hi, m);
  fs::path dir = out_dir(cfg);
  write_pgm((dir / "manifold.pgm").string(), tiling);
  log_info("manifold: wrote manifold.pgm");
}

void cmd_render(const RunConfig& cfg, const json& args) {
  check_keys(args, "render args", {"input", "out"});
  Array t = read_tensor(req_str(args, "input", "render"));
  if (t.ndim() != 2) fail(ErrKind::Format, "render: tensor must be 2D");
  std::string name = args.value("out", std::string("render.pgm"));
  fs::path dir = out_dir(cfg);
  write_pgm((dir / name).string(), minmax_unit(t));
  log_info("render: wrote " + name);
}

}  // namespace

void run_command(const std::string& command, const json& request) {
  check_keys(request, "request", {"config", "args"});
  RunConfig cfg = parse_run_config(request.value("config", json::object()));
  json args = request.value("args", json::object());
  if (!args.is_object()) fail(ErrKind::Config, "request args must be a JSON object");

  if (command == "synth") cmd_synth(cfg, args);
  else if (command == "extract") cmd_extract(cfg, args);
  else if (command == "train") cmd_train(cfg, args);
  else if (command == "embed") cmd_embed(cfg, args);
  else if (command == "segment") cmd_segment(cfg, args);
  else if (command == "metrics") cmd_metrics(cfg, args);
  else if (command == "manifold") cmd_manifold(cfg, args);
  else if (command == "render") cmd_render(cfg, args);
  else fail(ErrKind::Config, "unknown command \"" + command + "\"");
}

}  // namespace pv
