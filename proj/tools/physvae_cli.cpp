// physvae command-line interface. All work happens behind the C API; this
// translator parses flags, merges them over the JSON config, and maps
// pv_status codes to exit codes with the machine-parsable "ERROR <code>:"
// prefix on standard error.

#include <CLI11.hpp>
#include <json.hpp>
#include <physvae/physvae.h>

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

namespace {

using nlohmann::json;

int emit_error(int code, const std::string& msg) {
  std::fprintf(stderr, "ERROR %d: %s\n", code, msg.c_str());
  return code;
}

struct Options {
  // shared
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  // config overrides
  std::optional<std::string> kind;
  std::optional<int> side, n_phases, n_classes;
  std::optional<std::string> seg_mode;
  std::optional<double> seg_denoise;
  // command arguments
  std::optional<std::string> input, patches, checkpoint, field, truth, out_name;
  std::optional<double> lo, hi;
  std::optional<int> m;
};

void add_common(CLI::App* cmd, Options& o, bool config_required) {
  auto* opt = cmd->add_option("--config", o.config_path, "JSON run configuration file");
  if (config_required) opt->required();
  cmd->add_option("--seed", o.seed,
                  "override the generator and training seed from the config");
  cmd->add_option("--out", o.out, "override the output directory");
}

// load --config (if any) and apply the flag overrides on top
json build_config(const Options& o, std::string& err) {
  json cfg = json::object();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) {
      err = "cannot read config file " + o.config_path;
      return cfg;
    }
    cfg = json::parse(is, nullptr, false);
    if (cfg.is_discarded()) {
      err = o.config_path + ": not valid JSON";
      return cfg;
    }
    if (!cfg.is_object()) {
      err = o.config_path + ": config root must be a JSON object";
      return cfg;
    }
  }
  if (o.seed) {
    cfg["data"]["seed"] = *o.seed;
    cfg["train"]["seed"] = *o.seed;
  }
  if (o.out) cfg["output"] = *o.out;
  if (o.kind) cfg["data"]["kind"] = *o.kind;
  if (o.side) cfg["data"]["side"] = *o.side;
  if (o.n_phases) cfg["data"]["n_phases"] = *o.n_phases;
  if (o.seg_mode) cfg["segment"]["mode"] = *o.seg_mode;
  if (o.n_classes) cfg["segment"]["n_classes"] = *o.n_classes;
  if (o.seg_denoise) cfg["segment"]["denoise"] = *o.seg_denoise;
  return cfg;
}

json build_args(const Options& o) {
  json args = json::object();
  if (o.input) args["input"] = *o.input;
  if (o.patches) args["patches"] = *o.patches;
  if (o.checkpoint) args["checkpoint"] = *o.checkpoint;
  if (o.field) args["field"] = *o.field;
  if (o.truth) args["truth"] = *o.truth;
  if (o.out_name) args["out"] = *o.out_name;
  if (o.lo) args["lo"] = *o.lo;
  if (o.hi) args["hi"] = *o.hi;
  if (o.m) args["m"] = *o.m;
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physvae: shift-invariant VAE training with physics-constrained "
               "latent maps, and latent-field segmentation"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic micrograph, truth mask and metadata");
  synth->add_option("--kind", o.kind, "generator: two-phase or multiphase");
  synth->add_option("--side", o.side, "image side in pixels (>= 128)");
  synth->add_option("--n-phases", o.n_phases, "phase count for multiphase (2-4)");
  add_common(synth, o, false);

  auto* extract = app.add_subcommand(
      "extract", "Slice a micrograph into a normalized patch grid");
  extract->add_option("--input", o.input, "input micrograph PGM (default: config data)");
  add_common(extract, o, false);

  auto* train = app.add_subcommand(
      "train", "Train the model; writes checkpoint, metrics CSV and snapshots");
  train->add_option("--patches", o.patches,
                    "precomputed patchset.pvtn (default: generated from config data)");
  add_common(train, o, true);

  auto* embed = app.add_subcommand(
      "embed", "Write the latent content field of a patch set under a checkpoint");
  embed->add_option("--checkpoint", o.checkpoint, "model checkpoint file")->required();
  embed->add_option("--patches", o.patches, "patchset.pvtn file")->required();
  add_common(embed, o, false);

  auto* segment = app.add_subcommand(
      "segment", "Segment a latent field into label maps with boundary overlays");
  segment->add_option("--field", o.field, "latent field tensor (field.pvtn)")->required();
  segment->add_option("--mode", o.seg_mode, "binary or multi");
  segment->add_option("--n-classes", o.n_classes, "class count for multi mode (2-4)");
  segment->add_option("--denoise", o.seg_denoise, "bilateral denoise factor (>= 0)");
  add_common(segment, o, false);

  auto* metrics = app.add_subcommand(
      "metrics", "Compute full-field SL1/SL2 and, with a truth mask, per-class IoU");
  metrics->add_option("--field", o.field, "latent field tensor (field.pvtn)")->required();
  metrics->add_option("--truth", o.truth, "ground-truth label PGM at grid resolution");
  add_common(metrics, o, false);

  auto* manifold = app.add_subcommand(
      "manifold", "Render the decoder's latent manifold tiling");
  manifold->add_option("--checkpoint", o.checkpoint, "model checkpoint file")->required();
  manifold->add_option("--lo", o.lo, "lower latent bound (default -3)");
  manifold->add_option("--hi", o.hi, "upper latent bound (default 3)");
  manifold->add_option("--m", o.m, "tiles per side (default 12)");
  add_common(manifold, o, false);

  auto* render = app.add_subcommand(
      "render", "Convert a 2D PVTN tensor to a min-max scaled PGM");
  render->add_option("--input", o.input, "input .pvtn file")->required();
  render->add_option("--out-name", o.out_name, "output file name (default render.pgm)");
  add_common(render, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::ostringstream msg;
    int rc = app.exit(e, msg, msg);
    (void)rc;
    return emit_error(PV_ERR_CONFIG, msg.str());
  }

  static const std::pair<CLI::App*, const char*> commands[] = {
      {synth, "synth"},       {extract, "extract"}, {train, "train"},
      {embed, "embed"},       {segment, "segment"}, {metrics, "metrics"},
      {manifold, "manifold"}, {render, "render"}};
  for (const auto& [cmd, name] : commands) {
    if (!cmd->parsed()) continue;
    std::string err;
    json cfg = build_config(o, err);
    if (!err.empty()) return emit_error(PV_ERR_IO, err);
    json request = {{"config", cfg}, {"args", build_args(o)}};
    pv_status st = pv_run(name, request.dump().c_str());
    if (st != PV_OK) return emit_error(st, pv_error_message());
    return 0;
  }
  return emit_error(PV_ERR_CONFIG, "no command given");
}
