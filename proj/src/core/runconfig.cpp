#include "runconfig.hpp"

#include <set>

namespace pv {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { fail(ErrKind::Config, "config: " + msg); }

void check_keys(const json& j, const std::string& ctx, std::set<std::string> allowed) {
  if (!j.is_object()) bad(ctx + " must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) bad("unknown key \"" + item.key() + "\" in " + ctx);
}

double num(const json& j, const std::string& ctx) {
  if (!j.is_number()) bad(ctx + " must be a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& ctx) {
  if (!j.is_number_integer()) bad(ctx + " must be an integer");
  return j.get<int>();
}

std::uint64_t u64(const json& j, const std::string& ctx) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) bad(ctx + " must be an integer");
  if (j.is_number_integer() && j.get<std::int64_t>() < 0) bad(ctx + " must be >= 0");
  return j.get<std::uint64_t>();
}

std::string str(const json& j, const std::string& ctx) {
  if (!j.is_string()) bad(ctx + " must be a string");
  return j.get<std::string>();
}

std::vector<int> int_list(const json& j, const std::string& ctx) {
  if (!j.is_array()) bad(ctx + " must be an array of integers");
  std::vector<int> out;
  for (const auto& e : j) out.push_back(integer(e, ctx + " entry"));
  return out;
}

template <class T>
void opt(const json& j, const char* key, T& dst,
         T (*conv)(const json&, const std::string&), const std::string& ctx) {
  if (j.contains(key)) dst = conv(j.at(key), ctx + "." + key);
}

void parse_data(const json& j, DataConfig& d) {
  check_keys(j, "data",
             {"kind", "path", "side", "seed", "noise_sigma", "boundary_harmonics",
              "freq_a", "theta_a_deg", "freq_b", "theta_b_deg", "n_phases", "freq"});
  opt(j, "kind", d.kind, str, "data");
  if (d.kind != "two-phase" && d.kind != "multiphase" && d.kind != "file")
    bad("data.kind must be \"two-phase\", \"multiphase\" or \"file\"");
  opt(j, "path", d.path, str, "data");
  if (d.kind == "file" && d.path.empty()) bad("data.kind \"file\" requires data.path");
  if (j.contains("side")) {
    int s = integer(j.at("side"), "data.side");
    if (s < 16) bad("data.side must be >= 16");
    d.side = static_cast<std::size_t>(s);
  }
  opt(j, "seed", d.seed, u64, "data");
  if (j.contains("noise_sigma")) {
    double s = num(j.at("noise_sigma"), "data.noise_sigma");
    if (s < 0) bad("data.noise_sigma must be >= 0");
    d.two_phase.noise_sigma = d.multiphase.noise_sigma = s;
  }
  if (j.contains("boundary_harmonics")) {
    d.two_phase.boundary_harmonics = integer(j.at("boundary_harmonics"), "data.boundary_harmonics");
    if (d.two_phase.boundary_harmonics < 1) bad("data.boundary_harmonics must be >= 1");
  }
  if (j.contains("freq_a")) d.two_phase.freq_a = num(j.at("freq_a"), "data.freq_a");
  if (j.contains("freq_b")) d.two_phase.freq_b = num(j.at("freq_b"), "data.freq_b");
  if (j.contains("theta_a_deg"))
    d.two_phase.theta_a = num(j.at("theta_a_deg"), "data.theta_a_deg") * M_PI / 180.0;
  if (j.contains("theta_b_deg"))
    d.two_phase.theta_b = num(j.at("theta_b_deg"), "data.theta_b_deg") * M_PI / 180.0;
  if (j.contains("n_phases")) {
    d.multiphase.n_phases = integer(j.at("n_phases"), "data.n_phases");
    if (d.multiphase.n_phases < 2 || d.multiphase.n_phases > 4)
      bad("data.n_phases must be in [2, 4]");
  }
  if (j.contains("freq")) d.multiphase.freq = num(j.at("freq"), "data.freq");
}

void parse_patch(const json& j, PatchConfig& p) {
  check_keys(j, "patch", {"side", "stride"});
  opt(j, "side", p.side, integer, "patch");
  opt(j, "stride", p.stride, integer, "patch");
  if (p.side < 3) bad("patch.side must be >= 3");
  if (p.stride < 1) bad("patch.stride must be >= 1");
}

void parse_model(const json& j, ModelConfig& m) {
  check_keys(j, "model", {"n_content", "k", "enc_hidden", "dec_hidden", "init_seed"});
  opt(j, "n_content", m.n_content, integer, "model");
  if (m.n_content < 1) bad("model.n_content must be >= 1");
  opt(j, "k", m.k, num, "model");
  if (m.k <= 0.0 || m.k > 1.0) bad("model.k must be in (0, 1]");
  opt(j, "enc_hidden", m.enc_hidden, int_list, "model");
  opt(j, "dec_hidden", m.dec_hidden, int_list, "model");
  for (int h : m.enc_hidden)
    if (h < 1) bad("model.enc_hidden entries must be >= 1");
  for (int h : m.dec_hidden)
    if (h < 1) bad("model.dec_hidden entries must be >= 1");
  if (m.enc_hidden.empty() || m.dec_hidden.empty())
    bad("model hidden layer lists must be nonempty");
  opt(j, "init_seed", m.init_seed, u64, "model");
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j, "train",
             {"epochs", "block_h", "block_w", "beta_start", "beta_end", "ramp_epochs",
              "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "seed",
              "snapshot_every", "snapshot_denoise"});
  opt(j, "epochs", t.epochs, integer, "train");
  if (j.contains("block_h")) {
    int b = integer(j.at("block_h"), "train.block_h");
    if (b < 1) bad("train.block_h must be >= 1");
    t.block_h = static_cast<std::size_t>(b);
  }
  if (j.contains("block_w")) {
    int b = integer(j.at("block_w"), "train.block_w");
    if (b < 1) bad("train.block_w must be >= 1");
    t.block_w = static_cast<std::size_t>(b);
  }
  opt(j, "beta_start", t.schedule.beta_start, num, "train");
  opt(j, "beta_end", t.schedule.beta_end, num, "train");
  opt(j, "ramp_epochs", t.schedule.ramp_epochs, integer, "train");
  opt(j, "learning_rate", t.optimizer.learning_rate, num, "train");
  opt(j, "adam_beta1", t.optimizer.beta1, num, "train");
  opt(j, "adam_beta2", t.optimizer.beta2, num, "train");
  opt(j, "adam_eps", t.optimizer.eps, num, "train");
  opt(j, "seed", t.seed, u64, "train");
  opt(j, "snapshot_every", t.snapshot_every, integer, "train");
  opt(j, "snapshot_denoise", t.snapshot_denoise, num, "train");
}

void parse_physics(const json& j, PhysicsLossConfig& p) {
  check_keys(j, "physics",
             {"kind", "w", "denoise", "denoise_value", "central_fx", "central_fy",
              "map_mask", "sign", "sl1_reduction"});
  if (j.contains("kind")) {
    std::string k = str(j.at("kind"), "physics.kind");
    if (k == "none") p.kind = PhysKind::None;
    else if (k == "sl1") p.kind = PhysKind::SL1;
    else if (k == "sl2") p.kind = PhysKind::SL2;
    else bad("physics.kind must be \"none\", \"sl1\" or \"sl2\"");
  }
  opt(j, "w", p.w, num, "physics");
  if (j.contains("denoise")) {
    std::string d = str(j.at("denoise"), "physics.denoise");
    if (d == "fixed") p.denoise = DenoiseMode::Fixed;
    else if (d == "auto_std") p.denoise = DenoiseMode::AutoStd;
    else bad("physics.denoise must be \"fixed\" or \"auto_std\"");
  }
  opt(j, "denoise_value", p.denoise_value, num, "physics");
  opt(j, "central_fx", p.central_fx, num, "physics");
  opt(j, "central_fy", p.central_fy, num, "physics");
  opt(j, "map_mask", p.map_mask, int_list, "physics");
  if (j.contains("sign")) {
    std::string s = str(j.at("sign"), "physics.sign");
    if (s == "minimize") p.sign = PhysSign::Minimize;
    else if (s == "maximize") p.sign = PhysSign::Maximize;
    else bad("physics.sign must be \"minimize\" or \"maximize\"");
  }
  if (j.contains("sl1_reduction")) {
    std::string r = str(j.at("sl1_reduction"), "physics.sl1_reduction");
    if (r == "mean") p.sl1_reduction = Sl1Reduction::Mean;
    else if (r == "sum") p.sl1_reduction = Sl1Reduction::Sum;
    else bad("physics.sl1_reduction must be \"mean\" or \"sum\"");
  }
}

void parse_segment(const json& j, SegmentConfig& s) {
  check_keys(j, "segment", {"denoise", "mode", "n_classes"});
  opt(j, "denoise", s.denoise, num, "segment");
  if (s.denoise < 0) bad("segment.denoise must be >= 0");
  opt(j, "mode", s.mode, str, "segment");
  if (s.mode != "binary" && s.mode != "multi")
    bad("segment.mode must be \"binary\" or \"multi\"");
  opt(j, "n_classes", s.n_classes, integer, "segment");
  if (s.n_classes < 2 || s.n_classes > 4) bad("segment.n_classes must be in [2, 4]");
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  check_keys(j, "config root",
             {"data", "patch", "model", "train", "physics", "segment", "output"});
  RunConfig cfg;
  if (j.contains("data")) parse_data(j.at("data"), cfg.data);
  if (j.contains("patch")) parse_patch(j.at("patch"), cfg.patch);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("physics")) parse_physics(j.at("physics"), cfg.physics);
  if (j.contains("segment")) parse_segment(j.at("segment"), cfg.segment);
  if (j.contains("output")) cfg.output = str(j.at("output"), "output");
  if (cfg.output.empty()) bad("output must be a nonempty path");
  // keep the generators' majority-vote mask at the extraction resolution
  cfg.data.two_phase.patch_side = cfg.data.multiphase.patch_side = cfg.patch.side;
  cfg.data.two_phase.stride = cfg.data.multiphase.stride = cfg.patch.stride;
  return cfg;
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrKind::Config, origin + ": not valid JSON");
  return parse_run_config(j);
}

}  // namespace pv
