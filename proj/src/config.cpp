#include "slotgen/harness/config.hpp"

#include "slotgen/core/errors.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace slotgen::harness {

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
  return s;
}

std::string fmt_real(real v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Setter {
  std::function<void(const std::string&)> set;
};

}  // namespace

model::ModelConfig ExperimentConfig::to_model_config() const {
  model::ModelConfig mc;
  mc.encoder = {dataset.spec.image_size, model.encoder_patch, model.d_input,
                model.encoder_channels};
  mc.slots = {model.n_slots, model.slot_dim, model.d_input, model.iterations,
              2 * model.slot_dim};
  model::RegisterMode mode;
  if (model.register_mode == "fixed") mode = model::RegisterMode::kFixed;
  else if (model.register_mode == "learnable") mode = model::RegisterMode::kLearnable;
  else throw ValidationError("register_mode must be fixed or learnable");
  mc.registers = {model.register_count, model.slot_dim, mode, model.register_seed};
  mc.denoiser = {dataset.spec.image_size, 3,        model.denoiser_patch,
                 model.denoiser_channels, model.denoiser_levels, model.denoiser_heads,
                 model.slot_dim,          16,       model.n_slots};
  mc.schedule = {model.gamma_max, model.gamma_min};
  mc.init_seed = model.init_seed;
  return mc;
}

train::TrainStepConfig ExperimentConfig::to_train_config() const {
  train::TrainStepConfig tc;
  tc.objective.lambda_cl = objective.lambda_cl;
  tc.objective.negative_ratio = objective.negative_ratio;
  tc.objective.cond_dropout = objective.cond_dropout;
  if (objective.freeze == "none") tc.freeze = train::FreezeMode::kNone;
  else if (objective.freeze == "non_cross_attention")
    tc.freeze = train::FreezeMode::kNonCrossAttention;
  else throw ValidationError("freeze must be none or non_cross_attention");
  tc.optimizer.lr = optimizer.lr;
  tc.optimizer.warmup_steps = optimizer.warmup_steps;
  tc.optimizer.clip_norm = optimizer.clip_norm;
  tc.optimizer.weight_decay = optimizer.weight_decay;
  tc.batch_size = optimizer.batch_size;
  tc.schedule = {model.gamma_max, model.gamma_min};
  return tc;
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "format_version = " << c.format_version << "\n\n";
  os << "[dataset]\n";
  os << "image_size = " << c.dataset.spec.image_size << "\n";
  os << "count = " << c.dataset.count << "\n";
  os << "eval_count = " << c.dataset.eval_count << "\n";
  os << "seed = " << c.dataset.seed << "\n";
  os << "object_count_min = " << c.dataset.spec.object_count_min << "\n";
  os << "object_count_max = " << c.dataset.spec.object_count_max << "\n";
  os << "shapes =";
  for (auto s : c.dataset.spec.shape_vocabulary) os << " " << scene::shape_name(s);
  os << "\ncolors =";
  for (const auto& col : c.dataset.spec.color_vocabulary)
    os << " " << fmt_real(col[0]) << ":" << fmt_real(col[1]) << ":" << fmt_real(col[2]);
  os << "\nsize_min = " << fmt_real(c.dataset.spec.size_min) << "\n";
  os << "size_max = " << fmt_real(c.dataset.spec.size_max) << "\n";
  os << "background = "
     << (c.dataset.spec.background_mode == scene::Background::kFlat ? "flat" : "textured")
     << "\n";
  os << "overlap_allowed = " << (c.dataset.spec.overlap_allowed ? 1 : 0) << "\n\n";

  os << "[model]\n";
  os << "n_slots = " << c.model.n_slots << "\n";
  os << "slot_dim = " << c.model.slot_dim << "\n";
  os << "iterations = " << c.model.iterations << "\n";
  os << "encoder_patch = " << c.model.encoder_patch << "\n";
  os << "encoder_channels = " << c.model.encoder_channels << "\n";
  os << "d_input = " << c.model.d_input << "\n";
  os << "register_mode = " << c.model.register_mode << "\n";
  os << "register_count = " << c.model.register_count << "\n";
  os << "register_seed = " << c.model.register_seed << "\n";
  os << "denoiser_patch = " << c.model.denoiser_patch << "\n";
  os << "denoiser_channels = " << c.model.denoiser_channels << "\n";
  os << "denoiser_levels = " << c.model.denoiser_levels << "\n";
  os << "denoiser_heads = " << c.model.denoiser_heads << "\n";
  os << "gamma_max = " << fmt_real(c.model.gamma_max) << "\n";
  os << "gamma_min = " << fmt_real(c.model.gamma_min) << "\n";
  os << "init_seed = " << c.model.init_seed << "\n\n";

  os << "[objective]\n";
  os << "lambda_cl = " << fmt_real(c.objective.lambda_cl) << "\n";
  os << "negative_ratio = " << fmt_real(c.objective.negative_ratio) << "\n";
  os << "cond_dropout = " << fmt_real(c.objective.cond_dropout) << "\n";
  os << "freeze = " << c.objective.freeze << "\n\n";

  os << "[optimizer]\n";
  os << "lr = " << fmt_real(c.optimizer.lr) << "\n";
  os << "warmup_steps = " << c.optimizer.warmup_steps << "\n";
  os << "clip_norm = " << fmt_real(c.optimizer.clip_norm) << "\n";
  os << "weight_decay = " << fmt_real(c.optimizer.weight_decay) << "\n";
  os << "total_steps = " << c.optimizer.total_steps << "\n";
  os << "batch_size = " << c.optimizer.batch_size << "\n";
  os << "checkpoint_every = " << c.optimizer.checkpoint_every << "\n";
  os << "log_every = " << c.optimizer.log_every << "\n\n";

  os << "[eval]\n";
  os << "cfg_w = " << fmt_real(c.eval.cfg_w) << "\n";
  os << "sample_steps = " << c.eval.sample_steps << "\n";
  os << "eval_seeds = " << c.eval.eval_seeds << "\n";
  os << "metrics = " << c.eval.metrics << "\n\n";

  os << "[seeds]\n";
  os << "train = " << c.seeds.train << "\n";
  os << "eval = " << c.seeds.eval << "\n";
  return os.str();
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::map<std::string, Setter> keys;
  auto add_int = [&](const std::string& k, int* dst) {
    keys[k] = {[dst](const std::string& v) { *dst = std::stoi(v); }};
  };
  auto add_u64 = [&](const std::string& k, uint64_t* dst) {
    keys[k] = {[dst](const std::string& v) { *dst = std::stoull(v); }};
  };
  auto add_real = [&](const std::string& k, real* dst) {
    keys[k] = {[dst](const std::string& v) { *dst = std::stod(v); }};
  };
  auto add_str = [&](const std::string& k, std::string* dst) {
    keys[k] = {[dst](const std::string& v) { *dst = v; }};
  };

  keys["format_version"] = {[&c](const std::string& v) {
    c.format_version = std::stoi(v);
    if (c.format_version != 1)
      throw ValidationError("unsupported config format_version: " + v);
  }};
  add_int("dataset.image_size", &c.dataset.spec.image_size);
  add_int("dataset.count", &c.dataset.count);
  add_int("dataset.eval_count", &c.dataset.eval_count);
  add_u64("dataset.seed", &c.dataset.seed);
  add_int("dataset.object_count_min", &c.dataset.spec.object_count_min);
  add_int("dataset.object_count_max", &c.dataset.spec.object_count_max);
  keys["dataset.shapes"] = {[&c](const std::string& v) {
    c.dataset.spec.shape_vocabulary.clear();
    std::istringstream ss(v);
    std::string tok;
    while (ss >> tok) c.dataset.spec.shape_vocabulary.push_back(scene::shape_from_name(tok));
  }};
  keys["dataset.colors"] = {[&c](const std::string& v) {
    c.dataset.spec.color_vocabulary.clear();
    std::istringstream ss(v);
    std::string tok;
    while (ss >> tok) {
      std::array<real, 3> col{};
      if (std::sscanf(tok.c_str(), "%lf:%lf:%lf", &col[0], &col[1], &col[2]) != 3)
        throw ValidationError("malformed color: " + tok);
      c.dataset.spec.color_vocabulary.push_back(col);
    }
  }};
  add_real("dataset.size_min", &c.dataset.spec.size_min);
  add_real("dataset.size_max", &c.dataset.spec.size_max);
  keys["dataset.background"] = {[&c](const std::string& v) {
    if (v == "flat") c.dataset.spec.background_mode = scene::Background::kFlat;
    else if (v == "textured") c.dataset.spec.background_mode = scene::Background::kTextured;
    else throw ValidationError("background must be flat or textured");
  }};
  keys["dataset.overlap_allowed"] = {[&c](const std::string& v) {
    c.dataset.spec.overlap_allowed = v == "1" || v == "true";
  }};

  add_int("model.n_slots", &c.model.n_slots);
  add_int("model.slot_dim", &c.model.slot_dim);
  add_int("model.iterations", &c.model.iterations);
  add_int("model.encoder_patch", &c.model.encoder_patch);
  add_int("model.encoder_channels", &c.model.encoder_channels);
  add_int("model.d_input", &c.model.d_input);
  add_str("model.register_mode", &c.model.register_mode);
  add_int("model.register_count", &c.model.register_count);
  add_u64("model.register_seed", &c.model.register_seed);
  add_int("model.denoiser_patch", &c.model.denoiser_patch);
  add_int("model.denoiser_channels", &c.model.denoiser_channels);
  add_int("model.denoiser_levels", &c.model.denoiser_levels);
  add_int("model.denoiser_heads", &c.model.denoiser_heads);
  add_real("model.gamma_max", &c.model.gamma_max);
  add_real("model.gamma_min", &c.model.gamma_min);
  add_u64("model.init_seed", &c.model.init_seed);

  add_real("objective.lambda_cl", &c.objective.lambda_cl);
  add_real("objective.negative_ratio", &c.objective.negative_ratio);
  add_real("objective.cond_dropout", &c.objective.cond_dropout);
  add_str("objective.freeze", &c.objective.freeze);

  add_real("optimizer.lr", &c.optimizer.lr);
  add_int("optimizer.warmup_steps", &c.optimizer.warmup_steps);
  add_real("optimizer.clip_norm", &c.optimizer.clip_norm);
  add_real("optimizer.weight_decay", &c.optimizer.weight_decay);
  add_int("optimizer.total_steps", &c.optimizer.total_steps);
  add_int("optimizer.batch_size", &c.optimizer.batch_size);
  add_int("optimizer.checkpoint_every", &c.optimizer.checkpoint_every);
  add_int("optimizer.log_every", &c.optimizer.log_every);

  add_real("eval.cfg_w", &c.eval.cfg_w);
  add_int("eval.sample_steps", &c.eval.sample_steps);
  add_int("eval.eval_seeds", &c.eval.eval_seeds);
  add_str("eval.metrics", &c.eval.metrics);

  add_u64("seeds.train", &c.seeds.train);
  add_u64("seeds.eval", &c.seeds.eval);

  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key =
        (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end())
      throw ValidationError("unknown config key: " + key);
    it->second.set(val);
  }
  c.dataset.spec.validate();
  if (c.optimizer.total_steps < 0 || c.optimizer.batch_size < 1)
    throw ValidationError("optimizer steps/batch out of range");
  if (c.objective.lambda_cl < 0) throw ValidationError("lambda_cl must be >= 0");
  return c;
}

ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream ss(text);
  return parse_config(ss);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config: " + path);
  return parse_config(f);
}

}  // namespace slotgen::harness
