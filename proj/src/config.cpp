#include "vcediff/config.hpp"

#include <fstream>
#include <set>

#include "vcediff/errors.hpp"

namespace vcediff {

using nlohmann::json;

void OptimConfig::validate() const {
  adam.validate();
  schedule.validate();
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(lr_backbone > 0.0) || !(lr_head > 0.0)) throw ConfigError("optimizer learning rates must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("optimizer.ema_decay must be in [0, 1)");
  if (epochs == 0) throw ConfigError("optimizer.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("optimizer.batch_size must be >= 1");
}

void DataConfig::validate() const {
  if (dataset.empty()) synth.validate();
  augment.validate();
  if (!(mixup_alpha >= 0.0)) throw ConfigError("data.mixup_alpha must be >= 0");
  if (sampler != "sqrt" && sampler != "uniform") throw ConfigError("data.sampler must be \"sqrt\" or \"uniform\"");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  optim.validate();
  data.validate();
  temporal.validate();
  if (classification_loss != "asymmetric_focal" && classification_loss != "bce") {
    throw ConfigError("classification_loss must be \"asymmetric_focal\" or \"bce\"");
  }
  if (!data.dataset.empty() || data.synth.image_size == model.image_size) return;
  throw ConfigError("data.synth.image_size (" + std::to_string(data.synth.image_size) +
                    ") must equal model.image_size (" + std::to_string(model.image_size) + ")");
}

namespace {

/// Reads keys of one JSON object and rejects the ones nobody asked for.
class Section {
public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, std::uint64_t& out, int) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  const json* section(const char* key) { return take(key); }
  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    return key ? p + "." + key : p;
  }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key " + where(it.key().c_str()));
    }
  }

private:
  const json* take(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_model(const json& j, const std::string& path, ModelConfig& m) {
  Section s(j, path);
  s.read("image_size", m.image_size);
  s.read("patch_size", m.patch_size);
  s.read("depth", m.depth);
  s.read("model_dim", m.model_dim);
  s.read("heads", m.heads);
  s.read("feature_dim", m.feature_dim);
  s.read("reduction", m.reduction);
  s.read("dropout", m.dropout_p);
  s.read("lambda_init", m.lambda_init);
  s.read("tau_init", m.tau_init);
  s.read("tau_cap", m.tau_cap);
  s.read("scale_attention_output", m.scale_attention_output);
  s.finish();
}

json model_json(const ModelConfig& m) {
  return {{"image_size", m.image_size}, {"patch_size", m.patch_size}, {"depth", m.depth},
          {"model_dim", m.model_dim},   {"heads", m.heads},           {"feature_dim", m.feature_dim},
          {"reduction", m.reduction},   {"dropout", m.dropout_p},     {"lambda_init", m.lambda_init},
          {"tau_init", m.tau_init},     {"tau_cap", m.tau_cap},       {"scale_attention_output", m.scale_attention_output}};
}

void read_loss(const json& j, const std::string& path, LossConfig& l, std::string& kind) {
  Section s(j, path);
  s.read("kind", kind);
  s.read("gamma_pos", l.gamma_pos);
  s.read("gamma_neg", l.gamma_neg);
  s.read("label_smoothing", l.eps_smooth);
  s.read("contrastive_weight", l.contrastive_weight);
  s.read("pos_weight_min", l.pos_weight_min);
  s.read("pos_weight_max", l.pos_weight_max);
  s.read("margin", l.margin);
  s.finish();
}

void read_optim(const json& j, const std::string& path, OptimConfig& o) {
  Section s(j, path);
  s.read("beta1", o.adam.beta1);
  s.read("beta2", o.adam.beta2);
  s.read("eps", o.adam.eps);
  s.read("weight_decay", o.weight_decay);
  s.read("lr_backbone", o.lr_backbone);
  s.read("lr_head", o.lr_head);
  s.read("pct_start", o.schedule.pct_start);
  s.read("div_start", o.schedule.div_start);
  s.read("div_final", o.schedule.div_final);
  s.read("ema_decay", o.ema_decay);
  s.read("epochs", o.epochs);
  s.read("batch_size", o.batch_size);
  s.read("steps_per_epoch", o.steps_per_epoch);
  s.finish();
}

void read_augment(const json& j, const std::string& path, AugmentConfig& a) {
  Section s(j, path);
  s.read("crop_scale_min", a.crop_scale_min);
  s.read("crop_scale_max", a.crop_scale_max);
  s.read("hflip_p", a.hflip_p);
  s.read("vflip_p", a.vflip_p);
  s.read("rotation_deg", a.rotation_deg);
  s.read("brightness", a.brightness);
  s.read("contrast", a.contrast);
  s.read("erase_p", a.erase_p);
  s.read("erase_area_min", a.erase_area_min);
  s.read("erase_area_max", a.erase_area_max);
  s.finish();
}

json augment_json(const AugmentConfig& a) {
  return {{"crop_scale_min", a.crop_scale_min}, {"crop_scale_max", a.crop_scale_max}, {"hflip_p", a.hflip_p},
          {"vflip_p", a.vflip_p},               {"rotation_deg", a.rotation_deg},     {"brightness", a.brightness},
          {"contrast", a.contrast},             {"erase_p", a.erase_p},               {"erase_area_min", a.erase_area_min},
          {"erase_area_max", a.erase_area_max}};
}

void read_synth(const json& j, const std::string& path, SynthSpec& sp) {
  Section s(j, path);
  s.read("seed", sp.seed, 0);
  s.read("image_size", sp.image_size);
  s.read("train_videos", sp.train_videos);
  s.read("val_videos", sp.val_videos);
  s.read("test_videos", sp.test_videos);
  s.read("frames_per_video", sp.frames_per_video);
  s.read("mean_event_length", sp.mean_event_length);
  s.read("noise", sp.noise);
  s.read("amplitude", sp.amplitude);
  if (const json* prev = s.section("prevalence")) {
    Section p(*prev, s.child("prevalence"));
    for (std::size_t c = 0; c < kNumClasses; ++c) p.read(std::string(kLabelNames[c]).c_str(), sp.prevalence[c]);
    p.finish();
  }
  s.finish();
}

void read_data(const json& j, const std::string& path, DataConfig& d) {
  Section s(j, path);
  s.read("dataset", d.dataset);
  if (const json* sy = s.section("synth")) read_synth(*sy, s.child("synth"), d.synth);
  if (const json* au = s.section("augment")) read_augment(*au, s.child("augment"), d.augment);
  s.read("augment_enabled", d.augment_enabled);
  s.read("mixup_alpha", d.mixup_alpha);
  s.read("sampler", d.sampler);
  s.finish();
}

void read_temporal(const json& j, const std::string& path, TemporalConfig& t) {
  Section s(j, path);
  s.read("window", t.window);
  s.read("max_gap", t.max_gap);
  s.read("min_len", t.min_len);
  s.finish();
}

}  // namespace

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s = SynthSpec::desk_default();
  read_synth(j, "synth", s);
  s.validate();
  return s;
}

json synth_spec_to_json(const SynthSpec& s) {
  json prev = json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) prev[std::string(kLabelNames[c])] = s.prevalence[c];
  return {{"seed", s.seed},
          {"image_size", s.image_size},
          {"train_videos", s.train_videos},
          {"val_videos", s.val_videos},
          {"test_videos", s.test_videos},
          {"frames_per_video", s.frames_per_video},
          {"mean_event_length", s.mean_event_length},
          {"noise", s.noise},
          {"amplitude", s.amplitude},
          {"prevalence", prev}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section s(j, "");
  if (const json* m = s.section("model")) read_model(*m, "model", c.model);
  if (const json* l = s.section("loss")) read_loss(*l, "loss", c.loss, c.classification_loss);
  if (const json* o = s.section("optimizer")) read_optim(*o, "optimizer", c.optim);
  if (const json* d = s.section("data")) read_data(*d, "data", c.data);
  if (const json* t = s.section("temporal")) read_temporal(*t, "temporal", c.temporal);
  s.read("seed", c.seed, 0);
  s.read("output_dir", c.output_dir);
  s.finish();
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["model"] = model_json(c.model);
  j["loss"] = {{"kind", c.classification_loss},
               {"gamma_pos", c.loss.gamma_pos},
               {"gamma_neg", c.loss.gamma_neg},
               {"label_smoothing", c.loss.eps_smooth},
               {"contrastive_weight", c.loss.contrastive_weight},
               {"pos_weight_min", c.loss.pos_weight_min},
               {"pos_weight_max", c.loss.pos_weight_max},
               {"margin", c.loss.margin}};
  const auto& o = c.optim;
  j["optimizer"] = {{"beta1", o.adam.beta1},
                    {"beta2", o.adam.beta2},
                    {"eps", o.adam.eps},
                    {"weight_decay", o.weight_decay},
                    {"lr_backbone", o.lr_backbone},
                    {"lr_head", o.lr_head},
                    {"pct_start", o.schedule.pct_start},
                    {"div_start", o.schedule.div_start},
                    {"div_final", o.schedule.div_final},
                    {"ema_decay", o.ema_decay},
                    {"epochs", o.epochs},
                    {"batch_size", o.batch_size},
                    {"steps_per_epoch", o.steps_per_epoch}};
  j["data"] = {{"dataset", c.data.dataset},
               {"synth", synth_spec_to_json(c.data.synth)},
               {"augment", augment_json(c.data.augment)},
               {"augment_enabled", c.data.augment_enabled},
               {"mixup_alpha", c.data.mixup_alpha},
               {"sampler", c.data.sampler}};
  j["temporal"] = {{"window", c.temporal.window}, {"max_gap", c.temporal.max_gap}, {"min_len", c.temporal.min_len}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace vcediff
