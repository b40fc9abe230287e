#include "mammut/io/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mammut/errors.hpp"

namespace mammut::io {

void EvalConfig::validate() const {
  if (gallery == 0 || caption_examples == 0 || video_examples == 0 || batch == 0) {
    throw ConfigError("eval: sizes must be positive");
  }
  if (recall_ks.empty()) throw ConfigError("eval: recall_ks must not be empty");
  for (std::size_t k : recall_ks) {
    if (k == 0 || k > gallery) throw ConfigError(concat("eval: recall K ", k, " must be in [1, gallery]"));
  }
}

void RunConfig::validate() const {
  model.validate();
  training.validate();
  video.validate(model);
  eval.validate();
  if (training.data.scene.canvas != model.image_size) {
    throw ConfigError(concat("data.canvas ", training.data.scene.canvas, " must equal model.image_size ",
                             model.image_size));
  }
  if (checkpoint_every == 0) throw ConfigError("train.checkpoint_every must be positive");
}

namespace {

struct Entry {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

struct BadValue {
  std::string expected;
};

std::string format(std::size_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) throw BadValue{"a non-negative integer"};
  return v;
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) throw BadValue{"a number"};
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw BadValue{"true or false"};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string format_ks(const std::vector<std::size_t>& ks) {
  std::string out;
  for (std::size_t i = 0; i < ks.size(); ++i) out += (i ? "," : "") + std::to_string(ks[i]);
  return out;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) out.push_back(parse_size(part));
  return out;
}

std::string format_extent(const video::Extent& e) {
  return concat(e[0], "x", e[1], "x", e[2]);
}

video::Extent parse_extent(const std::string& s) {
  auto parts = split(s, 'x');
  if (parts.size() != 3) throw BadValue{"tubes as TxHxW/TxHxW/TxHxW;..."};
  return {parse_size(parts[0]), parse_size(parts[1]), parse_size(parts[2])};
}

std::string format_tubes(const std::vector<video::TubeSpec>& tubes) {
  std::string out;
  for (std::size_t i = 0; i < tubes.size(); ++i) {
    if (i) out += ";";
    out += format_extent(tubes[i].kernel) + "/" + format_extent(tubes[i].stride) + "/" +
           format_extent(tubes[i].offset);
  }
  return out;
}

std::vector<video::TubeSpec> parse_tubes(const std::string& s) {
  std::vector<video::TubeSpec> out;
  if (s.empty()) return out;
  for (const auto& spec : split(s, ';')) {
    auto parts = split(spec, '/');
    if (parts.size() != 3) throw BadValue{"tubes as kernel/stride/offset, each TxHxW, separated by ';'"};
    out.push_back({parse_extent(parts[0]), parse_extent(parts[1]), parse_extent(parts[2])});
  }
  return out;
}

#define MAMMUT_SIZE(KEY, FIELD, HELP)                                             \
  Entry {                                                                         \
    KEY, HELP, [](const RunConfig& c) { return format(c.FIELD); },                \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_size(v); }       \
  }
#define MAMMUT_DOUBLE(KEY, FIELD, HELP)                                           \
  Entry {                                                                         \
    KEY, HELP, [](const RunConfig& c) { return format(c.FIELD); },                \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(v); }     \
  }
#define MAMMUT_BOOL(KEY, FIELD, HELP)                                             \
  Entry {                                                                         \
    KEY, HELP, [](const RunConfig& c) { return format(c.FIELD); },                \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(v); }       \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      MAMMUT_SIZE("model.image_size", model.image_size, "square image side in pixels"),
      MAMMUT_SIZE("model.patch_size", model.patch_size, "patch side in pixels"),
      MAMMUT_SIZE("model.vision_layers", model.vision_layers, "encoder blocks"),
      MAMMUT_SIZE("model.vision_dim", model.vision_dim, "encoder width"),
      MAMMUT_SIZE("model.vision_heads", model.vision_heads, "encoder attention heads"),
      MAMMUT_SIZE("model.decoder_layers", model.decoder_layers, "decoder blocks"),
      MAMMUT_SIZE("model.decoder_dim", model.decoder_dim, "decoder width"),
      MAMMUT_SIZE("model.decoder_heads", model.decoder_heads, "decoder attention heads"),
      MAMMUT_SIZE("model.cross_attention_every_k", model.cross_attention_every_k,
                  "cross-attention after every k-th decoder block"),
      MAMMUT_SIZE("model.mlp_ratio", model.mlp_ratio, "feed-forward expansion"),
      MAMMUT_SIZE("model.vocab_size", model.vocab_size, "token vocabulary size"),
      MAMMUT_SIZE("model.max_text_len", model.max_text_len, "longest token sequence"),
      MAMMUT_BOOL("model.use_projection_head", model.use_projection_head, "linear heads on both embeddings"),
      MAMMUT_BOOL("model.use_attention_pooling", model.use_attention_pooling,
                  "attention pooling instead of mean pooling"),
      MAMMUT_BOOL("model.tie_embeddings", model.tie_embeddings, "share token embedding and output projection"),
      Entry{"model.masking_mode_contrastive", "bidirectional or causal",
            [](const RunConfig& c) { return std::string(masking_mode_name(c.model.masking_mode_contrastive)); },
            [](RunConfig& c, const std::string& v) { c.model.masking_mode_contrastive = parse_masking_mode(v); }},
      MAMMUT_DOUBLE("model.layer_norm_eps", model.layer_norm_eps, "layer norm epsilon"),
      MAMMUT_DOUBLE("model.init_std", model.init_std, "std of normal initialization"),

      MAMMUT_DOUBLE("loss.lambda_cap", training.weights.lambda_cap, "captioning loss weight"),
      MAMMUT_DOUBLE("loss.lambda_focal", training.weights.lambda_focal, "contrastive loss weight"),
      MAMMUT_DOUBLE("loss.gamma", training.weights.gamma, "focal exponent"),
      Entry{"loss.objective", "focal or softmax contrastive objective",
            [](const RunConfig& c) { return std::string(contrastive_objective_name(c.training.objective)); },
            [](RunConfig& c, const std::string& v) { c.training.objective = parse_contrastive_objective(v); }},

      MAMMUT_SIZE("schedule.warmup_steps", training.schedule.warmup_steps, "linear warmup steps"),
      MAMMUT_SIZE("schedule.total_steps", training.schedule.total_steps, "total training steps"),
      MAMMUT_DOUBLE("schedule.peak_lr", training.schedule.peak_lr, "learning rate after warmup"),

      MAMMUT_DOUBLE("optim.beta1", training.adamw.beta1, "AdamW first-moment decay"),
      MAMMUT_DOUBLE("optim.beta2", training.adamw.beta2, "AdamW second-moment decay"),
      MAMMUT_DOUBLE("optim.eps", training.adamw.eps, "AdamW epsilon"),
      MAMMUT_DOUBLE("optim.weight_decay", training.adamw.weight_decay, "decoupled weight decay"),
      MAMMUT_DOUBLE("optim.temperature_lr_scale", training.adamw.temperature_lr_scale,
                    "learning-rate multiplier for the temperature"),
      MAMMUT_DOUBLE("optim.clip_norm", training.clip_norm, "global gradient norm limit"),

      MAMMUT_SIZE("train.batch_size", training.batch_size, "pairs per step"),
      MAMMUT_BOOL("train.alternating", training.alternating,
                  "alternate single-objective steps instead of a joint step"),
      MAMMUT_SIZE("train.checkpoint_every", checkpoint_every, "steps between checkpoints"),

      MAMMUT_SIZE("data.canvas", training.data.scene.canvas, "scene side in pixels"),
      MAMMUT_SIZE("data.grid", training.data.scene.grid, "scene grid cells per side"),
      MAMMUT_SIZE("data.min_objects", training.data.scene.min_objects, "fewest objects per scene"),
      MAMMUT_SIZE("data.max_objects", training.data.scene.max_objects, "most objects per scene"),
      MAMMUT_BOOL("data.augment", training.data.augment, "resize and random crop during training"),
      MAMMUT_SIZE("data.resize_to", training.data.resize_to, "resize side before cropping"),
      MAMMUT_DOUBLE("data.cpe_fraction", training.data.cpe_fraction,
                    "final fraction of steps using cropped positional embeddings"),
      MAMMUT_SIZE("data.cpe_upsample", training.data.cpe_upsample, "up-sampled positional grid side"),
      MAMMUT_DOUBLE("data.crop_min_scale", training.data.crop.min_scale, "smallest crop area fraction"),
      MAMMUT_DOUBLE("data.crop_max_scale", training.data.crop.max_scale, "largest crop area fraction"),
      MAMMUT_DOUBLE("data.crop_min_aspect", training.data.crop.min_aspect, "smallest crop aspect ratio"),
      MAMMUT_DOUBLE("data.crop_max_aspect", training.data.crop.max_aspect, "largest crop aspect ratio"),

      MAMMUT_SIZE("video.frames", video.frames, "frames per video"),
      MAMMUT_SIZE("video.temporal_stride", video.temporal_stride, "frame stride of 2-D patch tokens"),
      MAMMUT_BOOL("video.use_tubes", video.use_tubes, "add tube tokens"),
      Entry{"video.tubes", "tube shapes as kernel/stride/offset (each TxHxW), ';'-separated",
            [](const RunConfig& c) { return format_tubes(c.video.tubes); },
            [](RunConfig& c, const std::string& v) { c.video.tubes = parse_tubes(v); }},
      Entry{"video.gate", "scalar or per_channel positional gates",
            [](const RunConfig& c) { return std::string(video::gate_mode_name(c.video.gate)); },
            [](RunConfig& c, const std::string& v) { c.video.gate = video::parse_gate_mode(v); }},
      MAMMUT_SIZE("video.max_tokens", video.max_tokens, "longest video token sequence"),

      MAMMUT_SIZE("eval.gallery", eval.gallery, "retrieval gallery size (test split)"),
      MAMMUT_SIZE("eval.caption_examples", eval.caption_examples, "caption examples (test split)"),
      MAMMUT_SIZE("eval.video_examples", eval.video_examples, "video examples (test split)"),
      MAMMUT_SIZE("eval.batch", eval.batch, "evaluation batch size"),
      Entry{"eval.recall_ks", "comma-separated recall cutoffs",
            [](const RunConfig& c) { return format_ks(c.eval.recall_ks); },
            [](RunConfig& c, const std::string& v) { c.eval.recall_ks = parse_ks(v); }},
  };
  return table;
}

#undef MAMMUT_SIZE
#undef MAMMUT_DOUBLE
#undef MAMMUT_BOOL

const Entry& find(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<ConfigKey> config_keys() {
  const RunConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& e : entries()) out.push_back({e.key, e.help + " (default: " + e.get(defaults) + ")"});
  return out;
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  const Entry& e = find(key);
  try {
    e.set(config, value);
  } catch (const BadValue& bad) {
    throw ConfigError(concat("key '", key, "': invalid value '", value, "', expected ", bad.expected));
  } catch (const ConfigError& err) {
    throw ConfigError(concat("key '", key, "': ", err.what()));
  }
}

std::string get_value(const RunConfig& config, const std::string& key) { return find(key).get(config); }

RunConfig parse_run_config(std::istream& in) {
  RunConfig config;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(concat("line ", number, ": expected key=value, got '", text, "'"));
    }
    const std::string key = trim(text.substr(0, eq)), value = trim(text.substr(eq + 1));
    try {
      set_value(config, key, value);
    } catch (const ConfigError& err) {
      throw ConfigError(concat("line ", number, ": ", err.what()));
    }
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return parse_run_config(in);
  } catch (const ConfigError& err) {
    throw ConfigError(path + ": " + err.what());
  }
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.key + "=" + e.get(config) + "\n";
  return out;
}

std::string fingerprint(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mammut::io
