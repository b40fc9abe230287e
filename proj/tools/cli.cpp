#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "mammut/data/corpus.hpp"
#include "mammut/errors.hpp"
#include "mammut/eval/eval.hpp"
#include "mammut/io/checkpoint.hpp"
#include "mammut/tensor/gradcheck.hpp"
#include "mammut/tensor/ops.hpp"
#include "mammut/tensor/parallel.hpp"

namespace mammut::cli {

namespace {

namespace fs = std::filesystem;

/// Raised for bad arguments; maps to exit code 1.
struct UsageError : Error {
  using Error::Error;
};

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
};

void apply_overrides(io::RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    io::set_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

io::RunConfig load_config(const ConfigOptions& opts) {
  io::RunConfig config = opts.path.empty() ? io::RunConfig{} : io::load_run_config(opts.path);
  apply_overrides(config, opts.overrides);
  config.validate();
  return config;
}

void add_config_options(CLI::App* app, ConfigOptions& opts) {
  app->add_option("--config", opts.path, "Run configuration file (key=value lines)")->check(CLI::ExistingFile);
  app->add_option("--set", opts.overrides, "Override one configuration key, e.g. --set model.decoder_layers=2");
}

Precision parse_precision(int bits) {
  if (bits == 32) return Precision::f32;
  if (bits == 64) return Precision::f64;
  throw UsageError(concat("--precision must be 32 or 64, got ", bits));
}

fs::path checkpoint_dir(const fs::path& run_dir) { return run_dir / "checkpoints"; }

fs::path checkpoint_path(const fs::path& run_dir, std::size_t step) {
  char name[32];
  std::snprintf(name, sizeof(name), "step_%08zu.ckpt", step);
  return checkpoint_dir(run_dir) / name;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  std::optional<fs::path> best;
  if (!fs::is_directory(checkpoint_dir(run_dir))) return best;
  for (const auto& entry : fs::directory_iterator(checkpoint_dir(run_dir))) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("step_") || entry.path().extension() != ".ckpt") continue;
    if (!best || name > best->filename().string()) best = entry.path();
  }
  return best;
}

fs::path resolve_checkpoint(const std::string& checkpoint, const std::string& run_dir) {
  if (!checkpoint.empty()) return checkpoint;
  if (run_dir.empty()) throw UsageError("pass --checkpoint or --run-dir");
  auto latest = latest_checkpoint(run_dir);
  if (!latest) throw CheckpointError("no checkpoints under '" + run_dir + "'");
  return *latest;
}

bool has_video_parameters(const io::Checkpoint& ck) {
  return std::any_of(ck.parameters.begin(), ck.parameters.end(),
                     [](const io::NamedArray& p) { return p.name.starts_with("video."); });
}

/// Loads the image pathway; video parameters in the checkpoint are ignored.
void load_image_model(const io::Checkpoint& ck, Mammut& model, bool allow_partial, std::ostream& err) {
  const auto report = io::load_parameters(ck, model, true);
  for (const auto& name : report.unexpected) {
    if (!name.starts_with("video.") && !allow_partial) {
      throw CheckpointError("checkpoint holds unknown parameter '" + name + "'; use --allow-partial to skip it");
    }
  }
  if (!report.missing.empty()) {
    if (!allow_partial) {
      throw CheckpointError(concat("checkpoint lacks ", report.missing.size(), " model parameters (first '",
                                   report.missing[0], "'); use --allow-partial to keep their initial values"));
    }
    err << "warning: " << report.missing.size() << " parameters keep their initial values\n";
  }
}

void write_records(const std::vector<eval::MetricsRecord>& records, const std::string& run_dir, std::ostream& out) {
  eval::write_jsonl(out, records);
  if (run_dir.empty()) return;
  fs::create_directories(run_dir);
  std::ofstream file(fs::path(run_dir) / "metrics.jsonl", std::ios::app);
  if (!file) throw Error("cannot append to " + (fs::path(run_dir) / "metrics.jsonl").string());
  eval::write_jsonl(file, records);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--scene-seeds: '" + item + "' is not an unsigned integer");
    }
  }
  if (seeds.empty()) throw UsageError("--scene-seeds is empty");
  return seeds;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  ConfigOptions config;
  std::string run_dir;
  std::uint64_t seed = 0;
  std::optional<std::size_t> steps;
  int precision = 32;
  bool resume = false;
  std::string init;
  bool allow_partial = false;
  std::size_t log_every = 100;
};

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const fs::path run_dir = o.run_dir;
  std::optional<io::Checkpoint> resume_from;
  io::RunConfig config;
  Precision precision = parse_precision(o.precision);
  if (o.resume) {
    auto latest = latest_checkpoint(run_dir);
    if (!latest) throw CheckpointError("--resume: no checkpoints under '" + o.run_dir + "'");
    resume_from = io::read_checkpoint(latest->string());
    if (!o.config.path.empty()) throw UsageError("--resume takes its configuration from the checkpoint; drop --config");
    config = resume_from->config();
    apply_overrides(config, o.config.overrides);
    config.validate();
    precision = resume_from->precision;
    err << "resuming from " << latest->string() << " at step " << resume_from->step << '\n';
  } else {
    config = load_config(o.config);
  }
  PrecisionScope scope(precision);

  fs::create_directories(checkpoint_dir(run_dir));
  {
    std::ofstream cfg(run_dir / "config.txt");
    cfg << io::to_text(config);
  }

  Trainer trainer(config.model, config.training, o.seed);
  if (resume_from) io::restore(*resume_from, trainer);
  if (!o.init.empty()) {
    const auto report = io::load_parameters(io::read_checkpoint(o.init), trainer.model(), o.allow_partial);
    err << "initialised from " << o.init << " (" << report.missing.size() << " missing, "
        << report.unexpected.size() << " unexpected)\n";
  }

  const std::size_t target = o.steps.value_or(config.training.schedule.total_steps);
  if (target > config.training.schedule.total_steps) {
    throw UsageError(concat("--steps ", target, " exceeds schedule.total_steps ", config.training.schedule.total_steps));
  }
  if (target < trainer.step()) {
    throw UsageError(concat("--steps ", target, " is behind the checkpoint step ", trainer.step()));
  }

  const bool appending = resume_from && fs::exists(run_dir / "metrics.csv");
  std::ofstream csv(run_dir / "metrics.csv", appending ? std::ios::app : std::ios::trunc);
  MetricsWriter writer({&csv}, !appending);

  std::size_t last_saved = static_cast<std::size_t>(-1);
  const auto save = [&] {
    io::write_checkpoint(checkpoint_path(run_dir, trainer.step()).string(), io::capture(config, trainer));
    last_saved = trainer.step();
  };
  if (trainer.step() == 0 && target == 0) save();

  const auto start = std::chrono::steady_clock::now();
  const std::size_t first = trainer.step();
  trainer.run(target, [&](const StepMetrics& m) {
    writer.write(m);
    if (o.log_every > 0 && (m.step % o.log_every == 0 || m.step == target)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      char line[200];
      std::snprintf(line, sizeof(line), "step %zu/%zu  loss %.4f  cap %.4f  focal %.4f  tau %.4f  lr %.3g  %.3f s/step\n",
                    m.step, target, m.loss_total, m.loss_cap, m.loss_focal, m.tau, m.lr,
                    secs / static_cast<double>(m.step - first));
      err << line << std::flush;
    }
    if (config.checkpoint_every > 0 && m.step % config.checkpoint_every == 0) save();
  });
  if (last_saved != trainer.step()) save();
  out << checkpoint_path(run_dir, trainer.step()).string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint;
  std::string run_dir;
  std::string task = "retrieval";
  std::string split = "val";
  std::string scene_seeds;
  std::vector<std::string> overrides;
  bool allow_partial = false;
  bool init_video = false;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  const fs::path path = resolve_checkpoint(o.checkpoint, o.run_dir);
  const io::Checkpoint ck = io::read_checkpoint(path.string());
  io::RunConfig config = ck.config();
  apply_overrides(config, o.overrides);
  config.validate();
  PrecisionScope scope(ck.precision);
  const data::Split split = data::parse_split(o.split);
  const std::string fp = io::fingerprint(config), split_name = data::split_name(split);

  std::vector<eval::MetricsRecord> records;
  if (o.task == "retrieval" || o.task == "caption") {
    Mammut model(config.model);
    load_image_model(ck, model, o.allow_partial, err);
    if (o.task == "retrieval") {
      const auto r = eval::evaluate_retrieval(model, config, split);
      for (std::size_t i = 0; i < r.ks.size(); ++i) {
        records.push_back({"retrieval_i2t", split_name, concat("R@", r.ks[i]), r.image_to_text[i], fp, ck.step});
      }
      for (std::size_t i = 0; i < r.ks.size(); ++i) {
        records.push_back({"retrieval_t2i", split_name, concat("R@", r.ks[i]), r.text_to_image[i], fp, ck.step});
      }
    } else {
      eval::CaptionResult r;
      std::string where = split_name;
      if (!o.scene_seeds.empty()) {
        r = eval::evaluate_captions(model, config, parse_seed_list(o.scene_seeds));
        where = "seeds";
      } else {
        r = eval::evaluate_captions(model, config, split);
      }
      records.push_back({"caption", where, "exact_match", r.exact_match, fp, ck.step});
    }
  } else if (o.task == "video-qa-toy") {
    if (!has_video_parameters(ck) && !o.init_video) {
      err << "error: " << path.string()
          << " has no video parameters; pass --init-video to add freshly initialised tube and gate parameters\n";
      return kFailure;
    }
    Mammut model([&] {
      MammutConfig c = config.model;
      c.init_seed = o.seed;
      return c;
    }());
    video::VideoAdapter adapter(model, config.video);
    const auto report = io::load_parameters(ck, model, true);
    const auto video_names = video::VideoAdapter::parameter_names(config.video);
    for (const auto& name : report.missing) {
      if (std::find(video_names.begin(), video_names.end(), name) == video_names.end() && !o.allow_partial) {
        throw CheckpointError("checkpoint lacks image-pathway parameter '" + name + "'");
      }
    }
    if (!report.unexpected.empty() && !o.allow_partial) {
      throw CheckpointError("checkpoint holds unknown parameter '" + report.unexpected[0] + "'");
    }
    if (!report.missing.empty()) err << "initialised " << report.missing.size() << " video parameters\n";
    const auto r = eval::evaluate_video_captions(adapter, config, split);
    records.push_back({"video_qa_toy", split_name, "exact_match", r.exact_match, fp, ck.step});
  } else {
    throw UsageError("unknown task '" + o.task + "' (expected retrieval, caption or video-qa-toy)");
  }
  write_records(records, o.run_dir, out);
  return kOk;
}

// ---------------------------------------------------------------- generate

struct GenerateOptions {
  std::string checkpoint;
  std::string run_dir;
  std::optional<std::uint64_t> scene_seed;
  std::string split = "val";
  std::size_t index = 0;
  std::string prompt;
  std::vector<std::string> overrides;
  bool allow_partial = false;
};

int cmd_generate(const GenerateOptions& o, std::ostream& out, std::ostream& err) {
  const io::Checkpoint ck = io::read_checkpoint(resolve_checkpoint(o.checkpoint, o.run_dir).string());
  io::RunConfig config = ck.config();
  apply_overrides(config, o.overrides);
  config.validate();
  PrecisionScope scope(ck.precision);
  Mammut model(config.model);
  load_image_model(ck, model, o.allow_partial, err);

  const std::uint64_t seed = o.scene_seed.value_or(data::split_seed(data::parse_split(o.split), o.index));
  DataConfig data = config.training.data;
  data.augment = false;
  BatchSampler sampler(config.model, data);
  const Batch batch = sampler.fixed({seed});
  std::vector<std::int32_t> prompt = sampler.vocabulary().tokenize(o.prompt);
  prompt.pop_back();  // eos
  NoGradGuard no_grad;
  const auto ids = model.generate(batch.patches, prompt, config.model.max_text_len);
  std::vector<std::int32_t> full(prompt.begin(), prompt.end());
  full.insert(full.end(), ids.begin(), ids.end());
  out << "scene " << seed << '\n';
  out << "generated: " << sampler.vocabulary().detokenize(full) << '\n';
  out << "reference: " << data::synthesize_pair(seed, config.training.data.scene).caption << '\n';
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
  int seeds = 3;
  std::string inject_sign_flip;
  bool skip_end_to_end = false;
};

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream&) {
  testing::inject_backward_sign_flip(o.inject_sign_flip);
  struct Reset {
    ~Reset() { testing::inject_backward_sign_flip(""); }
  } reset;
  const auto start = std::chrono::steady_clock::now();
  std::vector<GradcheckResult> results;
  for (const auto& c : op_gradcheck_cases()) results.push_back(run_gradcheck_case(c, 1, o.seeds));
  const std::size_t ops = results.size();
  if (!o.skip_end_to_end) results.push_back(two_pass_gradcheck(1));

  std::size_t failed = 0;
  char line[160];
  for (const auto& r : results) {
    const bool ok = r.passed();
    failed += ok ? 0 : 1;
    std::snprintf(line, sizeof(line), "%-18s max_rel_error %.3e  tol %.0e  %s%s\n", r.name.c_str(), r.max_rel_error,
                  r.tolerance, ok ? "PASS" : "FAIL", r.covers_op ? "" : " (op not on tape)");
    out << line;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::snprintf(line, sizeof(line), "%zu/%zu checks passed, %zu of %zu registered ops covered, %.1f s\n",
                results.size() - failed, results.size(), ops, registered_ops().size(), secs);
  out << line;
  if (failed) {
    out << "failing:";
    for (const auto& r : results) {
      if (!r.passed()) out << ' ' << r.name;
    }
    out << '\n';
  }
  return failed ? kFailure : kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateOptions {
  ConfigOptions config;
  std::string run_dir;
  std::vector<std::string> axes;
  std::uint64_t seed = 0;
  std::optional<std::size_t> steps;
  std::string split = "val";
};

eval::Axis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--axis expects key=v1,v2,..., got '" + text + "'");
  eval::Axis axis{text.substr(0, eq), {}};
  std::stringstream in(text.substr(eq + 1));
  std::string value;
  while (std::getline(in, value, ',')) axis.values.push_back(value);
  return axis;
}

int cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream& err) {
  const io::RunConfig base = load_config(o.config);
  std::vector<eval::Axis> axes;
  for (const auto& a : o.axes) axes.push_back(parse_axis(a));
  const data::Split split = data::parse_split(o.split);
  const fs::path run_dir = o.run_dir;
  fs::create_directories(run_dir);

  std::size_t variant = 0;
  const auto rows = eval::run_ablation_grid(base, axes, [&](const io::RunConfig& config) {
    const std::size_t steps = o.steps.value_or(config.training.schedule.total_steps);
    err << "variant " << ++variant << ": " << io::fingerprint(config) << ", " << steps << " steps\n";
    Trainer trainer(config.model, config.training, o.seed);
    trainer.run(steps);
    return eval::evaluate_all(trainer.model(), config, split, trainer.step());
  });

  std::ofstream table(run_dir / "ablation.csv");
  eval::write_ablation_table(table, rows);
  eval::write_ablation_table(out, rows);
  std::ofstream jsonl(run_dir / "metrics.jsonl", std::ios::app);
  for (const auto& row : rows) eval::write_jsonl(jsonl, row.records);
  return kOk;
}

// ---------------------------------------------------------------- data-gen

struct DataGenOptions {
  ConfigOptions config;
  std::string out_dir;
  std::string split = "train";
  std::size_t count = 16;
  bool video = false;
  bool images = false;
};

void write_ppm(const fs::path& path, const data::Image& image) {
  std::ofstream f(path, std::ios::binary);
  f << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.pixels) {
    f.put(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f)));
  }
  if (!f) throw Error("cannot write " + path.string());
}

int cmd_data_gen(const DataGenOptions& o, std::ostream& out, std::ostream&) {
  const io::RunConfig config = load_config(o.config);
  const auto& scene = config.training.data.scene;
  const data::Split split = data::parse_split(o.split);
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  if (o.images) fs::create_directories(dir / "images");

  std::vector<data::ManifestRecord> records;
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::uint64_t seed = data::split_seed(split, i);
    if (o.video) {
      const auto clip = data::synthesize_video(seed, scene, config.video.frames);
      records.push_back(data::record_of(clip));
      for (std::size_t f = 0; o.images && f < clip.frames.size(); ++f) {
        write_ppm(dir / "images" / concat(seed, "_", f, ".ppm"), clip.frames[f]);
      }
    } else {
      const auto pair = data::synthesize_pair(seed, scene);
      records.push_back(data::record_of(pair));
      if (o.images) write_ppm(dir / "images" / concat(seed, ".ppm"), pair.canvas);
    }
  }
  {
    std::ofstream manifest(dir / "manifest.tsv");
    data::write_manifest(manifest, records, scene);
  }
  {
    std::ofstream vocab(dir / "vocab.txt");
    data::Vocabulary::for_scenes(scene).write(vocab);
  }
  out << "wrote " << records.size() << (o.video ? " video" : " image") << " records to " << (dir / "manifest.tsv").string()
      << '\n';
  return kOk;
}

std::string config_key_help() {
  std::string text = "Configuration keys (for --config files and --set):\n";
  for (const auto& k : io::config_keys()) text += "  " + k.key + "\n      " + k.help + "\n";
  text += "\nEnvironment: MAMMUT_THREADS caps kernel parallelism (0 = single-threaded).\n";
  text += "Exit codes: 0 ok, 1 usage error, 2 runtime failure.";
  return text;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy two-pass image-text model: training, evaluation and diagnostics", "mammut"};
  app.require_subcommand(1);
  app.footer(config_key_help());

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and metrics.csv to a run directory");
  add_config_options(train_cmd, train.config);
  train_cmd->add_option("--run-dir", train.run_dir, "Run directory")->required();
  train_cmd->add_option("--seed", train.seed, "Initialisation and sampling seed")->capture_default_str();
  train_cmd->add_option("--steps", train.steps, "Stop after this many steps (default: schedule.total_steps)");
  train_cmd->add_option("--precision", train.precision, "Parameter precision in bits (32 or 64)")->capture_default_str();
  train_cmd->add_flag("--resume", train.resume, "Continue from the latest checkpoint in the run directory");
  train_cmd->add_option("--init", train.init, "Initialise parameters from a checkpoint");
  train_cmd->add_flag("--allow-partial", train.allow_partial, "Tolerate parameter name mismatches with --init");
  train_cmd->add_option("--log-every", train.log_every, "Progress line interval in steps (0 = quiet)")->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print metrics as JSON lines");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  eval_cmd->add_option("--run-dir", ev.run_dir, "Run directory (latest checkpoint; metrics.jsonl is appended)");
  eval_cmd->add_option("--task", ev.task, "retrieval, caption or video-qa-toy")
      ->check(CLI::IsMember({"retrieval", "caption", "video-qa-toy"}))
      ->capture_default_str();
  eval_cmd->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  eval_cmd->add_option("--scene-seeds", ev.scene_seeds, "Caption task: comma-separated scene seeds instead of a split");
  eval_cmd->add_option("--set", ev.overrides, "Override a configuration key (eval.* keys are typical)");
  eval_cmd->add_flag("--allow-partial", ev.allow_partial, "Tolerate parameter name mismatches");
  eval_cmd->add_flag("--init-video", ev.init_video, "Add freshly initialised video parameters to an image checkpoint");
  eval_cmd->add_option("--seed", ev.seed, "Seed for --init-video parameters")->capture_default_str();

  GenerateOptions gen;
  auto* gen_cmd = app.add_subcommand("generate", "Caption one synthetic scene greedily");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "Checkpoint file");
  gen_cmd->add_option("--run-dir", gen.run_dir, "Run directory (latest checkpoint)");
  gen_cmd->add_option("--scene-seed", gen.scene_seed, "Scene seed (default: --index within --split)");
  gen_cmd->add_option("--split", gen.split, "train, val or test")->capture_default_str();
  gen_cmd->add_option("--index", gen.index, "Scene index within the split")->capture_default_str();
  gen_cmd->add_option("--prompt", gen.prompt, "Words to force before generation");
  gen_cmd->add_option("--set", gen.overrides, "Override a configuration key");
  gen_cmd->add_flag("--allow-partial", gen.allow_partial, "Tolerate parameter name mismatches");

  GradcheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op at 64-bit");
  gc_cmd->add_option("--seeds", gc.seeds, "Random instances per op")->capture_default_str();
  gc_cmd->add_option("--inject-sign-flip", gc.inject_sign_flip, "Negate one op's backward (checker self-test)");
  gc_cmd->add_flag("--skip-end-to-end", gc.skip_end_to_end, "Only the per-op checks");

  AblateOptions ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Train and evaluate every combination of configuration values");
  add_config_options(ab_cmd, ab.config);
  ab_cmd->add_option("--run-dir", ab.run_dir, "Output directory for ablation.csv and metrics.jsonl")->required();
  ab_cmd->add_option("--axis", ab.axes, "key=v1,v2,... (repeatable)");
  ab_cmd->add_option("--seed", ab.seed, "Seed shared by every variant")->capture_default_str();
  ab_cmd->add_option("--steps", ab.steps, "Training steps per variant (default: schedule.total_steps)");
  ab_cmd->add_option("--split", ab.split, "Evaluation split")->capture_default_str();

  DataGenOptions dg;
  auto* dg_cmd = app.add_subcommand("data-gen", "Write a synthetic corpus manifest and vocabulary");
  add_config_options(dg_cmd, dg.config);
  dg_cmd->add_option("--out", dg.out_dir, "Output directory")->required();
  dg_cmd->add_option("--split", dg.split, "train, val or test")->capture_default_str();
  dg_cmd->add_option("--count", dg.count, "Number of records")->capture_default_str();
  dg_cmd->add_flag("--video", dg.video, "Video clips with object trajectories");
  dg_cmd->add_flag("--images", dg.images, "Also write PPM images");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  configure_kernel_threads_from_env();
  try {
    if (*train_cmd) return cmd_train(train, out, err);
    if (*eval_cmd) return cmd_eval(ev, out, err);
    if (*gen_cmd) return cmd_generate(gen, out, err);
    if (*gc_cmd) return cmd_gradcheck(gc, out, err);
    if (*ab_cmd) return cmd_ablate(ab, out, err);
    if (*dg_cmd) return cmd_data_gen(dg, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace mammut::cli
