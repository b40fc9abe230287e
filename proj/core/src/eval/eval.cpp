#include "mammut/eval/eval.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mammut/errors.hpp"

namespace mammut::eval {

namespace {

// Rank of `gold` within row `scores` when sorted by descending score, lower
// index first among equals.
std::size_t rank_of(const std::vector<double>& scores, std::size_t gold) {
  std::size_t rank = 0;
  const double g = scores[gold];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > g || (scores[j] == g && j < gold)) ++rank;
  }
  return rank;
}

}  // namespace

RecallResult retrieval_recall(const Tensor& v, const Tensor& l, std::span<const std::size_t> pair_index,
                              std::span<const std::size_t> ks) {
  if (v.ndim() != 2 || l.ndim() != 2 || v.dim(1) != l.dim(1)) {
    throw DimensionError(concat("retrieval_recall: expected [Q, d] and [G, d], got ", to_string(v.shape()), " and ",
                                to_string(l.shape())));
  }
  const std::size_t q = v.dim(0), g = l.dim(0), d = v.dim(1);
  if (pair_index.size() != q) {
    throw ContractError(concat("retrieval_recall: ", pair_index.size(), " gold indices for ", q, " queries"));
  }
  std::vector<bool> used(g, false);
  for (std::size_t i = 0; i < q; ++i) {
    if (pair_index[i] >= g) throw ContractError(concat("retrieval_recall: gold index ", pair_index[i], " >= ", g));
    if (used[pair_index[i]]) throw ContractError(concat("retrieval_recall: text ", pair_index[i], " is gold twice"));
    used[pair_index[i]] = true;
  }
  for (std::size_t k : ks) {
    if (k == 0 || k > g || k > q) {
      throw ContractError(concat("retrieval_recall: K=", k, " outside [1, gallery] for galleries of ", g,
                                 " texts and ", q, " images"));
    }
  }
  const auto vv = v.to_vector(), ll = l.to_vector();
  std::vector<double> sim(q * g);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < g; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += vv[i * d + k] * ll[j * d + k];
      sim[i * g + j] = s;
    }
  }
  std::vector<std::size_t> i2t_rank(q), t2i_rank(q);
  std::vector<double> row(g), col(q);
  for (std::size_t i = 0; i < q; ++i) {
    std::copy_n(sim.begin() + i * g, g, row.begin());
    i2t_rank[i] = rank_of(row, pair_index[i]);
    const std::size_t t = pair_index[i];
    for (std::size_t a = 0; a < q; ++a) col[a] = sim[a * g + t];
    t2i_rank[i] = rank_of(col, i);
  }
  RecallResult out;
  out.ks.assign(ks.begin(), ks.end());
  for (std::size_t k : ks) {
    const auto hits = [&](const std::vector<std::size_t>& ranks) {
      return static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; })) /
             static_cast<double>(q);
    };
    out.image_to_text.push_back(hits(i2t_rank));
    out.text_to_image.push_back(hits(t2i_rank));
  }
  return out;
}

std::string normalize_answer(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

double open_ended_accuracy(std::span<const std::string> predictions, std::span<const std::string> answers) {
  if (predictions.size() != answers.size()) {
    throw ContractError(concat("open_ended_accuracy: ", predictions.size(), " predictions for ", answers.size(),
                               " answers"));
  }
  if (answers.empty()) throw ContractError("open_ended_accuracy: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) hits += normalize_answer(predictions[i]) == normalize_answer(answers[i]);
  return static_cast<double>(hits) / static_cast<double>(answers.size());
}

std::string to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["split"] = r.split;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["fingerprint"] = r.fingerprint;
  j["step"] = r.step;
  return j.dump();
}

MetricsRecord record_from_json(const std::string& line) {
  try {
    auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.task = j.at("task").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.step = j.at("step").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("metrics record: ") + e.what());
  }
}

void write_jsonl(std::ostream& out, std::span<const MetricsRecord> records) {
  for (const auto& r : records) out << to_json(r) << '\n';
}

std::vector<MetricsRecord> read_jsonl(std::istream& in) {
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(record_from_json(line));
  }
  return out;
}

void write_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << "task,split,metric,value,fingerprint,step\n";
  for (const auto& r : records) {
    out << r.task << ',' << r.split << ',' << r.metric << ',' << std::setprecision(6) << std::fixed << r.value
        << std::defaultfloat << ',' << r.fingerprint << ',' << r.step << '\n';
  }
}

namespace {

std::vector<std::uint64_t> split_seeds(data::Split split, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = data::split_seed(split, i);
  return seeds;
}

DataConfig eval_data(const DataConfig& data) {
  DataConfig d = data;
  d.augment = false;
  return d;
}

}  // namespace

Embeddings embed_split(const Mammut& model, const DataConfig& data, data::Split split, std::size_t count,
                       std::size_t batch) {
  NoGradGuard no_grad;
  if (count == 0 || batch == 0) throw ContractError("embed_split: count and batch must be positive");
  BatchSampler sampler(model.config(), eval_data(data));
  const auto seeds = split_seeds(split, count);
  std::vector<Tensor> vs, ls;
  for (std::size_t first = 0; first < count; first += batch) {
    const std::size_t n = std::min(batch, count - first);
    Batch b = sampler.fixed({seeds.begin() + first, seeds.begin() + first + n});
    vs.push_back(model.encode_image(b.patches).v);
    ls.push_back(model.contrastive_pass(b.tokens));
  }
  Embeddings e;
  e.v = vs.size() == 1 ? vs[0] : concat(std::as_const(vs), std::size_t{0});
  e.l = ls.size() == 1 ? ls[0] : concat(std::as_const(ls), std::size_t{0});
  return e;
}

RecallResult evaluate_retrieval(const Mammut& model, const io::RunConfig& config, data::Split split) {
  Embeddings e = embed_split(model, config.training.data, split, config.eval.gallery, config.eval.batch);
  std::vector<std::size_t> gold(config.eval.gallery);
  for (std::size_t i = 0; i < gold.size(); ++i) gold[i] = i;
  return retrieval_recall(e.v, e.l, gold, config.eval.recall_ks);
}

CaptionResult evaluate_captions(const Mammut& model, const io::RunConfig& config,
                                std::span<const std::uint64_t> seeds) {
  NoGradGuard no_grad;
  BatchSampler sampler(model.config(), eval_data(config.training.data));
  const auto& vocab = sampler.vocabulary();
  CaptionResult out;
  const std::size_t batch = config.eval.batch;
  for (std::size_t first = 0; first < seeds.size(); first += batch) {
    const std::size_t n = std::min(batch, seeds.size() - first);
    std::vector<std::uint64_t> chunk(seeds.begin() + first, seeds.begin() + first + n);
    Batch b = sampler.fixed(chunk);
    ImageEncoding enc = model.encode_image(b.patches);
    std::vector<std::vector<std::int32_t>> prompts(n, {data::Vocabulary::bos_id});
    auto generated = model.generate_batch(enc.visual, prompts, model.config().max_text_len);
    for (std::size_t i = 0; i < n; ++i) {
      out.predictions.push_back(vocab.detokenize(generated[i]));
      out.answers.push_back(data::synthesize_pair(chunk[i], config.training.data.scene).caption);
    }
  }
  out.exact_match = open_ended_accuracy(out.predictions, out.answers);
  return out;
}

CaptionResult evaluate_captions(const Mammut& model, const io::RunConfig& config, data::Split split) {
  const auto seeds = split_seeds(split, config.eval.caption_examples);
  return evaluate_captions(model, config, seeds);
}

CaptionResult evaluate_video_captions(const video::VideoAdapter& adapter, const io::RunConfig& config,
                                      data::Split split) {
  NoGradGuard no_grad;
  const Mammut& model = adapter.model();
  const auto vocab = data::Vocabulary::for_scenes(config.training.data.scene);
  const auto seeds = split_seeds(split, config.eval.video_examples);
  CaptionResult out;
  const std::size_t batch = config.eval.batch;
  for (std::size_t first = 0; first < seeds.size(); first += batch) {
    const std::size_t n = std::min(batch, seeds.size() - first);
    std::vector<video::Video> videos;
    for (std::size_t i = 0; i < n; ++i) {
      auto clip = data::synthesize_video(seeds[first + i], config.training.data.scene, adapter.config().frames);
      videos.push_back(std::move(clip.frames));
      out.answers.push_back(clip.caption);
    }
    ImageEncoding enc = adapter.forward(videos);
    std::vector<std::vector<std::int32_t>> prompts(n, {data::Vocabulary::bos_id});
    for (const auto& ids : model.generate_batch(enc.visual, prompts, model.config().max_text_len)) {
      out.predictions.push_back(vocab.detokenize(ids));
    }
  }
  out.exact_match = open_ended_accuracy(out.predictions, out.answers);
  return out;
}

std::vector<MetricsRecord> evaluate_all(const Mammut& model, const io::RunConfig& config, data::Split split,
                                        std::uint64_t step) {
  const std::string fp = io::fingerprint(config), split_name = data::split_name(split);
  std::vector<MetricsRecord> out;
  RecallResult r = evaluate_retrieval(model, config, split);
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    out.push_back({"retrieval_i2t", split_name, concat("R@", r.ks[i]), r.image_to_text[i], fp, step});
  }
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    out.push_back({"retrieval_t2i", split_name, concat("R@", r.ks[i]), r.text_to_image[i], fp, step});
  }
  out.push_back({"caption", split_name, "exact_match", evaluate_captions(model, config, split).exact_match, fp, step});
  return out;
}

std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, io::RunConfig>> expand_grid(
    const io::RunConfig& base, const std::vector<Axis>& axes) {
  std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, io::RunConfig>> out;
  out.push_back({{}, base});
  for (const auto& axis : axes) {
    if (axis.values.empty()) throw ConfigError("ablation axis '" + axis.key + "' has no values");
    std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, io::RunConfig>> next;
    for (const auto& [assignment, config] : out) {
      for (const auto& value : axis.values) {
        auto a = assignment;
        a.emplace_back(axis.key, value);
        io::RunConfig c = config;
        io::set_value(c, axis.key, value);
        next.push_back({std::move(a), std::move(c)});
      }
    }
    out = std::move(next);
  }
  for (const auto& [assignment, config] : out) {
    try {
      config.validate();
    } catch (const ConfigError& e) {
      std::string name;
      for (const auto& [k, v] : assignment) name += (name.empty() ? "" : " ") + k + "=" + v;
      throw ConfigError("ablation variant '" + name + "': " + e.what());
    }
  }
  return out;
}

std::vector<AblationRow> run_ablation_grid(const io::RunConfig& base, const std::vector<Axis>& axes,
                                           const VariantRunner& run) {
  std::vector<AblationRow> rows;
  for (auto& [assignment, config] : expand_grid(base, axes)) {
    AblationRow row;
    row.assignment = assignment;
    row.config = config;
    row.fingerprint = io::fingerprint(config);
    row.records = run(config);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  std::vector<std::string> columns;
  std::set<std::string> seen;
  for (const auto& row : rows) {
    for (const auto& r : row.records) {
      const std::string col = r.task + ":" + r.metric;
      if (seen.insert(col).second) columns.push_back(col);
    }
  }
  out << "variant,fingerprint";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& row : rows) {
    std::string name;
    for (const auto& [k, v] : row.assignment) name += (name.empty() ? "" : " ") + k + "=" + v;
    out << (name.empty() ? "base" : name) << ',' << row.fingerprint;
    for (const auto& c : columns) {
      out << ',';
      for (const auto& r : row.records) {
        if (r.task + ":" + r.metric == c) {
          out << std::setprecision(4) << std::fixed << r.value << std::defaultfloat;
          break;
        }
      }
    }
    out << '\n';
  }
}

}  // namespace mammut::eval
