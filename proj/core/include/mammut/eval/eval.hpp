#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mammut/data/corpus.hpp"
#include "mammut/io/run_config.hpp"
#include "mammut/video/video.hpp"

namespace mammut::eval {

struct RecallResult {
  std::vector<std::size_t> ks;
  std::vector<double> image_to_text;
  std::vector<double> text_to_image;
};

/// Recall@K in both directions. `pair_index[i]` is the gold text of image i
/// and must be injective. Text-to-image queries are the gold texts, ranked
/// among all images. Ties rank the lower index first.
RecallResult retrieval_recall(const Tensor& v, const Tensor& l, std::span<const std::size_t> pair_index,
                              std::span<const std::size_t> ks);

/// Lowercase and collapse runs of whitespace to one space, trimming both ends.
std::string normalize_answer(const std::string& text);

/// Fraction of positions whose normalized strings are equal.
double open_ended_accuracy(std::span<const std::string> predictions, std::span<const std::string> answers);

struct MetricsRecord {
  std::string task;
  std::string split;
  std::string metric;
  double value = 0;
  std::string fingerprint;
  std::uint64_t step = 0;

  bool operator==(const MetricsRecord&) const = default;
};

std::string to_json(const MetricsRecord& record);
MetricsRecord record_from_json(const std::string& line);
void write_jsonl(std::ostream& out, std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_jsonl(std::istream& in);
void write_csv(std::ostream& out, std::span<const MetricsRecord> records);

/// Global embeddings of the first `count` pairs of a split, without
/// augmentation and with the uncropped positional grid.
struct Embeddings {
  Tensor v;  // [count, D]
  Tensor l;  // [count, D]
};
Embeddings embed_split(const Mammut& model, const DataConfig& data, data::Split split, std::size_t count,
                       std::size_t batch);

/// Zero-shot retrieval over the first `gallery` pairs of a split.
RecallResult evaluate_retrieval(const Mammut& model, const io::RunConfig& config, data::Split split);

struct CaptionResult {
  std::vector<std::string> predictions;
  std::vector<std::string> answers;
  double exact_match = 0;
};

/// Greedy captions from a [bos] prompt for the given scene seeds.
CaptionResult evaluate_captions(const Mammut& model, const io::RunConfig& config,
                                std::span<const std::uint64_t> seeds);
/// The first `eval.caption_examples` pairs of a split.
CaptionResult evaluate_captions(const Mammut& model, const io::RunConfig& config, data::Split split);

/// Toy video question answering: the answer to "what is in the video" is the
/// scene caption, generated greedily from the video tokens.
CaptionResult evaluate_video_captions(const video::VideoAdapter& adapter, const io::RunConfig& config,
                                      data::Split split);

/// Retrieval and caption records for a split.
std::vector<MetricsRecord> evaluate_all(const Mammut& model, const io::RunConfig& config, data::Split split,
                                        std::uint64_t step);

struct Axis {
  std::string key;
  std::vector<std::string> values;
};

struct AblationRow {
  std::vector<std::pair<std::string, std::string>> assignment;
  io::RunConfig config;
  std::string fingerprint;
  std::vector<MetricsRecord> records;
};

/// Every combination of axis values applied over `base` (the first axis
/// varies slowest). Invalid keys or values raise ConfigError before any run.
std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, io::RunConfig>> expand_grid(
    const io::RunConfig& base, const std::vector<Axis>& axes);

/// Trains each grid point with `run` (identical seed for all) and collects
/// its records.
using VariantRunner = std::function<std::vector<MetricsRecord>(const io::RunConfig&)>;
std::vector<AblationRow> run_ablation_grid(const io::RunConfig& base, const std::vector<Axis>& axes,
                                           const VariantRunner& run);

/// Variant name column plus one column per distinct metric.
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace mammut::eval
