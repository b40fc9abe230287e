#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mammut/data/scene.hpp"

namespace mammut::data {

enum class Split { train, val, test };

/// Disjoint seed ranges per split: train [0, 1e9), val [1e9, 2e9), test [2e9, 3e9).
std::pair<std::uint64_t, std::uint64_t> seed_range(Split split);
std::uint64_t split_seed(Split split, std::uint64_t index);
const char* split_name(Split split);
Split parse_split(const std::string& name);

/// One manifest line. Image manifests leave `trajectories` empty.
struct ManifestRecord {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  std::string caption;
  /// trajectories[object][frame] = (y, x) center in pixels (video manifests).
  std::vector<std::vector<std::pair<float, float>>> trajectories;

  bool operator==(const ManifestRecord&) const = default;
};

// Manifest schema (tab-separated, one record per line, '#' lines ignored):
//   seed <TAB> objects <TAB> caption [<TAB> trajectories]
// objects:      comma-separated "cell:color:shape", e.g. "0:red:circle,1:blue:square"
// trajectories: ';'-separated per object, each a space-separated list of "y,x"
//               frame centers with 3 decimals.
inline constexpr const char* kManifestHeader = "# mammut-corpus v1\tseed\tobjects\tcaption\t[trajectories]";

void write_manifest(std::ostream& out, const std::vector<ManifestRecord>& records,
                    const SceneConfig& config);
std::vector<ManifestRecord> read_manifest(std::istream& in, const SceneConfig& config);

ManifestRecord record_of(const SyntheticScene& scene);
ManifestRecord record_of(const SyntheticVideo& video);

/// Scenes for `count` consecutive seeds of a split.
std::vector<ManifestRecord> build_corpus(Split split, std::size_t count, const SceneConfig& config);

}  // namespace mammut::data
