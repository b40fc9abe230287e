#include "mammut/data/corpus.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "mammut/errors.hpp"

namespace mammut::data {
namespace {

constexpr std::uint64_t kSplitWidth = 1'000'000'000ULL;

std::vector<std::string> split_on(const std::string& s, char sep) {
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

int palette_index(const SceneConfig& config, const std::string& name, std::size_t line) {
  for (std::size_t i = 0; i < config.palette.size(); ++i) {
    if (config.palette[i].name == name) return static_cast<int>(i);
  }
  throw ConfigError(concat("manifest line ", line, ": unknown color '", name, "'"));
}

ShapeKind shape_index(const std::string& name, std::size_t line) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i) {
    if (name == kShapeNames[i]) return static_cast<ShapeKind>(i);
  }
  throw ConfigError(concat("manifest line ", line, ": unknown shape '", name, "'"));
}

std::string format_point(float y, float x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f,%.3f", static_cast<double>(y), static_cast<double>(x));
  return buf;
}

}  // namespace

std::pair<std::uint64_t, std::uint64_t> seed_range(Split split) {
  const auto k = static_cast<std::uint64_t>(split);
  return {k * kSplitWidth, (k + 1) * kSplitWidth};
}

std::uint64_t split_seed(Split split, std::uint64_t index) {
  if (index >= kSplitWidth) throw ContractError("split_seed: index beyond split range");
  return seed_range(split).first + index;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

void write_manifest(std::ostream& out, const std::vector<ManifestRecord>& records, const SceneConfig& config) {
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    out << r.seed << '\t';
    for (std::size_t i = 0; i < r.objects.size(); ++i) {
      const auto& o = r.objects[i];
      if (i) out << ',';
      out << o.cell << ':' << config.palette.at(static_cast<std::size_t>(o.color)).name << ':'
          << kShapeNames.at(static_cast<std::size_t>(o.shape));
    }
    out << '\t' << r.caption;
    if (!r.trajectories.empty()) {
      out << '\t';
      for (std::size_t i = 0; i < r.trajectories.size(); ++i) {
        if (i) out << ';';
        for (std::size_t t = 0; t < r.trajectories[i].size(); ++t) {
          if (t) out << ' ';
          out << format_point(r.trajectories[i][t].first, r.trajectories[i][t].second);
        }
      }
    }
    out << '\n';
  }
}

std::vector<ManifestRecord> read_manifest(std::istream& in, const SceneConfig& config) {
  std::vector<ManifestRecord> records;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 3 && fields.size() != 4) {
      throw ConfigError(concat("manifest line ", line_no, ": expected 3 or 4 tab-separated fields"));
    }
    ManifestRecord r;
    try {
      r.seed = std::stoull(fields[0]);
    } catch (const std::exception&) {
      throw ConfigError(concat("manifest line ", line_no, ": bad seed '", fields[0], "'"));
    }
    for (const auto& item : split_on(fields[1], ',')) {
      auto parts = split_on(item, ':');
      if (parts.size() != 3) throw ConfigError(concat("manifest line ", line_no, ": bad object '", item, "'"));
      SceneObject o;
      o.cell = std::stoi(parts[0]);
      o.color = palette_index(config, parts[1], line_no);
      o.shape = shape_index(parts[2], line_no);
      r.objects.push_back(o);
    }
    r.caption = fields[2];
    if (fields.size() == 4) {
      for (const auto& traj : split_on(fields[3], ';')) {
        std::vector<std::pair<float, float>> points;
        std::istringstream ps(traj);
        for (std::string pt; ps >> pt;) {
          auto yx = split_on(pt, ',');
          if (yx.size() != 2) throw ConfigError(concat("manifest line ", line_no, ": bad point '", pt, "'"));
          points.emplace_back(std::stof(yx[0]), std::stof(yx[1]));
        }
        r.trajectories.push_back(std::move(points));
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

ManifestRecord record_of(const SyntheticScene& scene) {
  return {scene.seed, scene.objects, scene.caption, {}};
}

ManifestRecord record_of(const SyntheticVideo& video) {
  ManifestRecord r{video.seed, video.objects, video.caption, {}};
  // Round through the text precision so records compare equal after a file round trip.
  for (const auto& traj : video.centers) {
    std::vector<std::pair<float, float>> pts;
    for (auto [y, x] : traj) {
      auto yx = split_on(format_point(y, x), ',');
      pts.emplace_back(std::stof(yx[0]), std::stof(yx[1]));
    }
    r.trajectories.push_back(std::move(pts));
  }
  return r;
}

std::vector<ManifestRecord> build_corpus(Split split, std::size_t count, const SceneConfig& config) {
  std::vector<ManifestRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(record_of(synthesize_pair(split_seed(split, i), config)));
  return out;
}

}  // namespace mammut::data
