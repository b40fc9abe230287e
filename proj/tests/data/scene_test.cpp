#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "mammut/data/corpus.hpp"
#include "mammut/data/scene.hpp"
#include "mammut/data/tokenizer.hpp"
#include "mammut/errors.hpp"

namespace mammut::data {
namespace {

TEST(Synthesize, SameSeedIsBitIdentical) {
  SceneConfig config;
  auto a = synthesize_pair(7, config);
  auto b = synthesize_pair(7, config);
  EXPECT_EQ(a.canvas, b.canvas);
  EXPECT_EQ(a.caption, b.caption);
  EXPECT_EQ(a.objects, b.objects);
}

TEST(Synthesize, DifferentSeedsDiffer) {
  SceneConfig config;
  EXPECT_NE(synthesize_pair(7, config).canvas, synthesize_pair(8, config).canvas);
}

TEST(Synthesize, SingleObjectCaptionTemplate) {
  SceneConfig config;
  config.min_objects = config.max_objects = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto scene = synthesize_pair(seed, config);
    ASSERT_EQ(scene.objects.size(), 1u);
    auto words = split_words(scene.caption);
    ASSERT_EQ(words.size(), 3u) << scene.caption;
    EXPECT_EQ(words[0], "a");
    EXPECT_EQ(words[1], config.palette[scene.objects[0].color].name);
    EXPECT_EQ(words[2], kShapeNames[static_cast<std::size_t>(scene.objects[0].shape)]);
  }
}

TEST(Synthesize, PixelsInUnitRange) {
  auto scene = synthesize_pair(3, SceneConfig{});
  for (float v : scene.canvas.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Synthesize, OverCapacityIsConfigError) {
  SceneConfig config;
  config.grid = 2;
  config.min_objects = 3;
  config.max_objects = 5;
  EXPECT_THROW(synthesize_pair(0, config), ConfigError);
}

TEST(Synthesize, VocabularyIsSmall) {
  SceneConfig config;
  std::set<std::string> words;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (auto& w : split_words(synthesize_pair(seed, config).caption)) words.insert(w);
  }
  EXPECT_LE(words.size(), 64u);
}

TEST(Synthesize, CaptionIsFunctionOfObjects) {
  SceneConfig config;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto scene = synthesize_pair(seed, config);
    EXPECT_EQ(scene.caption, caption_for(scene.objects, config));
  }
}

// Enumerates every object list the default configuration can produce.
std::vector<std::vector<SceneObject>> enumerate_object_lists(const SceneConfig& config) {
  std::vector<std::vector<SceneObject>> out;
  const int choices = static_cast<int>(kShapeNames.size() * config.palette.size());
  for (std::size_t n = config.min_objects; n <= config.max_objects; ++n) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= static_cast<std::size_t>(choices);
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<SceneObject> objs;
      std::size_t c = code;
      for (std::size_t i = 0; i < n; ++i) {
        const int k = static_cast<int>(c % static_cast<std::size_t>(choices));
        c /= static_cast<std::size_t>(choices);
        objs.push_back({static_cast<ShapeKind>(k % 3), k / 3, static_cast<int>(i)});
      }
      out.push_back(std::move(objs));
    }
  }
  return out;
}

TEST(Synthesize, CaptionCollisionRateEqualsObjectListCollisionRate) {
  SceneConfig config;
  // Over the whole object-list space, distinct lists get distinct captions.
  const auto space = enumerate_object_lists(config);
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < space.size(); ++i) {
    auto [it, fresh] = seen.emplace(caption_for(space[i], config), i);
    ASSERT_TRUE(fresh) << "caption '" << it->first << "' shared by two object lists";
  }

  std::set<std::string> captions;
  std::set<std::vector<SceneObject>> lists;
  std::size_t caption_collisions = 0, list_collisions = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    auto scene = synthesize_pair(seed, config);
    caption_collisions += captions.insert(scene.caption).second ? 0 : 1;
    list_collisions += lists.insert(scene.objects).second ? 0 : 1;
  }
  EXPECT_EQ(caption_collisions, list_collisions);
  EXPECT_GT(list_collisions, 0u);
}

TEST(Video, FirstFrameMatchesStillScene) {
  SceneConfig config;
  auto video = synthesize_video(5, config, 8);
  auto still = synthesize_pair(5, config);
  ASSERT_EQ(video.frames.size(), 8u);
  EXPECT_EQ(video.frames[0], still.canvas);
  EXPECT_EQ(video.caption, still.caption);
  ASSERT_EQ(video.centers.size(), video.objects.size());
  for (const auto& traj : video.centers) {
    ASSERT_EQ(traj.size(), 8u);
    // Linear motion: constant displacement between frames.
    const float dy = traj[1].first - traj[0].first;
    for (std::size_t t = 1; t < traj.size(); ++t) EXPECT_NEAR(traj[t].first - traj[t - 1].first, dy, 1e-4);
  }
}

TEST(Video, RepeatFrame) {
  Image img(2, 2);
  img.at(1, 1, 2) = 0.5f;
  auto frames = repeat_frame(img, 3);
  ASSERT_EQ(frames.size(), 3u);
  for (const auto& f : frames) EXPECT_EQ(f, img);
}

TEST(Splits, SeedRangesAreDisjoint) {
  auto [t0, t1] = seed_range(Split::train);
  auto [v0, v1] = seed_range(Split::val);
  auto [s0, s1] = seed_range(Split::test);
  EXPECT_LE(t1, v0);
  EXPECT_LE(v1, s0);
  EXPECT_LT(t0, t1);
  EXPECT_LT(s0, s1);
  EXPECT_EQ(split_seed(Split::val, 0), v0);
}

TEST(Splits, HeldOutCaptionsOnlyRepeatTrainForEqualObjectLists) {
  SceneConfig config;
  auto train = build_corpus(Split::train, 5000, config);
  std::map<std::string, std::vector<SceneObject>> by_caption;
  for (const auto& r : train) by_caption.emplace(r.caption, r.objects);
  for (Split split : {Split::val, Split::test}) {
    for (const auto& r : build_corpus(split, 1000, config)) {
      auto it = by_caption.find(r.caption);
      if (it != by_caption.end()) EXPECT_EQ(it->second, r.objects) << r.caption;
    }
  }
}

TEST(Manifest, RoundTripsImageRecords) {
  SceneConfig config;
  auto records = build_corpus(Split::val, 20, config);
  std::stringstream ss;
  write_manifest(ss, records, config);
  EXPECT_EQ(read_manifest(ss, config), records);
}

TEST(Manifest, RoundTripsVideoRecords) {
  SceneConfig config;
  std::vector<ManifestRecord> records;
  for (std::uint64_t seed = 0; seed < 5; ++seed) records.push_back(record_of(synthesize_video(seed, config, 4)));
  std::stringstream ss;
  write_manifest(ss, records, config);
  EXPECT_EQ(read_manifest(ss, config), records);
}

TEST(Manifest, BadLineReportsLineNumber) {
  SceneConfig config;
  std::stringstream ss;
  ss << kManifestHeader << "\n1\t0:red:circle\ta red circle\n2\t0:mauve:circle\ta mauve circle\n";
  try {
    read_manifest(ss, config);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace mammut::data
