#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "mammut/errors.hpp"
#include "mammut/model/mammut.hpp"
#include "mammut/tensor/ops.hpp"

namespace mammut {
namespace {

using data::TokenBatch;

MammutConfig small_config() {
  MammutConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.vision_layers = 2;
  c.vision_dim = 16;
  c.vision_heads = 2;
  c.decoder_layers = 4;
  c.decoder_dim = 16;
  c.decoder_heads = 2;
  c.cross_attention_every_k = 2;
  c.vocab_size = 16;
  c.max_text_len = 10;
  c.init_std = 0.2;
  return c;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = 0, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, v);
}

void randomize(Tensor t, std::mt19937_64& rng, double sd = 0.2) {
  std::normal_distribution<double> n(0, sd);
  Buffer& buf = t.mutable_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf.set(i, n(rng));
}

// Gives every parameter (including zero-initialized ones) a random value.
void randomize_all(Mammut& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : model.parameters().entries()) {
    if (name != "temperature.log_tau") randomize(t, rng);
  }
}

TokenBatch random_tokens(std::size_t b, std::size_t t, std::mt19937_64& rng, std::size_t vocab,
                         std::size_t min_len = 1) {
  std::vector<std::vector<std::int32_t>> rows;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t n = min_len + rng() % (t - min_len + 1);
    std::vector<std::int32_t> row{data::Vocabulary::bos_id};
    while (row.size() < n) row.push_back(static_cast<std::int32_t>(3 + rng() % (vocab - 3)));
    rows.push_back(row);
  }
  return TokenBatch::from_rows(rows, t);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  auto x = a.to_vector(), y = b.to_vector();
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

TEST(AttentionMask, CausalAllValid) {
  auto tb = TokenBatch::from_rows({{1, 4, 2}}, 3);
  Mask m = build_attention_mask(MaskingMode::causal, tb);
  std::set<std::pair<int, int>> allowed;
  for (int q = 0; q < 3; ++q)
    for (int k = 0; k < 3; ++k)
      if (m.at(q * 3 + k)) allowed.emplace(q, k);
  EXPECT_EQ(allowed, (std::set<std::pair<int, int>>{{0, 0}, {1, 0}, {1, 1}, {2, 0}, {2, 1}, {2, 2}}));
}

TEST(AttentionMask, BidirectionalHidesPadColumn) {
  auto tb = TokenBatch::from_rows({{1, 2}}, 3);
  Mask m = build_attention_mask(MaskingMode::bidirectional, tb);
  for (int q = 0; q < 3; ++q) {
    EXPECT_TRUE(m.at(q * 3 + 0));
    EXPECT_TRUE(m.at(q * 3 + 1));
    EXPECT_FALSE(m.at(q * 3 + 2));
  }
}

TEST(AttentionMask, CausalWithPaddingIsElementwiseAnd) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto tb = random_tokens(3, 6, rng, 16);
    Mask causal = build_attention_mask(MaskingMode::causal, tb);
    Mask keys = build_attention_mask(MaskingMode::bidirectional, tb);
    auto all_valid = TokenBatch::from_rows(std::vector<std::vector<std::int32_t>>(3, {1, 1, 1, 1, 1, 1}), 6);
    Mask tri = build_attention_mask(MaskingMode::causal, all_valid);
    EXPECT_EQ(causal.allowed, mask_and(tri, keys).allowed);
  }
}

TEST(EncodeImage, SinglePatchEmbeddingIsNormalizedToken) {
  MammutConfig c = small_config();
  c.image_size = 8;
  Mammut model(c);
  std::mt19937_64 rng(1);
  ImageEncoding enc = model.encode_image(random_tensor({2, 1, c.patch_dim()}, rng));
  ASSERT_EQ(enc.visual.shape(), (Shape{2, 1, c.decoder_dim}));
  auto tok = enc.visual.to_vector();
  auto v = enc.v.to_vector();
  for (std::size_t b = 0; b < 2; ++b) {
    double norm = 0;
    for (std::size_t j = 0; j < c.decoder_dim; ++j) norm += tok[b * c.decoder_dim + j] * tok[b * c.decoder_dim + j];
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < c.decoder_dim; ++j) {
      EXPECT_NEAR(v[b * c.decoder_dim + j], tok[b * c.decoder_dim + j] / norm, 1e-6);
    }
  }
}

TEST(EncodeImage, JointPermutationOfPatchesAndPositionsKeepsEmbedding) {
  Mammut model(small_config());
  const auto& c = model.config();
  std::mt19937_64 rng(2);
  const std::size_t p = c.num_patches(), pd = c.patch_dim(), d = c.vision_dim;
  Tensor patches = random_tensor({1, p, pd}, rng);
  std::vector<std::size_t> perm(p);
  for (std::size_t i = 0; i < p; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  auto pv = patches.to_vector();
  auto gv = model.positional_grid().to_vector();
  std::vector<double> pp(pv.size()), gp(gv.size());
  for (std::size_t i = 0; i < p; ++i) {
    std::copy_n(pv.begin() + perm[i] * pd, pd, pp.begin() + i * pd);
    std::copy_n(gv.begin() + perm[i] * d, d, gp.begin() + i * d);
  }
  Tensor v0 = model.encode_image(patches).v;
  Tensor v1 = model.encode_image(Tensor::from({1, p, pd}, pp), Tensor::from(model.positional_grid().shape(), gp)).v;
  EXPECT_LT(max_abs_diff(v0, v1), 1e-5);
}

TEST(EncodeImage, ImageNetGeometry) {
  MammutConfig c = small_config();
  c.image_size = 224;
  c.patch_size = 16;
  c.vision_layers = 1;
  c.vision_dim = 8;
  Mammut model(c);
  ImageEncoding enc = model.encode_image(Tensor::zeros({1, 196, 768}));
  EXPECT_EQ(enc.tokens.shape(), (Shape{1, 196, 8}));
}

TEST(EncodeImage, MismatchedPatchCountIsError) {
  Mammut model(small_config());
  EXPECT_THROW(model.encode_image(Tensor::zeros({1, 5, model.config().patch_dim()})), DimensionError);
  EXPECT_THROW(model.encode_image(Tensor::zeros({1, 4, 7})), DimensionError);
}

TEST(EncodeImage, EmbeddingsAreUnitNorm) {
  Mammut model(small_config());
  std::mt19937_64 rng(3);
  auto v = model.encode_image(random_tensor({4, 4, model.config().patch_dim()}, rng)).v.to_vector();
  for (std::size_t b = 0; b < 4; ++b) {
    double n = 0;
    for (std::size_t j = 0; j < 16; ++j) n += v[b * 16 + j] * v[b * 16 + j];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(ProjectVisual, IdentityWeightsPassThrough) {
  Mammut model(small_config());
  Tensor w = model.parameters().get("projection.weight");
  w.mutable_buffer().fill(0.0);
  for (std::size_t i = 0; i < 16; ++i) w.mutable_buffer().set(i * 16 + i, 1.0);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3, 16}, rng);
  EXPECT_EQ(model.project_visual(x).to_vector(), x.to_vector());
}

TEST(ProjectVisual, ZeroWeightsGiveZero) {
  Mammut model(small_config());
  model.parameters().get("projection.weight").mutable_buffer().fill(0.0);
  std::mt19937_64 rng(6);
  for (double v : model.project_visual(random_tensor({2, 3, 16}, rng)).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(ProjectVisual, MatchesPerTokenLoop) {
  MammutConfig c = small_config();
  c.decoder_dim = 8;
  Mammut model(c);
  randomize_all(model, 7);
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({2, 3, 16}, rng);
  auto y = model.project_visual(x).to_vector();
  auto xv = x.to_vector();
  auto w = model.parameters().get("projection.weight").to_vector();
  auto bias = model.parameters().get("projection.bias").to_vector();
  for (std::size_t tok = 0; tok < 6; ++tok) {
    for (std::size_t j = 0; j < 8; ++j) {
      double ref = bias[j];
      for (std::size_t k = 0; k < 16; ++k) ref += xv[tok * 16 + k] * w[k * 8 + j];
      EXPECT_NEAR(y[tok * 8 + j], ref, 1e-5);
    }
  }
}

TEST(ContrastivePass, IndependentOfImages) {
  Mammut model(small_config());
  randomize_all(model, 9);
  std::mt19937_64 rng(10);
  auto tokens = random_tokens(3, 8, rng, 16, 2);
  auto before = model.contrastive_pass(tokens).to_vector();
  model.encode_image(random_tensor({3, 4, model.config().patch_dim()}, rng));
  auto after_a = model.contrastive_pass(tokens).to_vector();
  model.encode_image(random_tensor({3, 4, model.config().patch_dim()}, rng));
  auto after_b = model.contrastive_pass(tokens).to_vector();
  EXPECT_EQ(before, after_a);
  EXPECT_EQ(before, after_b);
}

TEST(ContrastivePass, SingleTokenMaskingModesAgree) {
  MammutConfig bi = small_config();
  MammutConfig causal = bi;
  causal.masking_mode_contrastive = MaskingMode::causal;
  Mammut a(bi), b(causal);
  auto tokens = TokenBatch::from_rows({{1}, {1}}, 1);
  EXPECT_EQ(a.contrastive_pass(tokens).to_vector(), b.contrastive_pass(tokens).to_vector());
}

TEST(ContrastivePass, PadContentIsIgnored) {
  Mammut model(small_config());
  randomize_all(model, 11);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto tokens = random_tokens(3, 8, rng, 16, 2);
    auto shuffled = tokens;
    for (std::size_t i = 0; i < shuffled.ids.size(); ++i) {
      if (!shuffled.valid[i]) shuffled.ids[i] = static_cast<std::int32_t>(rng() % 16);
    }
    EXPECT_LT(max_abs_diff(model.contrastive_pass(tokens), model.contrastive_pass(shuffled)), 1e-6);
  }
}

TEST(ContrastivePass, RowsAreUnitNorm) {
  Mammut model(small_config());
  std::mt19937_64 rng(13);
  auto l = model.contrastive_pass(random_tokens(4, 8, rng, 16)).to_vector();
  for (std::size_t b = 0; b < 4; ++b) {
    double n = 0;
    for (std::size_t j = 0; j < 16; ++j) n += l[b * 16 + j] * l[b * 16 + j];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(ContrastivePass, EmptyRowIsError) {
  Mammut model(small_config());
  EXPECT_THROW(model.contrastive_pass(TokenBatch::from_rows({{1, 4}, {}}, 3)), ContractError);
}

TEST(GenerativePass, CausalityHoldsForEverySuffix) {
  Mammut model(small_config());
  randomize_all(model, 14);
  std::mt19937_64 rng(15);
  Tensor visual = model.encode_image(random_tensor({2, 4, model.config().patch_dim()}, rng)).visual;
  auto tokens = random_tokens(2, 8, rng, 16, 8);
  Tensor base = model.generative_pass(tokens, visual);
  const std::size_t v = 16;
  for (std::size_t t = 0; t + 1 < 8; ++t) {
    auto changed = tokens;
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t s = t + 1; s < 8; ++s) changed.ids[b * 8 + s] = static_cast<std::int32_t>(3 + rng() % 13);
    }
    auto a = base.to_vector(), c = model.generative_pass(changed, visual).to_vector();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t s = 0; s <= t; ++s)
        for (std::size_t k = 0; k < v; ++k) EXPECT_LT(std::abs(a[(b * 8 + s) * v + k] - c[(b * 8 + s) * v + k]), 1e-6);
  }
}

TEST(GenerativePass, PadContentIsIgnoredAtValidPositions) {
  Mammut model(small_config());
  randomize_all(model, 16);
  std::mt19937_64 rng(17);
  Tensor visual = model.encode_image(random_tensor({3, 4, model.config().patch_dim()}, rng)).visual;
  auto tokens = random_tokens(3, 8, rng, 16, 2);
  auto other = tokens;
  for (std::size_t i = 0; i < other.ids.size(); ++i) {
    if (!other.valid[i]) other.ids[i] = static_cast<std::int32_t>(rng() % 16);
  }
  auto a = model.generative_pass(tokens, visual).to_vector();
  auto b = model.generative_pass(other, visual).to_vector();
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (!tokens.valid[i]) continue;
    for (std::size_t k = 0; k < 16; ++k) EXPECT_LT(std::abs(a[i * 16 + k] - b[i * 16 + k]), 1e-6);
  }
}

TEST(GenerativePass, ZeroInitCrossAttentionMatchesTextOnlyDecoder) {
  Mammut model(small_config());
  std::mt19937_64 rng(18);
  auto tokens = random_tokens(2, 6, rng, 16, 2);
  Tensor logits = model.generative_pass(tokens, Tensor::zeros({2, 4, 16}));
  Tensor text_only = model.decode(tokens, MaskingMode::causal, nullptr);
  Tensor ref = add(matmul(text_only, model.parameters().get("decoder.output.weight")),
                   model.parameters().get("decoder.output.bias"));
  EXPECT_EQ(logits.to_vector(), ref.to_vector());
}

TEST(GenerativePass, MissingVisualTokensIsError) {
  Mammut model(small_config());
  auto tokens = TokenBatch::from_rows({{1, 4}}, 2);
  EXPECT_THROW(model.generative_pass(tokens, Tensor{}), ContractError);
}

TEST(GenerativePass, TiedEmbeddingsShareTable) {
  MammutConfig c = small_config();
  c.tie_embeddings = true;
  Mammut model(c);
  EXPECT_FALSE(model.parameters().contains("decoder.output.weight"));
  std::mt19937_64 rng(19);
  auto tokens = random_tokens(2, 6, rng, 16, 2);
  Tensor logits = model.generative_pass(tokens, Tensor::zeros({2, 4, 16}));
  auto leaves = reachable_leaves(sum(logits));
  EXPECT_NE(std::find(leaves.begin(), leaves.end(), model.parameters().get("decoder.token_embed").id()),
            leaves.end());
}

TEST(CrossAttention, PlacedAfterEveryKthLayer) {
  MammutConfig c = small_config();
  Mammut model(c);
  std::vector<std::string> cross;
  for (const auto& [name, t] : model.parameters().entries()) {
    if (name.rfind("decoder.cross", 0) == 0 && name.find(".norm.gain") != std::string::npos) cross.push_back(name);
  }
  EXPECT_EQ(cross, (std::vector<std::string>{"decoder.cross1.norm.gain", "decoder.cross3.norm.gain"}));
  EXPECT_EQ(model.parameters().element_count(), parameter_count(c));
  MammutConfig none = c;
  none.cross_attention_every_k = 8;
  const std::size_t d = c.decoder_dim;
  EXPECT_EQ(parameter_count(c) - parameter_count(none), 2 * (4 * d * d + 6 * d));
}

TEST(ParameterCount, MatchesClosedFormForRandomConfigs) {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    MammutConfig c;
    c.patch_size = 2 + rng() % 3;
    c.image_size = c.patch_size * (1 + rng() % 3);
    c.vision_heads = 1 + rng() % 3;
    c.vision_dim = c.vision_heads * (1 + rng() % 4);
    c.vision_layers = 1 + rng() % 3;
    c.decoder_heads = 1 + rng() % 3;
    c.decoder_dim = c.decoder_heads * (1 + rng() % 4);
    c.decoder_layers = 1 + rng() % 6;
    c.cross_attention_every_k = 1 + rng() % 4;
    c.mlp_ratio = 1 + rng() % 4;
    c.vocab_size = 3 + rng() % 20;
    c.max_text_len = 2 + rng() % 10;
    c.use_projection_head = rng() % 2;
    c.use_attention_pooling = rng() % 2;
    c.tie_embeddings = rng() % 2;
    Mammut model(c);
    EXPECT_EQ(model.parameters().element_count(), parameter_count(c)) << "trial " << trial;
    EXPECT_LE(c.cross_attention_layers(), c.decoder_layers);
  }
}

TEST(WeightSharing, ContrastiveParametersAreSubsetOfGenerative) {
  MammutConfig c = small_config();
  Mammut model(c);
  std::mt19937_64 rng(21);
  auto tokens = random_tokens(2, 6, rng, 16, 2);
  Tensor visual = model.encode_image(random_tensor({2, 4, c.patch_dim()}, rng)).visual;
  auto contrastive = reachable_leaves(sum(model.contrastive_pass(tokens)));
  auto generative = reachable_leaves(sum(model.generative_pass(tokens, visual)));
  std::set<const detail::Node*> gen(generative.begin(), generative.end());
  for (const auto* node : contrastive) {
    EXPECT_TRUE(gen.count(node)) << model.parameters().name_of(node);
  }
  // Every shared decoder parameter is reached by both passes as the same object.
  std::set<const detail::Node*> con(contrastive.begin(), contrastive.end());
  for (const auto& name : model.decoder_parameter_names(false)) {
    const auto* node = model.parameters().get(name).id();
    if (name.rfind("decoder.output", 0) == 0) {
      EXPECT_FALSE(con.count(node)) << name;
    } else {
      EXPECT_TRUE(con.count(node)) << name;
    }
    EXPECT_TRUE(gen.count(node)) << name;
  }
  for (const auto* node : gen) {
    if (con.count(node)) continue;
    const std::string name = model.parameters().name_of(node);
    const bool expected = name.rfind("decoder.cross", 0) == 0 || name.rfind("decoder.output", 0) == 0 ||
                          name.rfind("vision.", 0) == 0 || name.rfind("projection", 0) == 0;
    EXPECT_TRUE(expected) << name;
  }
}

TEST(Generate, ForcedEosGivesEmptyContinuation) {
  Mammut model(small_config());
  model.parameters().get("decoder.output.weight").mutable_buffer().fill(0.0);
  model.parameters().get("decoder.output.bias").mutable_buffer().set(data::Vocabulary::eos_id, 10.0);
  std::vector<std::int32_t> prompt{data::Vocabulary::bos_id};
  EXPECT_TRUE(model.generate(Tensor::zeros({4, model.config().patch_dim()}), prompt, 10).empty());
}

TEST(Generate, DeterministicAndMatchesDirectArgmax) {
  Mammut model(small_config());
  randomize_all(model, 22);
  std::mt19937_64 rng(23);
  Tensor patches = random_tensor({1, 4, model.config().patch_dim()}, rng);
  std::vector<std::int32_t> prompt{1, 5, 7};
  auto a = model.generate(patches, prompt, 10);
  auto b = model.generate(patches, prompt, 10);
  EXPECT_EQ(a, b);
  EXPECT_LE(prompt.size() + a.size(), 10u);

  Tensor visual = model.encode_image(patches).visual;
  auto logits = model.generative_pass(TokenBatch::from_rows({prompt}, 3), visual).to_vector();
  std::size_t best = 0;
  for (std::size_t k = 1; k < 16; ++k) {
    if (logits[2 * 16 + k] > logits[2 * 16 + best]) best = k;
  }
  auto one = model.generate(patches, prompt, 4);
  if (best == data::Vocabulary::eos_id) {
    EXPECT_TRUE(one.empty());
  } else {
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], static_cast<std::int32_t>(best));
  }
}

TEST(Generate, BatchedMatchesSingle) {
  Mammut model(small_config());
  randomize_all(model, 24);
  std::mt19937_64 rng(25);
  Tensor patches = random_tensor({3, 4, model.config().patch_dim()}, rng);
  Tensor visual = model.encode_image(patches).visual;
  std::vector<std::vector<std::int32_t>> prompts{{1}, {1, 4}, {1}};
  auto batched = model.generate_batch(visual, prompts, 10);
  auto pv = patches.to_vector();
  const std::size_t n = 4 * model.config().patch_dim();
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor one = Tensor::from({1, 4, model.config().patch_dim()},
                              std::vector<double>(pv.begin() + i * n, pv.begin() + (i + 1) * n));
    EXPECT_EQ(model.generate(one, prompts[i], 10), batched[i]) << i;
  }
}

TEST(Generate, PromptMustStartWithBos) {
  Mammut model(small_config());
  std::vector<std::int32_t> prompt{4};
  EXPECT_THROW(model.generate(Tensor::zeros({4, model.config().patch_dim()}), prompt, 5), ContractError);
}

TEST(Config, RejectsInvalid) {
  MammutConfig c = small_config();
  c.decoder_heads = 3;
  EXPECT_THROW(Mammut{c}, ConfigError);
  c = small_config();
  c.cross_attention_every_k = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace mammut
