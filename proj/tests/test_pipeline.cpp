#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "nflat/checkpoint.hpp"
#include "nflat/model.hpp"
#include "nflat/synthetic.hpp"
#include "nflat/train.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace nflat;

namespace {

Sentence labeled(const std::string& text, std::vector<std::string> tags) {
  Sentence s;
  s.chars = utf8::decode(text);
  s.tags = std::move(tags);
  s.id = text;
  return s;
}

Corpus tiny_corpus() {
  return {labeled("abcd", {"B-PER", "E-PER", "O", "S-LOC"}), labeled("cab", {"O", "B-PER", "E-PER"}),
          labeled("dd", {"S-LOC", "O"})};
}

ModelConfig quiet_config(std::size_t d = 8, std::size_t heads = 2) {
  ModelConfig c;
  c.d_model = d;
  c.heads = heads;
  c.char_embed_dropout = c.word_embed_dropout = c.fc_dropout1 = c.fc_dropout2 = c.attn_dropout = 0.0;
  c.batch_size = 4;
  return c;
}

std::vector<double> all_params(const NflatModel& m) {
  std::vector<double> out;
  for (const auto& [_, t] : m.params().items()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<const Sentence*> ptrs(const Corpus& c) {
  std::vector<const Sentence*> out;
  for (const auto& s : c) out.push_back(&s);
  return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

SyntheticConfig small_synthetic(std::uint64_t seed) {
  SyntheticConfig s;
  s.seed = seed;
  s.train = 40;
  s.dev = 20;
  s.test = 20;
  s.max_len = 16;
  s.embed_dim = 8;
  return s;
}

}  // namespace

TEST(Model, FullModelGradientsMatchFiniteDifferences) {
  const auto corpus = tiny_corpus();
  const std::vector<std::string> lex{"ab", "bc", "cd", "abc"};
  Rng rng(61);
  auto model = NflatModel::create(quiet_config(), corpus, lex, std::nullopt, rng);
  std::mt19937_64 gen(61);
  fixtures::randomize(model.params(), gen, 0.3);
  const auto batch = model.make_batch(ptrs(corpus));
  ASSERT_LE(batch.max_chars, 4u);
  std::vector<Tensor> wrt;
  for (auto& [_, t] : model.params().items()) wrt.push_back(t);
  EXPECT_LT(oracle::grad_check([&] { return model.loss(batch); }, wrt), 1e-4);
}

TEST(Model, ProjectedEmbeddingsGradCheck) {
  const auto corpus = tiny_corpus();
  const std::vector<std::string> lex{"ab", "cd"};
  Rng rng(62);
  auto table = EmbeddingTable::random(lex, 6, rng, 0.5);
  auto model = NflatModel::create(quiet_config(), corpus, lex, table, rng);
  ASSERT_TRUE(model.params().contains("word_proj"));
  std::mt19937_64 gen(62);
  fixtures::randomize(model.params(), gen, 0.3);
  const auto batch = model.make_batch(ptrs(corpus));
  std::vector<Tensor> wrt;
  for (auto& [_, t] : model.params().items()) wrt.push_back(t);
  EXPECT_LT(oracle::grad_check([&] { return model.loss(batch); }, wrt), 1e-4);
}

TEST(Model, EmissionsShapeIgnoresWordCount) {
  const auto corpus = tiny_corpus();
  for (const std::vector<std::string>& lex : {std::vector<std::string>{}, std::vector<std::string>{"ab", "bc", "cd", "abc", "ca"}}) {
    Rng rng(63);
    auto model = NflatModel::create(quiet_config(), corpus, lex, std::nullopt, rng);
    const auto batch = model.make_batch(ptrs(corpus));
    const auto em = model.forward(batch);
    EXPECT_EQ(em.shape(), (Shape{3, 4, model.schema().size()}));
    for (double x : em.data()) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(Model, EmptyLexiconRunsThroughNonWord) {
  const auto corpus = tiny_corpus();
  Rng rng(64);
  auto model = NflatModel::create(quiet_config(), corpus, {}, std::nullopt, rng);
  const auto batch = model.make_batch(corpus[0]);
  ASSERT_EQ(batch.words[0].size(), 1u);
  EXPECT_TRUE(batch.words[0][0].is_non_word());
  EXPECT_EQ(model.predict_tags(corpus[0]).size(), 4u);

  auto cfg = quiet_config();
  cfg.ablation = Ablation::NoTag;
  Rng rng2(64);
  auto no_tag = NflatModel::create(cfg, corpus, {}, std::nullopt, rng2);
  EXPECT_THROW(no_tag.predict_tags(corpus[0]), DegenerateRowError);
  cfg.tag_fallback = true;
  Rng rng3(64);
  auto fallback = NflatModel::create(cfg, corpus, {}, std::nullopt, rng3);
  EXPECT_EQ(fallback.predict_tags(corpus[0]).size(), 4u);
}

TEST(Model, SameSeedSameEmissions) {
  const auto data = gen_synthetic(small_synthetic(65));
  auto cfg = quiet_config(16, 4);
  cfg.char_embed_dropout = 0.3;
  auto build = [&] {
    Rng rng(cfg.seed);
    return NflatModel::create(cfg, data.train, data.lexicon, synthetic_embeddings(data), rng);
  };
  auto a = build(), b = build();
  const auto batch = a.make_batch(ptrs(data.dev));
  EXPECT_TRUE(same_bits(fixtures::vec(a.forward(batch)), fixtures::vec(b.forward(batch))));
  Rng ra(5), rb(5);
  EXPECT_TRUE(same_bits(fixtures::vec(a.forward(batch, {.training = true, .rng = &ra})),
                        fixtures::vec(b.forward(batch, {.training = true, .rng = &rb}))));
}

TEST(Model, PaddedBatchMatchesSingleSentence) {
  const auto data = gen_synthetic(small_synthetic(66));
  Rng rng(66);
  auto model = NflatModel::create(quiet_config(16, 4), data.train, data.lexicon, synthetic_embeddings(data), rng);
  std::vector<const Sentence*> batch_ptrs;
  for (std::size_t i = 0; i < 6; ++i) batch_ptrs.push_back(&data.dev[i]);
  const auto batch = model.make_batch(batch_ptrs);
  const auto em = model.forward(batch);
  const std::size_t L = model.schema().size(), n = batch.max_chars;
  for (std::size_t b = 0; b < batch_ptrs.size(); ++b) {
    const auto single = model.forward(model.make_batch(*batch_ptrs[b]));
    for (std::size_t x = 0; x < single.numel(); ++x) ASSERT_NEAR(em.data()[b * n * L + x], single.data()[x], 1e-6);
  }
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  const auto data = gen_synthetic(small_synthetic(67));
  auto cfg = quiet_config();
  cfg.lr = 0.0;
  cfg.epochs = 1;
  Rng rng(67);
  auto model = NflatModel::create(cfg, data.train, data.lexicon, std::nullopt, rng);
  const auto before = all_params(model);
  train_model(model, data.train, data.dev);
  EXPECT_TRUE(same_bits(before, all_params(model)));
}

TEST(Training, OneStepLowersLossForMostSeeds) {
  const auto corpus = tiny_corpus();
  const std::vector<std::string> lex{"ab", "cd"};
  int lowered = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = quiet_config();
    cfg.seed = seed;
    Rng rng(seed);
    auto model = NflatModel::create(cfg, corpus, lex, std::nullopt, rng);
    const auto batch = model.make_batch(ptrs(corpus));
    const double before = model.loss(batch).item();
    Adam opt(model.params());
    train_step(model, batch, opt, 1e-3, rng);
    if (model.loss(batch).item() < before) ++lowered;
  }
  EXPECT_GE(lowered, 19);
}

TEST(Training, MetricsLogAndCheckpointRoundTrip) {
  const auto data = gen_synthetic(small_synthetic(68));
  auto cfg = quiet_config(16, 4);
  cfg.epochs = 3;
  cfg.lr = 3e-3;
  cfg.log_train_f1 = true;
  Rng rng(68);
  auto model = NflatModel::create(cfg, data.train, data.lexicon, synthetic_embeddings(data), rng);
  std::ostringstream metrics;
  const auto result = train_model(model, data.train, data.dev, &metrics);
  ASSERT_EQ(result.epochs.size(), 3u);
  std::istringstream lines(metrics.str());
  std::string line;
  std::getline(lines, line);
  const auto header = nlohmann::json::parse(line);
  EXPECT_EQ(header.at("config").at("d_model"), "16");
  std::size_t epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), ++epochs);
    for (const char* key : {"loss", "dev_p", "dev_r", "dev_f1", "lr", "wall_seconds", "train_f1"}) EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(epochs, 3u);

  std::stringstream ckpt;
  save_checkpoint(model, ckpt);
  const auto loaded = load_checkpoint(ckpt);
  EXPECT_EQ(predict(model, data.test), predict(loaded, data.test));
  EXPECT_DOUBLE_EQ(evaluate(model, data.test).f1, evaluate(loaded, data.test).f1);
  EXPECT_TRUE(same_bits(all_params(model), all_params(loaded)));
}

TEST(Training, WorkersDoNotChangePredictions) {
  const auto data = gen_synthetic(small_synthetic(69));
  Rng rng(69);
  auto model = NflatModel::create(quiet_config(16, 4), data.train, data.lexicon, std::nullopt, rng);
  EXPECT_EQ(predict(model, data.test, 1), predict(model, data.test, 3));
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(bad), DataError);
}

TEST(Config, ParsesOverridesAndRejectsUnknownKeys) {
  std::istringstream in("# comment\nd_model = 32\nheads=4  # trailing\nablation=-RPE\nlr=0.003\n\n");
  const auto c = ModelConfig::parse(in, "c.cfg");
  EXPECT_EQ(c.d_model, 32u);
  EXPECT_EQ(c.heads, 4u);
  EXPECT_EQ(c.ablation, Ablation::NoRpe);
  EXPECT_DOUBLE_EQ(c.lr, 0.003);
  std::istringstream round(c.to_text());
  EXPECT_EQ(ModelConfig::parse(round).to_text(), c.to_text());

  std::istringstream unknown("d_model=32\nwidth=3\n");
  try {
    ModelConfig::parse(unknown, "c.cfg");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("c.cfg:2"), std::string::npos) << e.what();
  }
  std::istringstream bad_value("heads=four\n");
  EXPECT_THROW(ModelConfig::parse(bad_value), ConfigError);
  ModelConfig odd;
  odd.d_model = 30;
  odd.heads = 4;
  EXPECT_THROW(odd.validate(), ConfigError);
  ModelConfig f32;
  f32.precision = "f32";
  EXPECT_THROW(f32.validate(), ConfigError);
}

TEST(Data, ConllReadWriteRoundTrip) {
  std::istringstream in("今 B-LOC\n天 E-LOC\n\n\n好 O\n");
  const auto corpus = read_conll(in, "t.conll");
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[0].tags, (std::vector<std::string>{"B-LOC", "E-LOC"}));
  std::ostringstream out;
  write_conll(out, corpus);
  std::istringstream again(out.str());
  const auto back = read_conll(again);
  EXPECT_EQ(back[0].chars, corpus[0].chars);
  EXPECT_EQ(back[1].tags, corpus[1].tags);
}

TEST(Data, MalformedLinesCarryLineNumbers) {
  std::istringstream mixed("a O\nb\n");
  try {
    read_conll(mixed, "m.conll");
    FAIL() << "mixed lines accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m.conll:2"), std::string::npos) << e.what();
  }
  std::istringstream wide("ab O\n");
  EXPECT_THROW(read_conll(wide), DataError);
  std::istringstream raw("今天 好\n\n  x y\n");
  const auto sents = read_raw_text(raw);
  ASSERT_EQ(sents.size(), 2u);
  EXPECT_EQ(sents[0].chars, U"今天好");
  EXPECT_FALSE(sents[0].labeled());
}

TEST(Synthetic, SameSeedSameFiles) {
  testing_support::TempDir a, b;
  write_synthetic(gen_synthetic(small_synthetic(70)), a.path());
  write_synthetic(gen_synthetic(small_synthetic(70)), b.path());
  for (const char* name : {"train.conll", "dev.conll", "test.conll", "lexicon.txt", "embeddings.vec"}) {
    std::ifstream fa(a.file(name), std::ios::binary), fb(b.file(name), std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_FALSE(sa.empty()) << name;
    EXPECT_EQ(sa, sb) << name;
  }
  const auto data = gen_synthetic(small_synthetic(70));
  const auto other = gen_synthetic(small_synthetic(71));
  EXPECT_NE(data.train.front().chars, other.train.front().chars);
}

TEST(Synthetic, GoldEntitiesAreLexiconWords) {
  const auto data = gen_synthetic(small_synthetic(72));
  const std::set<std::string> lex(data.lexicon.begin(), data.lexicon.end());
  std::size_t entities = 0;
  for (const Corpus* c : {&data.train, &data.dev, &data.test})
    for (const auto& s : *c)
      for (const auto& e : extract_entities(s.tags, TagScheme::BMES)) {
        ++entities;
        const auto surface = utf8::encode(std::u32string_view(s.chars).substr(static_cast<std::size_t>(e.head - 1),
                                                                              static_cast<std::size_t>(e.tail - e.head + 1)));
        EXPECT_TRUE(lex.count(surface)) << surface;
      }
  EXPECT_GT(entities, 0u);
  const auto st = match_stats(corpus_chars(data.train), build_trie(std::span<const std::string>(data.lexicon)));
  EXPECT_GT(st.avg_matched_len, 0.0);
}

TEST(Synthetic, HeldOutWordsOnlyOutsideTraining) {
  const auto data = gen_synthetic(small_synthetic(73));
  for (const auto& w : data.vocab) {
    if (!w.heldout) continue;
    for (const auto& s : data.train) EXPECT_EQ(s.chars.find(w.surface), std::u32string::npos);
  }
  SyntheticConfig bad;
  bad.alphabet = 2;
  bad.entity_types = 3;
  EXPECT_THROW(gen_synthetic(bad), ConfigError);
}
