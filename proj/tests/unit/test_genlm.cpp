#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emd/corpus/batch.hpp"
#include "emd/corpus/synth.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/error.hpp"
#include "emd/genlm/generate.hpp"
#include "emd/genlm/lm.hpp"
#include "helpers.hpp"

TEST_SUITE_BEGIN("genlm");

using namespace emd;
using namespace emd::genlm;
using corpus::ApiTrace;
using corpus::Label;

namespace {

LmConfig small_config(std::size_t vocab, std::size_t max_len = 32) {
  LmConfig c;
  c.vocab_size = vocab;
  c.max_len = max_len;
  c.embed_dim = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.ff_dim = 64;
  c.dropout = 0.0f;
  c.seed = 3;
  return c;
}

std::vector<float> run_logits(const GenerativeLm& lm, const std::vector<std::int32_t>& ids, std::size_t b,
                              std::size_t l, const std::vector<std::uint8_t>& mask) {
  Tape t = Tape::inference();
  auto y = lm.forward(t, ids, b, l, mask);
  return {y.data().begin(), y.data().end()};
}

std::vector<ApiTrace> repeated_abc(std::size_t copies, std::size_t len) {
  ApiTrace t{"abc", Label::benign, {}, ""};
  const char* names[] = {"A", "B", "C"};
  for (std::size_t i = 0; i < len; ++i) t.calls.emplace_back(names[i % 3]);
  return std::vector<ApiTrace>(copies, t);
}

void zero_head(GenerativeLm& lm) {
  for (auto& [name, p] : lm.parameters())
    if (name.rfind("head.", 0) == 0) std::fill(p.data().begin(), p.data().end(), 0.0f);
}

}  // namespace

TEST_CASE("lm forward is causal") {
  const std::size_t V = 20, L = 12;
  GenerativeLm lm(small_config(V), 0);
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.below(3);
    std::vector<std::int32_t> ids(B * L);
    for (auto& x : ids) x = static_cast<std::int32_t>(4 + rng.below(V - 4));
    std::vector<std::uint8_t> mask(B * L, 1);
    const auto base = run_logits(lm, ids, B, L, mask);
    const std::size_t t = rng.below(L - 1);
    auto perturbed = ids;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = t + 1; j < L; ++j) perturbed[b * L + j] = static_cast<std::int32_t>(4 + rng.below(V - 4));
    const auto other = run_logits(lm, perturbed, B, L, mask);
    double worst = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j <= t; ++j)
        for (std::size_t v = 0; v < V; ++v) {
          const auto i = (b * L + j) * V + v;
          worst = std::max(worst, std::abs(static_cast<double>(base[i]) - other[i]));
        }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("zeroed output projection gives a uniform distribution") {
  const std::size_t V = 17;
  GenerativeLm lm(small_config(V), 0);
  zero_head(lm);
  Tape t = Tape::inference();
  std::vector<std::int32_t> ids{2, 5, 6, 7};
  std::vector<std::uint8_t> mask(4, 1);
  auto logits = lm.forward(t, ids, 1, 4, mask);
  for (float x : logits.data()) CHECK(x == 0.0f);
  const auto p = predict_next(lm, ids);
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(V); ++id) {
    if (excluded_from_generation(id)) CHECK(p[static_cast<std::size_t>(id)] == 0.0f);
    else CHECK(p[static_cast<std::size_t>(id)] == doctest::Approx(1.0 / (V - 3)));
  }
}

TEST_CASE("a row alone matches the same row inside a batch") {
  const std::size_t V = 20, L = 10, B = 8;
  GenerativeLm lm(small_config(V), 0);
  Rng rng(32);
  std::vector<std::int32_t> ids(B * L, corpus::kPad);
  std::vector<std::uint8_t> mask(B * L, 0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = 3 + rng.below(L - 2);
    for (std::size_t j = 0; j < len; ++j) {
      ids[b * L + j] = static_cast<std::int32_t>(4 + rng.below(V - 4));
      mask[b * L + j] = 1;
    }
  }
  const auto batch = run_logits(lm, ids, B, L, mask);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<std::int32_t> row(ids.begin() + b * L, ids.begin() + (b + 1) * L);
    std::vector<std::uint8_t> rmask(mask.begin() + b * L, mask.begin() + (b + 1) * L);
    const auto single = run_logits(lm, row, 1, L, rmask);
    for (std::size_t j = 0; j < L; ++j) {
      if (!rmask[j]) continue;
      for (std::size_t v = 0; v < V; ++v) CHECK(std::abs(single[j * V + v] - batch[(b * L + j) * V + v]) <= 1e-5);
    }
  }
}

TEST_CASE("forward rejects sequences longer than the context") {
  GenerativeLm lm(small_config(10, 4), 0);
  Tape t = Tape::inference();
  std::vector<std::int32_t> ids(5, 4);
  std::vector<std::uint8_t> mask(5, 1);
  CHECK_THROWS_AS(lm.forward(t, ids, 1, 5, mask), ShapeError);
}

TEST_CASE("config validation") {
  auto c = small_config(10);
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  auto d = small_config(10, 1);
  CHECK_THROWS_AS(d.validate(), ConfigError);
  auto p = LmConfig::paper_scale(50);
  CHECK(p.max_len == 500);
  CHECK(LmConfig::from_json(p.to_json()).to_json() == p.to_json());
}

TEST_CASE("predict_next is a distribution") {
  const std::size_t V = 25;
  GenerativeLm lm(small_config(V), 0);
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::int32_t> prefix{corpus::kBos};
    const auto n = rng.below(20);
    for (std::size_t i = 0; i < n; ++i) prefix.push_back(static_cast<std::int32_t>(4 + rng.below(V - 4)));
    const auto p = predict_next(lm, prefix);
    double s = 0.0;
    for (float x : p) {
      CHECK(x >= 0.0f);
      s += x;
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
    const auto best = std::max_element(p.begin(), p.end()) - p.begin();
    CHECK(best != corpus::kPad);
  }
  CHECK_THROWS_AS(predict_next(lm, std::vector<std::int32_t>{}), DataError);
}

TEST_CASE("greedy, top-k and batching agree on their definitions") {
  const std::size_t V = 25;
  GenerativeLm lm(small_config(V, 40), 0);
  Rng rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::int32_t> prefix{corpus::kBos};
    for (std::size_t i = 0; i < 1 + rng.below(10); ++i) prefix.push_back(static_cast<std::int32_t>(4 + rng.below(V - 4)));
    const auto p = predict_next(lm, prefix);
    GenRequest one{prefix, 1, Strategy::greedy, 5, 1.0, 0};
    const auto g1 = generate_suffix(lm, one);
    REQUIRE(g1.size() == 1);
    CHECK(g1[0] == std::max_element(p.begin(), p.end()) - p.begin());

    GenRequest greedy{prefix, 8, Strategy::greedy, 5, 1.0, 0};
    GenRequest k1{prefix, 8, Strategy::topk, 1, 0.7, static_cast<std::uint64_t>(trial)};
    const auto g = generate_suffix(lm, greedy);
    CHECK(g.size() == 8);
    CHECK(generate_suffix(lm, k1) == g);
    for (auto id : g) CHECK(!excluded_from_generation(id));

    GenRequest k5{prefix, 8, Strategy::topk, 5, 1.0, 99};
    CHECK(generate_suffix(lm, k5) == generate_suffix(lm, k5));
  }
  std::vector<std::vector<std::int32_t>> prefixes{{2, 5}, {2, 6, 7, 8}, {2, 9, 9}};
  for (auto strategy : {Strategy::greedy, Strategy::topk}) {
    GenRequest settings{{}, 6, strategy, 4, 1.0, 17};
    const auto batch = generate_batch(lm, prefixes, settings);
    for (std::size_t i = 0; i < prefixes.size(); ++i) {
      GenRequest r = settings;
      r.prefix = prefixes[i];
      CHECK(batch[i] == generate_suffix(lm, r));
    }
  }
}

TEST_CASE("generation request validation") {
  GenerativeLm lm(small_config(12, 10), 0);
  CHECK_THROWS_AS(generate_suffix(lm, {{2, 5, 6}, 8, Strategy::greedy, 5, 1.0, 0}), ConfigError);
  CHECK_THROWS_AS(generate_suffix(lm, {{2, 5}, 0, Strategy::greedy, 5, 1.0, 0}), ConfigError);
  CHECK_THROWS_AS(generate_suffix(lm, {{2, 5}, 2, Strategy::topk, 0, 1.0, 0}), ConfigError);
  CHECK_THROWS_AS(generate_suffix(lm, {{2, 5}, 2, Strategy::topk, 2, 0.0, 0}), ConfigError);
}

TEST_CASE("assemble_extended") {
  std::vector<std::int32_t> prefix(20, 4), s10(10, 5), s30(30, 6);
  auto a = assemble_extended(prefix, s10, 128);
  CHECK(a.size() == 30);
  CHECK(std::equal(prefix.begin(), prefix.end(), a.begin()));
  CHECK(assemble_extended(prefix, s30, 128).size() == 50);
  CHECK_THROWS_AS(assemble_extended(prefix, std::vector<std::int32_t>{}, 128), ConfigError);
  CHECK_THROWS_AS(assemble_extended(prefix, s30, 40), ConfigError);
}

TEST_CASE("a uniform model has perplexity equal to the vocabulary size") {
  auto traces = repeated_abc(4, 20);
  corpus::Vocabulary vocab({"A", "B", "C"});
  auto cfg = small_config(vocab.size());
  GenerativeLm lm(cfg, vocab.hash());
  zero_head(lm);
  CHECK(perplexity(lm, traces, vocab) == doctest::Approx(static_cast<double>(vocab.size())).epsilon(1e-5));
}

TEST_CASE("memorizes a repeated trace") {
  auto traces = repeated_abc(1, 24);
  corpus::Vocabulary vocab({"A", "B", "C"});
  GenerativeLm lm(small_config(vocab.size()), vocab.hash());
  TrainOptions opts;
  opts.epochs = 30;
  opts.batch_size = 1;
  opts.lr = 1e-2;
  auto curve = lm_train(lm, traces, traces, vocab, opts);
  CHECK(curve.train.size() == 30);
  CHECK(curve.dev.size() == 30);
  CHECK(perplexity(lm, traces, vocab) < 1.5);
  const std::vector<std::int32_t> prefix{corpus::kBos, vocab.id_of("A"), vocab.id_of("B")};
  const auto p = predict_next(lm, prefix);
  CHECK(std::max_element(p.begin(), p.end()) - p.begin() == vocab.id_of("C"));
}

TEST_CASE("training is seeded and the loss settles") {
  corpus::SynthConfig sc;
  sc.vocab_size = 40;
  sc.n_traces = 120;
  sc.seed = 4;
  const auto traces = corpus::generate_synthetic(sc);
  std::vector<ApiTrace> train(traces.begin(), traces.begin() + 100), dev(traces.begin() + 100, traces.end());
  const auto vocab = corpus::build_vocab(train, 1000);
  auto cfg = small_config(vocab.size(), 80);
  cfg.dropout = 0.1f;
  TrainOptions opts;
  opts.epochs = 5;
  opts.batch_size = 16;
  opts.lr = 3e-3;
  opts.seed = 9;
  GenerativeLm a(cfg, vocab.hash()), b(cfg, vocab.hash());
  const double untrained = perplexity(a, dev, vocab);
  const auto ca = lm_train(a, train, dev, vocab, opts);
  const auto cb = lm_train(b, train, dev, vocab, opts);
  CHECK(ca.train == cb.train);
  CHECK(ca.dev == cb.dev);
  for (std::size_t e = 2; e < ca.train.size(); ++e) CHECK(ca.train[e] <= ca.train[e - 1] * 1.05);
  CHECK(perplexity(a, dev, vocab) <= 0.7 * untrained);
  CHECK_THROWS_AS(lm_train(a, {}, dev, vocab, opts), DataError);
}

TEST_SUITE_END();
