#include <doctest.h>

#include <algorithm>

#include "emd/corpus/batch.hpp"
#include "emd/corpus/split.hpp"
#include "emd/corpus/synth.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/detector/detector.hpp"
#include "emd/error.hpp"
#include "emd/genlm/generate.hpp"
#include "emd/genlm/lm.hpp"
#include "helpers.hpp"

TEST_SUITE_BEGIN("detector");

using namespace emd;
using namespace emd::detector;
using corpus::ApiTrace;
using corpus::Label;

namespace {

encoder::EncoderConfig tiny_encoder(std::size_t vocab, std::size_t max_len = 96) {
  encoder::EncoderConfig c;
  c.vocab_size = vocab;
  c.max_len = max_len;
  c.embed_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 32;
  c.seed = 7;
  return c;
}

head::HeadConfig tiny_head(head::HeadVariant v = head::HeadVariant::bigru_attention) {
  head::HeadConfig h;
  h.variant = v;
  h.input_dim = 16;
  h.hidden = 8;
  h.cnn_filters = 8;
  return h;
}

genlm::LmConfig tiny_lm(std::size_t vocab, std::size_t max_len = 96) {
  genlm::LmConfig c;
  c.vocab_size = vocab;
  c.max_len = max_len;
  c.embed_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 32;
  return c;
}

// Malware rows contain the marker call somewhere; benign rows never do.
std::vector<ApiTrace> separable(std::size_t n, Rng& rng) {
  std::vector<ApiTrace> out;
  for (std::size_t i = 0; i < n; ++i) {
    ApiTrace t{"s" + std::to_string(i), i % 2 ? Label::malware : Label::benign, {}, ""};
    const auto len = 4 + rng.below(8);
    for (std::size_t j = 0; j < len; ++j) t.calls.push_back("B" + std::to_string(rng.below(6)));
    if (t.label == Label::malware) t.calls[rng.below(len)] = "Mark";
    out.push_back(std::move(t));
  }
  return out;
}

corpus::Vocabulary separable_vocab() {
  std::vector<std::string> names{"Mark"};
  for (int i = 0; i < 6; ++i) names.push_back("B" + std::to_string(i));
  return corpus::Vocabulary(names);
}

std::vector<float> snapshot(const nn::NamedParams& ps) {
  std::vector<float> out;
  for (const auto& [name, p] : ps) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

bool same_verdict(const Verdict& a, const Verdict& b) {
  return a.probability == b.probability && a.label == b.label && a.prefix_used == b.prefix_used &&
         a.suffix == b.suffix && a.extended_len == b.extended_len;
}

}  // namespace

TEST_CASE("threshold rule") {
  CHECK(label_for(0.5f, 0.5f) == Label::malware);
  CHECK(label_for(std::nextafter(0.5f, 0.0f), 0.5f) == Label::benign);
  CHECK(label_for(0.9f, 0.95f) == Label::benign);
}

TEST_CASE("separable toy corpus is learned exactly") {
  Rng rng(71);
  const auto vocab = separable_vocab();
  const auto train = separable(200, rng), dev = separable(60, rng);
  DetectorModel model(tiny_encoder(vocab.size(), 16), tiny_head(), vocab.hash());
  DetectorOptions opts;
  opts.epochs = 50;
  opts.batch_size = 16;
  opts.lr = 3e-3;
  opts.seed = 3;
  bool reached = false;
  // stop early once perfect; the contract is "within 50 epochs"
  for (std::size_t e = 0; e < 50 && !reached; e += 5) {
    opts.epochs = 5;
    opts.seed = 3 + e;
    const auto curve = train_detector(model, train, dev, vocab, opts);
    reached = curve.dev_accuracy.back() == 1.0;
  }
  CHECK(reached);
}

TEST_CASE("frozen encoder stays bit-identical and training is seeded") {
  Rng rng(72);
  const auto vocab = separable_vocab();
  const auto train = separable(64, rng), dev = separable(16, rng);
  DetectorModel model(tiny_encoder(vocab.size(), 16), tiny_head(), vocab.hash());
  const auto before = snapshot(model.encoder().parameters());
  const auto head_before = snapshot(model.head().parameters());
  DetectorOptions opts;
  opts.epochs = 2;
  opts.batch_size = 8;
  opts.freeze_encoder = true;
  train_detector(model, train, dev, vocab, opts);
  CHECK(snapshot(model.encoder().parameters()) == before);
  CHECK(snapshot(model.head().parameters()) != head_before);
  for (const auto& [name, p] : model.encoder().parameters()) CHECK(p.requires_grad());

  DetectorModel a(tiny_encoder(vocab.size(), 16), tiny_head(), vocab.hash());
  DetectorModel b(tiny_encoder(vocab.size(), 16), tiny_head(), vocab.hash());
  opts.freeze_encoder = false;
  const auto ca = train_detector(a, train, dev, vocab, opts);
  const auto cb = train_detector(b, train, dev, vocab, opts);
  CHECK(ca.train_loss == cb.train_loss);
  CHECK(snapshot(a.parameters()) == snapshot(b.parameters()));
  CHECK(snapshot(a.encoder().parameters()) != before);

  auto single = train;
  for (auto& t : single) t.label = Label::benign;
  CHECK_THROWS_AS(train_detector(a, single, dev, vocab, opts), DataError);
}

TEST_CASE("pretrained encoder is copied, not shared") {
  const auto vocab = separable_vocab();
  encoder::ContextualEncoder enc(tiny_encoder(vocab.size(), 16), vocab.hash());
  const auto before = snapshot(enc.parameters());
  DetectorModel model(enc, tiny_head());
  Rng rng(73);
  DetectorOptions opts;
  opts.epochs = 1;
  train_detector(model, separable(32, rng), separable(8, rng), vocab, opts);
  CHECK(snapshot(enc.parameters()) == before);
  CHECK(snapshot(model.encoder().parameters()) != before);
}

TEST_CASE("classification is pure and rejects empty traces") {
  const auto vocab = separable_vocab();
  DetectorModel model(tiny_encoder(vocab.size(), 16), tiny_head(), vocab.hash());
  const std::vector<std::string> calls{"B1", "Mark", "B2"};
  const auto a = classify_trace(model, vocab, calls);
  const auto b = classify_trace(model, vocab, calls);
  CHECK(same_verdict(a, b));
  CHECK(a.probability > 0.0f);
  CHECK(a.probability < 1.0f);
  CHECK_THROWS_AS(classify_trace(model, vocab, std::vector<std::string>{}), DataError);
  const auto ids = corpus::encode_ids(calls, vocab, 16);
  CHECK(classify_ids(model, ids, std::vector<std::uint8_t>(ids.size(), 1)).probability == a.probability);
  CHECK(label_for(a.probability, a.probability) == Label::malware);
}

TEST_CASE("model configuration digest") {
  DetectorModel a(tiny_encoder(10), tiny_head(), 1), b(tiny_encoder(10), tiny_head(), 1);
  CHECK(a.config_hash() == b.config_hash());
  DetectorModel c(tiny_encoder(10), tiny_head(head::HeadVariant::cnn), 1);
  CHECK(a.config_hash() != c.config_hash());
  TrainingMeta m{5, 3, 16, 2e-3, true};
  const auto back = TrainingMeta::from_json(m.to_json());
  CHECK(back.seed == 5);
  CHECK(back.epochs == 3);
  CHECK(back.batch_size == 16);
  CHECK(back.lr == 2e-3);
  CHECK(back.freeze_encoder);
  DetectorModel d(tiny_encoder(10), tiny_head(), 1);
  CHECK(d.parameters().front().first.rfind("encoder.", 0) == 0);
  CHECK(d.parameters().back().first.rfind("head.", 0) == 0);
}

TEST_CASE("early detection composition") {
  corpus::SynthConfig sc;
  sc.vocab_size = 40;
  sc.n_traces = 60;
  const auto traces = corpus::generate_synthetic(sc);
  const auto vocab = corpus::build_vocab(traces, 1000);
  genlm::GenerativeLm lm(tiny_lm(vocab.size()), vocab.hash());
  DetectorModel model(tiny_encoder(vocab.size()), tiny_head(), vocab.hash());

  EarlyDetectConfig cfg;
  const auto& calls = traces[0].calls;
  const auto v = early_detect(lm, model, vocab, calls, cfg);
  CHECK(v.prefix_used == 20);
  CHECK(v.suffix.size() == 10);
  CHECK(v.extended_len == 30);

  // horizon 1: the suffix is the argmax of the next-call distribution
  cfg.horizon = 1;
  const auto one = early_detect(lm, model, vocab, calls, cfg);
  std::vector<std::int32_t> prefix{corpus::kBos};
  for (std::size_t i = 0; i < 20; ++i) prefix.push_back(vocab.id_of(calls[i]));
  const auto p = genlm::predict_next(lm, prefix);
  REQUIRE(one.suffix.size() == 1);
  CHECK(vocab.id_of(one.suffix[0]) == std::max_element(p.begin(), p.end()) - p.begin());

  // the classified row is BOS + prefix + suffix + EOS
  cfg.horizon = 10;
  std::vector<std::int32_t> row = prefix;
  for (const auto& s : v.suffix) row.push_back(vocab.id_of(s));
  row.push_back(corpus::kEos);
  CHECK(classify_ids(model, row, std::vector<std::uint8_t>(row.size(), 1)).probability == v.probability);

  // only the prefix is read
  auto altered = calls;
  for (std::size_t i = 20; i < altered.size(); ++i) altered[i] = calls[0];
  CHECK(same_verdict(early_detect(lm, model, vocab, altered, cfg), v));

  // short traces use what they have
  const std::vector<std::string> short_calls(calls.begin(), calls.begin() + 5);
  const auto s = early_detect(lm, model, vocab, short_calls, cfg);
  CHECK(s.prefix_used == 5);
  CHECK(s.extended_len == 15);

  const auto bare = prefix_only(model, vocab, calls, 20);
  CHECK(bare.prefix_used == 20);
  CHECK(bare.suffix.empty());

  genlm::GenerativeLm other_lm(tiny_lm(vocab.size()), vocab.hash() + 1);
  CHECK_THROWS_AS(early_detect(other_lm, model, vocab, calls, cfg), CompatError);
  cfg.horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("batch detection equals the elementwise loop") {
  corpus::SynthConfig sc;
  sc.vocab_size = 40;
  sc.n_traces = 1000;
  auto traces = corpus::generate_synthetic(sc);
  const auto vocab = corpus::build_vocab(traces, 1000);
  genlm::GenerativeLm lm(tiny_lm(vocab.size()), vocab.hash());
  DetectorModel model(tiny_encoder(vocab.size()), tiny_head(), vocab.hash());
  // vary lengths so chunks mix different paddings
  Rng rng(74);
  for (auto& t : traces) t.calls.resize(1 + rng.below(t.calls.size()));
  for (auto strategy : {genlm::Strategy::greedy, genlm::Strategy::topk}) {
    EarlyDetectConfig cfg;
    cfg.strategy = strategy;
    cfg.seed = 5;
    const auto batch = batch_detect(lm, model, vocab, traces, cfg);
    REQUIRE(batch.verdicts.size() == traces.size());
    CHECK(batch.errors.empty());
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const auto single = early_detect(lm, model, vocab, traces[i].calls, cfg);
      if (!same_verdict(single, batch.verdicts[i]) || batch.scores[i] != single.probability) ++mismatches;
    }
    CHECK(mismatches == 0);

    std::vector<std::size_t> perm(50);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    std::vector<ApiTrace> head(traces.begin(), traces.begin() + 50), permuted;
    for (auto i : perm) permuted.push_back(head[i]);
    const auto pb = batch_detect(lm, model, vocab, permuted, cfg);
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(same_verdict(pb.verdicts[i], batch.verdicts[perm[i]]));
  }
}

TEST_CASE("a failing trace is reported and the batch continues") {
  const auto vocab = separable_vocab();
  genlm::GenerativeLm lm(tiny_lm(vocab.size(), 40), vocab.hash());
  DetectorModel model(tiny_encoder(vocab.size(), 40), tiny_head(), vocab.hash());
  std::vector<ApiTrace> traces{{"ok1", Label::benign, {"B1", "B2"}, ""},
                               {"bad", Label::benign, {}, ""},
                               {"ok2", Label::malware, {"Mark"}, ""}};
  const auto r = batch_detect(lm, model, vocab, traces, {});
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].index == 1);
  CHECK(r.errors[0].trace_id == "bad");
  CHECK(r.ok == std::vector<bool>{true, false, true});
  CHECK(same_verdict(r.verdicts[2], early_detect(lm, model, vocab, traces[2].calls, {})));
}

TEST_CASE("a trained detector flags planted motifs and its loss settles") {
  corpus::SynthConfig sc;
  sc.vocab_size = 40;
  sc.n_traces = 400;
  sc.seed = 12;
  const auto traces = corpus::generate_synthetic(sc);
  const auto parts = corpus::split(traces, 0.25, 1);
  const auto vocab = corpus::build_vocab(parts.train, 1000);
  DetectorModel model(tiny_encoder(vocab.size()), tiny_head(), vocab.hash());
  DetectorOptions opts;
  opts.epochs = 6;
  opts.batch_size = 16;
  const auto curve = train_detector(model, parts.train, parts.test, vocab, opts);
  for (std::size_t e = 2; e < curve.train_loss.size(); ++e) CHECK(curve.train_loss[e] <= curve.train_loss[e - 1] * 1.05);
  std::size_t malware = 0, flagged = 0;
  for (const auto& t : parts.test) {
    if (t.label != Label::malware) continue;
    ++malware;
    if (classify_trace(model, vocab, t.calls).probability > 0.5f) ++flagged;
  }
  CHECK(static_cast<double>(flagged) >= 0.95 * static_cast<double>(malware));
}

TEST_SUITE_END();
