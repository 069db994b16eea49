#include "emd/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emd/corpus/batch.hpp"
#include "emd/error.hpp"
#include "emd/numerics/adam.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::detector {
namespace {

constexpr std::size_t kScoreChunk = 64;

std::vector<std::vector<std::int32_t>> encode_all(const std::vector<corpus::ApiTrace>& traces,
                                                  const corpus::Vocabulary& vocab, std::size_t max_len) {
  std::vector<std::vector<std::int32_t>> rows;
  rows.reserve(traces.size());
  for (const auto& t : traces) {
    if (t.calls.empty()) throw DataError("trace " + t.id + ": empty trace");
    rows.push_back(corpus::encode_ids(t.calls, vocab, max_len));
  }
  return rows;
}

// BOS + prefix calls + suffix + EOS, the classifier's view of an extended trace.
std::vector<std::int32_t> classifier_row(std::span<const std::int32_t> extended) {
  std::vector<std::int32_t> row;
  row.reserve(extended.size() + 2);
  row.push_back(corpus::kBos);
  row.insert(row.end(), extended.begin(), extended.end());
  row.push_back(corpus::kEos);
  return row;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const DetectorModel& model, const std::vector<std::vector<std::int32_t>>& rows,
                    const std::vector<float>& labels) {
  const auto probs = score_rows(model, rows);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs[i]), 1e-7, 1.0 - 1e-7);
    loss -= labels[i] > 0.5f ? std::log(p) : std::log(1.0 - p);
    const bool malware = label_for(probs[i], kDefaultThreshold) == corpus::Label::malware;
    correct += malware == (labels[i] > 0.5f) ? 1 : 0;
  }
  const double n = static_cast<double>(probs.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

nlohmann::ordered_json TrainingMeta::to_json() const {
  return {{"seed", seed}, {"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},
          {"freeze_encoder", freeze_encoder}};
}

TrainingMeta TrainingMeta::from_json(const nlohmann::json& j) {
  TrainingMeta m;
  m.seed = j.at("seed");
  m.epochs = j.at("epochs");
  m.batch_size = j.at("batch_size");
  m.lr = j.at("lr");
  m.freeze_encoder = j.at("freeze_encoder");
  return m;
}

DetectorModel::DetectorModel(encoder::EncoderConfig enc_cfg, head::HeadConfig head_cfg, std::uint64_t vocab_hash)
    : encoder_(std::move(enc_cfg), vocab_hash), head_(std::move(head_cfg)) {
  if (head_.config().input_dim != encoder_.config().embed_dim) {
    throw ConfigError("detector: head input_dim " + std::to_string(head_.config().input_dim) +
                      " does not match encoder embed_dim " + std::to_string(encoder_.config().embed_dim));
  }
}

DetectorModel::DetectorModel(const encoder::ContextualEncoder& pretrained, head::HeadConfig head_cfg)
    : DetectorModel(pretrained.config(), std::move(head_cfg), pretrained.vocab_hash()) {
  nn::copy_parameters(pretrained.parameters(), encoder_.parameters());
  nn::copy_parameters(pretrained.mlm_parameters(), encoder_.mlm_parameters());
}

Tensor DetectorModel::forward(Tape& tape, std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                              std::span<const std::uint8_t> mask) const {
  Tensor hidden = encoder_.encode(tape, ids, batch, len, mask);
  return head_.forward(tape, hidden, mask);
}

nn::NamedParams DetectorModel::parameters() const {
  nn::NamedParams out;
  for (auto& [name, t] : encoder_.parameters()) out.emplace_back("encoder." + name, t);
  for (auto& [name, t] : head_.parameters()) out.emplace_back("head." + name, t);
  return out;
}

std::string DetectorModel::config_hash() const {
  nlohmann::ordered_json j{{"encoder", encoder_.config().to_json()}, {"head", head_.config().to_json()}};
  return corpus::hex64(corpus::fnv1a(j.dump()));
}

DetectorCurve train_detector(DetectorModel& model, const std::vector<corpus::ApiTrace>& train,
                             const std::vector<corpus::ApiTrace>& dev, const corpus::Vocabulary& vocab,
                             const DetectorOptions& opts) {
  if (train.empty()) throw DataError("train_detector: empty training set");
  if (opts.batch_size == 0) throw ConfigError("train_detector: batch_size must be positive");
  if (vocab.hash() != model.vocab_hash()) throw CompatError("train_detector: vocabulary does not match the model");
  const bool has_malware = std::any_of(train.begin(), train.end(),
                                       [](const auto& t) { return t.label == corpus::Label::malware; });
  const bool has_benign = std::any_of(train.begin(), train.end(),
                                      [](const auto& t) { return t.label == corpus::Label::benign; });
  if (!has_malware || !has_benign) throw DataError("train_detector: training set holds a single class");

  const auto rows = encode_all(train, vocab, model.max_len());
  std::vector<float> labels(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) labels[i] = train[i].label == corpus::Label::malware ? 1.0f : 0.0f;
  const auto dev_rows = encode_all(dev, vocab, model.max_len());
  std::vector<float> dev_labels(dev.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev_labels[i] = dev[i].label == corpus::Label::malware ? 1.0f : 0.0f;

  nn::NamedParams trainable = opts.freeze_encoder ? model.head().parameters() : model.parameters();
  std::vector<Tensor> params = nn::tensors_of(trainable);
  // Frozen encoder weights stay out of the graph so no gradient work is spent on them.
  std::vector<Tensor> frozen = opts.freeze_encoder ? nn::tensors_of(model.encoder().parameters())
                                                   : std::vector<Tensor>{};
  for (auto& t : frozen) t.set_requires_grad(false);

  AdamState adam;
  adam.lr = opts.lr;
  DetectorCurve curve;
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  try {
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
      Rng shuffle_rng(mix_seed(opts.seed, epoch));
      shuffle_rng.shuffle(order.begin(), order.end());
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
        const std::size_t n = std::min(opts.batch_size, order.size() - start);
        std::vector<std::vector<std::int32_t>> chunk;
        std::vector<float> chunk_labels;
        for (std::size_t i = 0; i < n; ++i) {
          chunk.push_back(rows[order[start + i]]);
          chunk_labels.push_back(labels[order[start + i]]);
        }
        const auto b = corpus::pad_rows(chunk, chunk_labels);
        Tape tape = Tape::training(mix_seed(opts.seed, 2'000'000 + step++));
        Tensor probs = model.forward(tape, b.ids, b.batch, b.len, b.mask);
        Tensor loss = ops::bce(tape, probs, b.labels);
        zero_grads(params);
        tape.backward(loss);
        if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
        adam_step(params, adam);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
      }
      curve.train_loss.push_back(loss_sum / static_cast<double>(rows.size()));
      if (!dev.empty()) {
        const auto e = evaluate(model, dev_rows, dev_labels);
        curve.dev_loss.push_back(e.loss);
        curve.dev_accuracy.push_back(e.accuracy);
      }
    }
  } catch (...) {
    for (auto& t : frozen) t.set_requires_grad(true);
    throw;
  }
  for (auto& t : frozen) t.set_requires_grad(true);
  model.meta = {opts.seed, opts.epochs, opts.batch_size, opts.lr, opts.freeze_encoder};
  return curve;
}

std::vector<float> score_rows(const DetectorModel& model, const std::vector<std::vector<std::int32_t>>& rows) {
  std::vector<float> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += kScoreChunk) {
    const std::size_t n = std::min(kScoreChunk, rows.size() - start);
    std::vector<std::vector<std::int32_t>> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                                 rows.begin() + static_cast<std::ptrdiff_t>(start + n));
    for (const auto& r : chunk) {
      if (r.empty()) throw DataError("score_rows: empty row");
      if (r.size() > model.max_len()) throw DataError("score_rows: row exceeds encoder max_len");
    }
    const auto b = corpus::pad_rows(chunk, std::vector<float>(n, 0.0f));
    Tape tape = Tape::inference();
    const Tensor probs = model.forward(tape, b.ids, b.batch, b.len, b.mask);
    const auto d = probs.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<float> score_traces(const DetectorModel& model, const std::vector<corpus::ApiTrace>& traces,
                                const corpus::Vocabulary& vocab) {
  return score_rows(model, encode_all(traces, vocab, model.max_len()));
}

corpus::Label label_for(float probability, float threshold) {
  return probability >= threshold ? corpus::Label::malware : corpus::Label::benign;
}

Verdict classify_ids(const DetectorModel& model, std::span<const std::int32_t> ids,
                     std::span<const std::uint8_t> mask, float threshold) {
  if (ids.empty() || ids.size() != mask.size()) throw DataError("classify: ids and mask must be non-empty and equal");
  if (mask[0] == 0) throw DataError("classify: empty trace");
  Tape tape = Tape::inference();
  const float p = model.forward(tape, ids, 1, ids.size(), mask).data()[0];
  Verdict v;
  v.probability = p;
  v.label = label_for(p, threshold);
  const auto real = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  v.prefix_used = real;
  v.extended_len = real;
  return v;
}

Verdict classify_trace(const DetectorModel& model, const corpus::Vocabulary& vocab,
                       std::span<const std::string> calls, float threshold) {
  if (calls.empty()) throw DataError("classify: empty trace");
  const auto enc = corpus::encode_ids(calls, vocab, model.max_len());
  Verdict v;
  v.probability = score_rows(model, {enc}).front();
  v.label = label_for(v.probability, threshold);
  v.prefix_used = std::min(calls.size(), model.max_len() - 1);
  v.extended_len = v.prefix_used;
  return v;
}

void EarlyDetectConfig::validate() const {
  if (prefix_len == 0) throw ConfigError("early detection: prefix_len must be at least 1");
  if (horizon == 0) throw ConfigError("early detection: horizon must be at least 1");
  if (!(threshold > 0.0f && threshold < 1.0f)) throw ConfigError("early detection: threshold must be in (0, 1)");
  if (k == 0) throw ConfigError("early detection: k must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("early detection: temperature must be positive");
}

nlohmann::ordered_json EarlyDetectConfig::to_json() const {
  return {{"prefix_len", prefix_len},   {"horizon", horizon}, {"strategy", genlm::strategy_name(strategy)},
          {"k", k},                     {"temperature", temperature}, {"seed", seed},
          {"threshold", threshold}};
}

void check_compatible(const genlm::GenerativeLm& lm, const DetectorModel& model, const corpus::Vocabulary& vocab) {
  if (lm.vocab_hash() != model.vocab_hash()) {
    throw CompatError("language model and detector were built with different vocabularies");
  }
  if (vocab.hash() != model.vocab_hash()) throw CompatError("vocabulary does not match the detector");
}

BatchVerdicts batch_detect(const genlm::GenerativeLm& lm, const DetectorModel& model,
                           const corpus::Vocabulary& vocab, const std::vector<corpus::ApiTrace>& traces,
                           const EarlyDetectConfig& cfg) {
  cfg.validate();
  check_compatible(lm, model, vocab);
  BatchVerdicts out;
  out.verdicts.resize(traces.size());
  out.scores.assign(traces.size(), 0.0f);
  out.ok.assign(traces.size(), false);

  std::vector<std::size_t> index;
  std::vector<std::vector<std::int32_t>> prefixes;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& calls = traces[i].calls;
    if (calls.empty()) {
      out.errors.push_back({i, traces[i].id, "empty trace"});
      continue;
    }
    const std::size_t used = std::min(cfg.prefix_len, calls.size());
    const std::size_t total = used + cfg.horizon;
    if (used + 1 + cfg.horizon > lm.config().max_len || total + 2 > model.max_len()) {
      out.errors.push_back({i, traces[i].id,
                            "prefix plus horizon (" + std::to_string(total) + ") exceeds model capacity"});
      continue;
    }
    prefixes.push_back(corpus::encode_ids(std::span(calls).first(used), vocab, used + 1, /*add_eos=*/false));
    index.push_back(i);
  }

  genlm::GenRequest settings;
  settings.horizon = cfg.horizon;
  settings.strategy = cfg.strategy;
  settings.k = cfg.k;
  settings.temperature = cfg.temperature;
  settings.seed = cfg.seed;
  const auto suffixes = genlm::generate_batch(lm, prefixes, settings);

  std::vector<std::vector<std::int32_t>> rows;
  rows.reserve(prefixes.size());
  for (std::size_t j = 0; j < prefixes.size(); ++j) {
    const auto calls = std::span(prefixes[j]).subspan(1);
    rows.push_back(classifier_row(genlm::assemble_extended(calls, suffixes[j], model.max_len() - 2)));
  }
  const auto probs = score_rows(model, rows);
  for (std::size_t j = 0; j < index.size(); ++j) {
    Verdict& v = out.verdicts[index[j]];
    v.probability = probs[j];
    v.label = label_for(probs[j], cfg.threshold);
    v.prefix_used = prefixes[j].size() - 1;
    // UNK stays visible as "<unk>" so the suffix always has `horizon` names
    for (auto id : suffixes[j]) v.suffix.push_back(vocab.name_of(id));
    v.extended_len = v.prefix_used + suffixes[j].size();
    out.scores[index[j]] = probs[j];
    out.ok[index[j]] = true;
  }
  return out;
}

Verdict early_detect(const genlm::GenerativeLm& lm, const DetectorModel& model, const corpus::Vocabulary& vocab,
                     std::span<const std::string> calls, const EarlyDetectConfig& cfg) {
  if (calls.empty()) throw DataError("early_detect: empty trace");
  const std::size_t used = std::min(cfg.prefix_len, calls.size());
  corpus::ApiTrace t;
  t.id = "trace";
  t.calls.assign(calls.begin(), calls.begin() + static_cast<std::ptrdiff_t>(used));
  auto r = batch_detect(lm, model, vocab, {t}, cfg);
  if (!r.errors.empty()) throw DataError("early_detect: " + r.errors.front().message);
  return r.verdicts.front();
}

Verdict prefix_only(const DetectorModel& model, const corpus::Vocabulary& vocab, std::span<const std::string> calls,
                    std::size_t prefix_len, float threshold) {
  if (calls.empty()) throw DataError("prefix_only: empty trace");
  return classify_trace(model, vocab, calls.first(std::min(prefix_len, calls.size())), threshold);
}

}  // namespace emd::detector
