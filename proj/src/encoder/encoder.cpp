#include "emd/encoder/encoder.hpp"

#include <numeric>

#include "emd/error.hpp"
#include "emd/numerics/adam.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::encoder {

EncoderConfig EncoderConfig::paper_scale() {
  EncoderConfig c;
  c.vocab_size = 30522;
  c.max_len = 512;
  c.embed_dim = 768;
  c.n_layers = 6;
  c.n_heads = 12;
  c.ff_dim = 3072;
  c.dropout = 0.1f;
  c.attention_dropout = 0.1f;
  return c;
}

void EncoderConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(corpus::kReservedCount)) throw ConfigError("encoder: vocab_size too small");
  if (max_len < 2) throw ConfigError("encoder: max_len must be at least 2");
  if (embed_dim == 0 || n_heads == 0 || embed_dim % n_heads != 0) {
    throw ConfigError("encoder: embed_dim must be divisible by n_heads");
  }
  if (n_layers == 0 || ff_dim == 0) throw ConfigError("encoder: n_layers and ff_dim must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f) || !(attention_dropout >= 0.0f && attention_dropout < 1.0f)) {
    throw ConfigError("encoder: dropout rates must be in [0, 1)");
  }
}

nlohmann::ordered_json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"max_len", max_len},  {"embed_dim", embed_dim},
          {"n_layers", n_layers},     {"n_heads", n_heads},  {"ff_dim", ff_dim},
          {"dropout", dropout},       {"attention_dropout", attention_dropout}, {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size");
  c.max_len = j.at("max_len");
  c.embed_dim = j.at("embed_dim");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.ff_dim = j.at("ff_dim");
  c.dropout = j.at("dropout");
  c.attention_dropout = j.at("attention_dropout");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

ContextualEncoder::ContextualEncoder(EncoderConfig cfg, std::uint64_t vocab_hash)
    : cfg_(cfg), vocab_hash_(vocab_hash) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  token_embedding_ = nn::xavier_uniform(cfg_.vocab_size, cfg_.embed_dim, rng);
  position_embedding_ = nn::xavier_uniform(cfg_.max_len, cfg_.embed_dim, rng);
  embed_norm_ = nn::LayerNorm(cfg_.embed_dim);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    blocks_.emplace_back(cfg_.embed_dim, cfg_.n_heads, cfg_.ff_dim, /*pre_norm=*/false, rng);
  }
  mlm_transform_ = nn::Linear(cfg_.embed_dim, cfg_.embed_dim, rng);
  mlm_norm_ = nn::LayerNorm(cfg_.embed_dim);
  mlm_projection_ = nn::Linear(cfg_.embed_dim, cfg_.vocab_size, rng);
}

Tensor ContextualEncoder::encode(Tape& tape, std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                                 std::span<const std::uint8_t> mask) const {
  if (len > cfg_.max_len) {
    throw ShapeError("encoder: sequence length " + std::to_string(len) + " exceeds max_len " +
                     std::to_string(cfg_.max_len));
  }
  Tensor x = nn::embed_tokens(tape, token_embedding_, position_embedding_, ids, batch, len);
  x = ops::dropout(tape, embed_norm_(tape, x), cfg_.dropout);
  for (const auto& block : blocks_) x = block(tape, x, mask, /*causal=*/false, cfg_.dropout, cfg_.attention_dropout);
  return x;
}

Tensor ContextualEncoder::encode(Tape& tape, const corpus::EncodedBatch& batch) const {
  return encode(tape, batch.ids, batch.batch, batch.len, batch.mask);
}

Tensor ContextualEncoder::mlm_logits(Tape& tape, const Tensor& hidden) const {
  return mlm_projection_(tape, mlm_norm_(tape, ops::gelu(tape, mlm_transform_(tape, hidden))));
}

nn::NamedParams ContextualEncoder::parameters() const {
  nn::NamedParams p;
  p.emplace_back("token_embedding", token_embedding_);
  p.emplace_back("position_embedding", position_embedding_);
  embed_norm_.collect("embed_norm", p);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), p);
  return p;
}

nn::NamedParams ContextualEncoder::mlm_parameters() const {
  nn::NamedParams p;
  mlm_transform_.collect("mlm_transform", p);
  mlm_norm_.collect("mlm_norm", p);
  mlm_projection_.collect("mlm_projection", p);
  return p;
}

std::vector<std::size_t> choose_mask_positions(std::span<const std::int32_t> row_ids, std::size_t length,
                                               double mask_rate, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t t = 0; t < length; ++t) {
    const std::int32_t id = row_ids[t];
    if (id != corpus::kBos && id != corpus::kEos && id != corpus::kPad) candidates.push_back(t);
  }
  std::vector<std::size_t> chosen;
  for (std::size_t t : candidates) {
    if (rng.uniform() < mask_rate) chosen.push_back(t);
  }
  if (chosen.empty() && !candidates.empty()) chosen.push_back(candidates[rng.below(candidates.size())]);
  return chosen;
}

namespace {

struct MaskedBatch {
  corpus::EncodedBatch input;
  std::vector<std::int32_t> targets;
  std::vector<float> weights;
};

MaskedBatch mask_batch(corpus::EncodedBatch b, double mask_rate, Rng& rng) {
  MaskedBatch m;
  m.targets.assign(b.batch * b.len, corpus::kPad);
  m.weights.assign(b.batch * b.len, 0.0f);
  for (std::size_t r = 0; r < b.batch; ++r) {
    std::span<std::int32_t> row(b.ids.data() + r * b.len, b.len);
    for (std::size_t t : choose_mask_positions(row, b.lengths[r], mask_rate, rng)) {
      m.targets[r * b.len + t] = row[t];
      m.weights[r * b.len + t] = 1.0f;
      row[t] = corpus::kUnk;
    }
  }
  m.input = std::move(b);
  return m;
}

void check_mask_rate(double rate) {
  if (!(rate > 0.0 && rate < 0.5)) throw ConfigError("mlm: mask_rate must be in (0, 0.5)");
}

}  // namespace

MlmCurve mlm_pretrain(ContextualEncoder& enc, const std::vector<corpus::ApiTrace>& traces,
                      const corpus::Vocabulary& vocab, const MlmOptions& opts) {
  check_mask_rate(opts.mask_rate);
  if (traces.empty()) throw DataError("mlm_pretrain: empty corpus");
  if (opts.batch_size == 0) throw ConfigError("mlm_pretrain: batch_size must be positive");
  if (vocab.hash() != enc.vocab_hash()) throw CompatError("mlm_pretrain: vocabulary does not match the encoder");
  auto named = enc.parameters();
  for (auto& p : enc.mlm_parameters()) named.push_back(p);
  std::vector<Tensor> params = nn::tensors_of(named);
  AdamState adam;
  adam.lr = opts.lr;
  MlmCurve curve;
  std::vector<std::size_t> order(traces.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  const std::size_t v = enc.config().vocab_size;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(opts.seed, epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    Rng mask_rng(mix_seed(opts.seed, 500'000 + epoch));
    double loss_sum = 0.0, weight_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t n = std::min(opts.batch_size, order.size() - start);
      std::vector<corpus::ApiTrace> chunk;
      for (std::size_t i = 0; i < n; ++i) chunk.push_back(traces[order[start + i]]);
      MaskedBatch mb = mask_batch(corpus::encode_batch(chunk, vocab, enc.config().max_len), opts.mask_rate, mask_rng);
      const double w = std::accumulate(mb.weights.begin(), mb.weights.end(), 0.0);
      if (w == 0.0) continue;
      Tape tape = Tape::training(mix_seed(opts.seed, 2'000'000 + step++));
      Tensor hidden = enc.encode(tape, mb.input);
      Tensor logits = ops::reshape(tape, enc.mlm_logits(tape, hidden), {mb.input.batch * mb.input.len, v});
      Tensor loss = ops::cross_entropy(tape, logits, mb.targets, mb.weights);
      zero_grads(params);
      tape.backward(loss);
      if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
      adam_step(params, adam);
      loss_sum += static_cast<double>(loss.item()) * w;
      weight_sum += w;
    }
    curve.loss.push_back(weight_sum > 0 ? loss_sum / weight_sum : 0.0);
  }
  return curve;
}

double mlm_accuracy(const ContextualEncoder& enc, const std::vector<corpus::ApiTrace>& traces,
                    const corpus::Vocabulary& vocab, double mask_rate, std::uint64_t seed) {
  check_mask_rate(mask_rate);
  if (traces.empty()) throw DataError("mlm_accuracy: empty corpus");
  Rng rng(seed);
  MaskedBatch mb = mask_batch(corpus::encode_batch(traces, vocab, enc.config().max_len), mask_rate, rng);
  Tape tape = Tape::inference();
  Tensor logits = enc.mlm_logits(tape, enc.encode(tape, mb.input));
  const std::size_t v = enc.config().vocab_size;
  auto ld = logits.data();
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < mb.weights.size(); ++i) {
    if (mb.weights[i] == 0.0f) continue;
    const auto first = ld.begin() + static_cast<std::ptrdiff_t>(i * v);
    const auto best = std::max_element(first, first + static_cast<std::ptrdiff_t>(v)) - first;
    hits += (best == mb.targets[i]);
    ++total;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace emd::encoder
