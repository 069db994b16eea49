#include "emd/genlm/lm.hpp"

#include <cmath>
#include <numeric>

#include "emd/error.hpp"
#include "emd/numerics/adam.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::genlm {

LmConfig LmConfig::paper_scale(std::size_t vocab_size) {
  LmConfig c;
  c.vocab_size = vocab_size;
  c.max_len = 500;
  return c;
}

void LmConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(corpus::kReservedCount)) throw ConfigError("lm: vocab_size too small");
  if (max_len < 2) throw ConfigError("lm: max_len must be at least 2");
  if (embed_dim == 0 || n_heads == 0 || embed_dim % n_heads != 0) {
    throw ConfigError("lm: embed_dim must be divisible by n_heads");
  }
  if (n_layers == 0 || ff_dim == 0) throw ConfigError("lm: n_layers and ff_dim must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("lm: dropout must be in [0, 1)");
}

nlohmann::ordered_json LmConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"max_len", max_len}, {"embed_dim", embed_dim},
          {"n_layers", n_layers},     {"n_heads", n_heads}, {"ff_dim", ff_dim},
          {"dropout", dropout},       {"seed", seed}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size");
  c.max_len = j.at("max_len");
  c.embed_dim = j.at("embed_dim");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.ff_dim = j.at("ff_dim");
  c.dropout = j.at("dropout");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

GenerativeLm::GenerativeLm(LmConfig cfg, std::uint64_t vocab_hash) : cfg_(cfg), vocab_hash_(vocab_hash) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  token_embedding_ = nn::xavier_uniform(cfg_.vocab_size, cfg_.embed_dim, rng);
  position_embedding_ = nn::xavier_uniform(cfg_.max_len, cfg_.embed_dim, rng);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    blocks_.emplace_back(cfg_.embed_dim, cfg_.n_heads, cfg_.ff_dim, /*pre_norm=*/true, rng);
  }
  final_norm_ = nn::LayerNorm(cfg_.embed_dim);
  head_ = nn::Linear(cfg_.embed_dim, cfg_.vocab_size, rng);
}

Tensor GenerativeLm::forward(Tape& tape, std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                             std::span<const std::uint8_t> mask) const {
  if (len > cfg_.max_len) {
    throw ShapeError("lm: sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(cfg_.max_len));
  }
  Tensor x = nn::embed_tokens(tape, token_embedding_, position_embedding_, ids, batch, len);
  x = ops::dropout(tape, x, cfg_.dropout);
  for (const auto& block : blocks_) x = block(tape, x, mask, /*causal=*/true, cfg_.dropout, cfg_.dropout);
  return head_(tape, final_norm_(tape, x));
}

Tensor GenerativeLm::forward(Tape& tape, const corpus::EncodedBatch& batch) const {
  return forward(tape, batch.ids, batch.batch, batch.len, batch.mask);
}

nn::NamedParams GenerativeLm::parameters() const {
  nn::NamedParams p;
  p.emplace_back("token_embedding", token_embedding_);
  p.emplace_back("position_embedding", position_embedding_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), p);
  final_norm_.collect("final_norm", p);
  head_.collect("head", p);
  return p;
}

namespace {

struct Targets {
  std::vector<std::int32_t> ids;
  std::vector<float> weights;
};

// Position t predicts token t + 1; the last column and PAD targets get weight 0.
Targets next_token_targets(const corpus::EncodedBatch& b) {
  Targets t;
  t.ids.assign(b.batch * b.len, corpus::kPad);
  t.weights.assign(b.batch * b.len, 0.0f);
  for (std::size_t r = 0; r < b.batch; ++r) {
    for (std::size_t c = 0; c + 1 < b.len; ++c) {
      if (!b.mask[r * b.len + c + 1]) break;
      t.ids[r * b.len + c] = b.ids[r * b.len + c + 1];
      t.weights[r * b.len + c] = 1.0f;
    }
  }
  return t;
}

Tensor batch_loss(Tape& tape, const GenerativeLm& model, const corpus::EncodedBatch& b, const Targets& t) {
  Tensor logits = model.forward(tape, b);
  Tensor flat = ops::reshape(tape, logits, {b.batch * b.len, model.config().vocab_size});
  return ops::cross_entropy(tape, flat, t.ids, t.weights);
}

}  // namespace

double mean_next_token_loss(const GenerativeLm& model, const std::vector<corpus::ApiTrace>& traces,
                            const corpus::Vocabulary& vocab) {
  if (traces.empty()) throw DataError("lm: empty evaluation set");
  constexpr std::size_t kChunk = 64;
  double total = 0.0, count = 0.0;
  for (std::size_t start = 0; start < traces.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, traces.size() - start);
    const auto b = corpus::encode_batch(std::span(traces).subspan(start, n), vocab, model.config().max_len);
    const Targets t = next_token_targets(b);
    const double w = std::accumulate(t.weights.begin(), t.weights.end(), 0.0);
    if (w == 0.0) continue;
    Tape tape = Tape::inference();
    total += static_cast<double>(batch_loss(tape, model, b, t).item()) * w;
    count += w;
  }
  if (count == 0.0) throw DataError("lm: evaluation set has no next-token targets");
  return total / count;
}

double perplexity(const GenerativeLm& model, const std::vector<corpus::ApiTrace>& traces,
                  const corpus::Vocabulary& vocab) {
  return std::exp(mean_next_token_loss(model, traces, vocab));
}

LossCurve lm_train(GenerativeLm& model, const std::vector<corpus::ApiTrace>& train,
                   const std::vector<corpus::ApiTrace>& dev, const corpus::Vocabulary& vocab,
                   const TrainOptions& opts) {
  if (train.empty()) throw DataError("lm_train: empty training set");
  if (opts.batch_size == 0) throw ConfigError("lm_train: batch_size must be positive");
  if (vocab.size() != model.config().vocab_size || vocab.hash() != model.vocab_hash()) {
    throw CompatError("lm_train: vocabulary does not match the model");
  }
  auto named = model.parameters();
  std::vector<Tensor> params = nn::tensors_of(named);
  AdamState adam;
  adam.lr = opts.lr;
  LossCurve curve;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(opts.seed, epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0, weight_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t n = std::min(opts.batch_size, order.size() - start);
      std::vector<corpus::ApiTrace> chunk;
      chunk.reserve(n);
      for (std::size_t i = 0; i < n; ++i) chunk.push_back(train[order[start + i]]);
      const auto b = corpus::encode_batch(chunk, vocab, model.config().max_len);
      const Targets t = next_token_targets(b);
      const double w = std::accumulate(t.weights.begin(), t.weights.end(), 0.0);
      if (w == 0.0) continue;
      Tape tape = Tape::training(mix_seed(opts.seed, 1'000'000 + step++));
      Tensor loss = batch_loss(tape, model, b, t);
      zero_grads(params);
      tape.backward(loss);
      if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
      adam_step(params, adam);
      loss_sum += static_cast<double>(loss.item()) * w;
      weight_sum += w;
    }
    curve.train.push_back(weight_sum > 0 ? loss_sum / weight_sum : 0.0);
    if (!dev.empty()) curve.dev.push_back(mean_next_token_loss(model, dev, vocab));
  }
  return curve;
}

}  // namespace emd::genlm
