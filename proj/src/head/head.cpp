#include "emd/head/head.hpp"

#include "emd/error.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::head {

HeadVariant parse_variant(std::string_view text) {
  for (HeadVariant v : all_variants()) {
    if (variant_name(v) == text) return v;
  }
  throw ConfigError("unknown head variant '" + std::string(text) + "'");
}

std::string_view variant_name(HeadVariant v) {
  switch (v) {
    case HeadVariant::bigru_attention: return "bigru_attention";
    case HeadVariant::lstm: return "lstm";
    case HeadVariant::bilstm: return "bilstm";
    case HeadVariant::gru: return "gru";
    case HeadVariant::cnn: return "cnn";
  }
  throw ConfigError("unknown head variant");
}

const std::vector<HeadVariant>& all_variants() {
  static const std::vector<HeadVariant> v{HeadVariant::bigru_attention, HeadVariant::lstm, HeadVariant::bilstm,
                                          HeadVariant::gru, HeadVariant::cnn};
  return v;
}

void HeadConfig::validate() const {
  if (input_dim == 0 || hidden == 0) throw ConfigError("head: dimensions must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("head: dropout must be in [0, 1)");
  if (variant == HeadVariant::cnn) {
    if (cnn_widths.empty() || cnn_filters == 0) throw ConfigError("head: cnn needs widths and filters");
    for (std::size_t w : cnn_widths) {
      if (w % 2 == 0) throw ConfigError("head: cnn widths must be odd");
    }
  }
}

nlohmann::ordered_json HeadConfig::to_json() const {
  return {{"variant", variant_name(variant)}, {"input_dim", input_dim},     {"hidden", hidden},
          {"dropout", dropout},               {"cnn_filters", cnn_filters}, {"cnn_widths", cnn_widths},
          {"seed", seed}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.input_dim = j.at("input_dim");
  c.hidden = j.at("hidden");
  c.dropout = j.at("dropout");
  c.cnn_filters = j.at("cnn_filters");
  c.cnn_widths = j.at("cnn_widths").get<std::vector<std::size_t>>();
  c.seed = j.at("seed");
  c.validate();
  return c;
}

Head::Head(HeadConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t D = cfg_.input_dim, H = cfg_.hidden;
  std::size_t features = 0;
  switch (cfg_.variant) {
    case HeadVariant::bigru_attention:
      fwd_ = RecurrentLayer(CellKind::gru, D, H, rng);
      bwd_ = RecurrentLayer(CellKind::gru, D, H, rng);
      features = 2 * H;
      break;
    case HeadVariant::gru:
      fwd_ = RecurrentLayer(CellKind::gru, D, H, rng);
      features = H;
      break;
    case HeadVariant::lstm:
      fwd_ = RecurrentLayer(CellKind::lstm, D, H, rng);
      features = H;
      break;
    case HeadVariant::bilstm:
      fwd_ = RecurrentLayer(CellKind::lstm, D, H, rng);
      bwd_ = RecurrentLayer(CellKind::lstm, D, H, rng);
      features = 2 * H;
      break;
    case HeadVariant::cnn:
      for (std::size_t w : cfg_.cnn_widths) convs_.emplace_back(w * D, cfg_.cnn_filters, rng);
      features = cfg_.cnn_widths.size() * cfg_.cnn_filters;
      break;
  }
  dense_ = DenseStack(features, rng);
}

Tensor Head::features(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) const {
  if (x.rank() != 3 || x.dim(2) != cfg_.input_dim) {
    throw ShapeError("head: expected embeddings [B, L, " + std::to_string(cfg_.input_dim) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), len = x.dim(1);
  const auto lengths = lengths_from_mask(mask, batch, len);
  for (std::size_t b = 0; b < batch; ++b) {
    if (lengths[b] == 0) throw DataError("head: row " + std::to_string(b) + " has no real tokens");
  }
  switch (cfg_.variant) {
    case HeadVariant::bigru_attention: {
      Tensor states = ops::dropout(tape, bigru_forward(tape, fwd_, bwd_, x, mask), cfg_.dropout);
      return attention_pool(tape, states, mask).context;
    }
    case HeadVariant::gru:
    case HeadVariant::lstm: {
      std::vector<std::size_t> last(batch);
      for (std::size_t b = 0; b < batch; ++b) last[b] = lengths[b] - 1;
      Tensor states = fwd_(tape, x, lengths, false);
      return ops::dropout(tape, ops::select_positions(tape, states, last), cfg_.dropout);
    }
    case HeadVariant::bilstm: {
      std::vector<std::size_t> last(batch), first(batch, 0);
      for (std::size_t b = 0; b < batch; ++b) last[b] = lengths[b] - 1;
      Tensor f = ops::select_positions(tape, fwd_(tape, x, lengths, false), last);
      Tensor r = ops::select_positions(tape, bwd_(tape, x, lengths, true), first);
      return ops::dropout(tape, ops::concat_last(tape, f, r), cfg_.dropout);
    }
    case HeadVariant::cnn: {
      Tensor masked = ops::mask_positions(tape, x, mask);
      Tensor pooled;
      for (std::size_t i = 0; i < convs_.size(); ++i) {
        Tensor windows = ops::unfold_positions(tape, masked, cfg_.cnn_widths[i]);
        Tensor maps = ops::relu(tape, convs_[i](tape, windows));
        Tensor m = ops::max_positions(tape, maps, mask);
        pooled = pooled.defined() ? ops::concat_last(tape, pooled, m) : m;
      }
      return ops::dropout(tape, pooled, cfg_.dropout);
    }
  }
  throw ConfigError("head: unknown variant");
}

Tensor Head::forward(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) const {
  return dense_(tape, features(tape, x, mask));
}

nn::NamedParams Head::parameters() const {
  nn::NamedParams p;
  if (fwd_.recurrent.defined()) fwd_.collect("forward", p);
  if (bwd_.recurrent.defined()) bwd_.collect("backward", p);
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("conv" + std::to_string(i), p);
  dense_.collect("dense", p);
  return p;
}

}  // namespace emd::head
