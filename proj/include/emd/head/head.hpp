#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emd/head/pooling.hpp"
#include "emd/head/recurrent.hpp"

namespace emd::head {

enum class HeadVariant { bigru_attention, lstm, bilstm, gru, cnn };

HeadVariant parse_variant(std::string_view text);
std::string_view variant_name(HeadVariant v);
const std::vector<HeadVariant>& all_variants();

struct HeadConfig {
  HeadVariant variant = HeadVariant::bigru_attention;
  std::size_t input_dim = 64;
  std::size_t hidden = 32;
  float dropout = 0.3f;
  std::size_t cnn_filters = 32;
  std::vector<std::size_t> cnn_widths{3, 5};
  std::uint64_t seed = 1;

  void validate() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

/// Classification head over contextual embeddings [B, L, D] plus mask.
///
/// bigru_attention: BiGRU -> dropout -> attention pooling -> dense stack.
/// gru / lstm: last real state of a forward pass -> dropout -> dense.
/// bilstm: [forward state at the last real token ; backward state at token 0].
/// cnn: masked input, one convolution per width (ReLU), max over real
/// positions, concatenated -> dense.
class Head {
 public:
  explicit Head(HeadConfig cfg);

  [[nodiscard]] const HeadConfig& config() const { return cfg_; }

  /// Malware probability per row, [B].
  Tensor forward(Tape& tape, const Tensor& embeddings, std::span<const std::uint8_t> mask) const;
  /// Pooled feature vector fed to the dense stack, [B, F].
  Tensor features(Tape& tape, const Tensor& embeddings, std::span<const std::uint8_t> mask) const;

  [[nodiscard]] nn::NamedParams parameters() const;

  [[nodiscard]] const RecurrentLayer& forward_layer() const { return fwd_; }
  [[nodiscard]] const RecurrentLayer& backward_layer() const { return bwd_; }
  [[nodiscard]] const DenseStack& dense() const { return dense_; }

 private:
  HeadConfig cfg_;
  RecurrentLayer fwd_;
  RecurrentLayer bwd_;
  std::vector<nn::Linear> convs_;
  DenseStack dense_;
};

}  // namespace emd::head
