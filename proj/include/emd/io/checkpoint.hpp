#pragma once

#include <string>
#include <string_view>

#include "emd/corpus/vocab.hpp"
#include "emd/detector/detector.hpp"
#include "emd/encoder/encoder.hpp"
#include "emd/genlm/lm.hpp"

// Checkpoint layout: the format string and a newline, an 8-byte little-endian
// header length, a JSON header (config, vocabulary hash, metadata, tensor
// names and shapes), then each tensor's float32 values in header order.
namespace emd::io {

inline constexpr std::string_view kLmFormat = "emd-lm-v1";
inline constexpr std::string_view kEncoderFormat = "emd-enc-v1";
inline constexpr std::string_view kDetectorFormat = "emd-detector-v1";

/// First line of an artifact file, read without consuming anything else.
std::string peek_format(const std::string& path);

void save_lm(const genlm::GenerativeLm& lm, const std::string& path);
/// When `vocab` is given, its hash must match the checkpoint's.
genlm::GenerativeLm load_lm(const std::string& path, const corpus::Vocabulary* vocab = nullptr);

void save_encoder(const encoder::ContextualEncoder& enc, const std::string& path);
encoder::ContextualEncoder load_encoder(const std::string& path, const corpus::Vocabulary* vocab = nullptr);

void save_detector(const detector::DetectorModel& model, const std::string& path);
detector::DetectorModel load_detector(const std::string& path, const corpus::Vocabulary* vocab = nullptr);

}  // namespace emd::io
