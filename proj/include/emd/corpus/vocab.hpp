#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emd/corpus/trace.hpp"

namespace emd::corpus {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kBos = 2;
inline constexpr std::int32_t kEos = 3;
inline constexpr std::int32_t kReservedCount = 4;

inline constexpr std::string_view kVocabFormat = "emd-vocab-v1";

/// Dense bijection between API-call names and ids; ids 0..3 are reserved.
class Vocabulary {
 public:
  Vocabulary();
  /// `names` are the non-reserved tokens in id order (first gets id 4).
  explicit Vocabulary(std::vector<std::string> names);

  [[nodiscard]] std::size_t size() const { return names_.size(); }
  /// Id of `name`, or UNK when absent.
  [[nodiscard]] std::int32_t id_of(std::string_view name) const;
  [[nodiscard]] bool contains(std::string_view name) const;
  /// Throws DataError for ids outside [0, size()).
  [[nodiscard]] const std::string& name_of(std::int32_t id) const;
  [[nodiscard]] static bool is_reserved(std::int32_t id) { return id >= 0 && id < kReservedCount; }

  /// FNV-1a over the id-ordered names; identifies the vocabulary inside
  /// checkpoints.
  [[nodiscard]] std::uint64_t hash() const;
  [[nodiscard]] std::string hash_hex() const;

  [[nodiscard]] std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Assigns non-reserved ids by descending frequency, ties lexicographic,
/// keeping at most `max_size` ids in total (reserved included).
Vocabulary build_vocab(const std::vector<ApiTrace>& traces, std::size_t max_size);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace emd::corpus
