#include "emd/corpus/vocab.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "emd/error.hpp"

namespace emd::corpus {
namespace {

const std::vector<std::string>& reserved_names() {
  static const std::vector<std::string> names{"<pad>", "<unk>", "<bos>", "<eos>"};
  return names;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> names) : names_(reserved_names()) {
  names_.reserve(names.size() + kReservedCount);
  for (std::string& n : names) {
    if (n.empty()) throw DataError("vocabulary entries must be non-empty");
    const auto id = static_cast<std::int32_t>(names_.size());
    if (!ids_.emplace(n, id).second) throw DataError("duplicate vocabulary entry '" + n + "'");
    names_.push_back(std::move(n));
  }
}

std::int32_t Vocabulary::id_of(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view name) const { return ids_.count(std::string(name)) != 0; }

const std::string& Vocabulary::name_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw DataError("id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(names_.size()));
  }
  return names_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(kVocabFormat);
  for (const std::string& n : names_) {
    h = fnv1a(n, h);
    h = fnv1a("\n", h);
  }
  return h;
}

std::string Vocabulary::hash_hex() const { return hex64(hash()); }

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = kVocabFormat;
  j["reserved"] = {{"PAD", kPad}, {"UNK", kUnk}, {"BOS", kBos}, {"EOS", kEos}};
  nlohmann::ordered_json ids = nlohmann::ordered_json::object();
  for (std::size_t i = kReservedCount; i < names_.size(); ++i) ids[names_[i]] = i;
  j["size"] = names_.size();
  j["id_of"] = ids;
  j["hash"] = hash_hex();
  return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("vocabulary: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string{}) != kVocabFormat) {
    throw CompatError("vocabulary: expected format '" + std::string(kVocabFormat) + "'");
  }
  const auto& r = j.at("reserved");
  if (r.at("PAD") != kPad || r.at("UNK") != kUnk || r.at("BOS") != kBos || r.at("EOS") != kEos) {
    throw CompatError("vocabulary: reserved id block does not match this build");
  }
  std::map<std::int64_t, std::string> by_id;
  for (const auto& [name, id] : j.at("id_of").items()) by_id[id.get<std::int64_t>()] = name;
  std::vector<std::string> names;
  std::int64_t expect = kReservedCount;
  for (auto& [id, name] : by_id) {
    if (id != expect++) throw DataError("vocabulary: ids are not dense from 4");
    names.push_back(name);
  }
  Vocabulary v(std::move(names));
  if (j.contains("hash") && j["hash"].get<std::string>() != v.hash_hex()) {
    throw CompatError("vocabulary: stored hash does not match contents");
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << to_json();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Vocabulary build_vocab(const std::vector<ApiTrace>& traces, std::size_t max_size) {
  if (max_size < 5) throw ConfigError("build_vocab: max_size must be at least 5");
  std::unordered_map<std::string, std::size_t> counts;
  for (const ApiTrace& t : traces)
    for (const std::string& c : t.calls) ++counts[c];
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t keep = std::min(entries.size(), max_size - kReservedCount);
  std::vector<std::string> names;
  names.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) names.push_back(entries[i].first);
  return Vocabulary(std::move(names));
}

}  // namespace emd::corpus
