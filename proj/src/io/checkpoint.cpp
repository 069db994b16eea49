#include "emd/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "emd/error.hpp"

namespace emd::io {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

constexpr std::size_t kMaxFormatLine = 64;
constexpr std::uint64_t kMaxHeader = 1ULL << 26;

std::uint64_t parse_hash(const std::string& hex) {
  if (hex.size() != 16) throw CompatError("checkpoint: malformed vocabulary hash");
  std::uint64_t v = 0;
  for (char c : hex) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw CompatError("checkpoint: malformed vocabulary hash");
  }
  return v;
}

std::string read_format_line(std::istream& in, const std::string& path) {
  std::string line;
  char c = 0;
  while (line.size() <= kMaxFormatLine && in.get(c) && c != '\n') line.push_back(c);
  if (c != '\n') throw CompatError("'" + path + "' is not an emd artifact");
  return line;
}

void save(const std::string& path, std::string_view format, nlohmann::ordered_json header,
          const nn::NamedParams& params) {
  header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << format << '\n';
  const std::uint64_t n = text.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params) {
    const auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

struct Opened {
  std::ifstream in;
  nlohmann::json header;
};

Opened open(const std::string& path, std::string_view format) {
  Opened o{std::ifstream(path, std::ios::binary), {}};
  if (!o.in) throw DataError("cannot open '" + path + "'");
  const std::string found = read_format_line(o.in, path);
  if (found != format) {
    throw CompatError("'" + path + "': expected format " + std::string(format) + ", found '" + found + "'");
  }
  std::uint64_t n = 0;
  if (!o.in.read(reinterpret_cast<char*>(&n), sizeof n) || n > kMaxHeader) {
    throw CompatError("'" + path + "': truncated or corrupt header");
  }
  std::string text(n, '\0');
  if (!o.in.read(text.data(), static_cast<std::streamsize>(n))) throw CompatError("'" + path + "': truncated header");
  try {
    o.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CompatError("'" + path + "': corrupt header: " + e.what());
  }
  return o;
}

void check_vocab(const nlohmann::json& header, const corpus::Vocabulary* vocab, const std::string& path) {
  if (vocab != nullptr && parse_hash(header.at("vocab_hash")) != vocab->hash()) {
    throw CompatError("'" + path + "': vocabulary hash " + header.at("vocab_hash").get<std::string>() +
                      " does not match vocabulary " + vocab->hash_hex());
  }
}

void fill(Opened& o, const nn::NamedParams& params, const std::string& path) {
  const auto& listed = o.header.at("tensors");
  if (listed.size() != params.size()) throw CompatError("'" + path + "': tensor count does not match the config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (listed[i].at("name") != name || listed[i].at("shape").get<Shape>() != t.shape()) {
      throw CompatError("'" + path + "': tensor " + std::to_string(i) + " does not match " + name + " " +
                        shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : params) {
    Tensor target = t;
    auto d = target.data();
    if (!o.in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)))) {
      throw CompatError("'" + path + "': truncated tensor data at " + name);
    }
  }
  if (o.in.peek() != std::char_traits<char>::eof()) throw CompatError("'" + path + "': trailing bytes");
}

template <typename Fn>
auto guarded(const std::string& path, Fn fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw CompatError("'" + path + "': bad header field: " + e.what());
  } catch (const ConfigError& e) {
    throw CompatError("'" + path + "': " + e.what());
  }
}

nn::NamedParams encoder_params(const encoder::ContextualEncoder& enc) {
  nn::NamedParams p = enc.parameters();
  for (auto& [name, t] : enc.mlm_parameters()) p.emplace_back("mlm." + name, t);
  return p;
}

}  // namespace

std::string peek_format(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_format_line(in, path);
}

void save_lm(const genlm::GenerativeLm& lm, const std::string& path) {
  nlohmann::ordered_json h{{"config", lm.config().to_json()}, {"vocab_hash", corpus::hex64(lm.vocab_hash())}};
  save(path, kLmFormat, std::move(h), lm.parameters());
}

genlm::GenerativeLm load_lm(const std::string& path, const corpus::Vocabulary* vocab) {
  return guarded(path, [&] {
    Opened o = open(path, kLmFormat);
    check_vocab(o.header, vocab, path);
    genlm::GenerativeLm lm(genlm::LmConfig::from_json(o.header.at("config")), parse_hash(o.header.at("vocab_hash")));
    fill(o, lm.parameters(), path);
    return lm;
  });
}

void save_encoder(const encoder::ContextualEncoder& enc, const std::string& path) {
  nlohmann::ordered_json h{{"config", enc.config().to_json()}, {"vocab_hash", corpus::hex64(enc.vocab_hash())}};
  save(path, kEncoderFormat, std::move(h), encoder_params(enc));
}

encoder::ContextualEncoder load_encoder(const std::string& path, const corpus::Vocabulary* vocab) {
  return guarded(path, [&] {
    Opened o = open(path, kEncoderFormat);
    check_vocab(o.header, vocab, path);
    encoder::ContextualEncoder enc(encoder::EncoderConfig::from_json(o.header.at("config")),
                                   parse_hash(o.header.at("vocab_hash")));
    fill(o, encoder_params(enc), path);
    return enc;
  });
}

void save_detector(const detector::DetectorModel& model, const std::string& path) {
  nlohmann::ordered_json h{{"encoder", model.encoder().config().to_json()},
                           {"head", model.head().config().to_json()},
                           {"vocab_hash", corpus::hex64(model.vocab_hash())},
                           {"metadata", model.meta.to_json()}};
  save(path, kDetectorFormat, std::move(h), model.parameters());
}

detector::DetectorModel load_detector(const std::string& path, const corpus::Vocabulary* vocab) {
  return guarded(path, [&] {
    Opened o = open(path, kDetectorFormat);
    check_vocab(o.header, vocab, path);
    detector::DetectorModel model(encoder::EncoderConfig::from_json(o.header.at("encoder")),
                                  head::HeadConfig::from_json(o.header.at("head")),
                                  parse_hash(o.header.at("vocab_hash")));
    model.meta = detector::TrainingMeta::from_json(o.header.at("metadata"));
    fill(o, model.parameters(), path);
    return model;
  });
}

}  // namespace emd::io
