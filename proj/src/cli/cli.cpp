#include "emd/cli/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "emd/corpus/split.hpp"
#include "emd/corpus/synth.hpp"
#include "emd/corpus/trace.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/detector/detector.hpp"
#include "emd/error.hpp"
#include "emd/eval/report.hpp"
#include "emd/io/checkpoint.hpp"

namespace emd::cli {
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kDefaultSeed = 1;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("EMD_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("EMD_SEED must be an unsigned integer");
  }
  return kDefaultSeed;
}

std::string config_hash(const json& cfg) { return corpus::hex64(corpus::fnv1a(cfg.dump())); }

// Corpus selection shared by every command that reads labeled traces.
struct CorpusArgs {
  std::string path;
  std::string format;
  std::string part;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 13;

  void add(CLI::App* app, const std::string& default_part) {
    part = default_part;
    app->add_option("--corpus", path, "trace file (JSONL or CSV)")->required();
    app->add_option("--format", format, "jsonl or csv (default: from extension)");
    app->add_option("--split", part, "which part to use: all, train or test")
        ->check(CLI::IsMember({"all", "train", "test"}))
        ->capture_default_str();
    app->add_option("--test-fraction", test_fraction, "held-out fraction")->capture_default_str();
    app->add_option("--split-seed", split_seed, "split seed")->capture_default_str();
  }

  [[nodiscard]] corpus::TraceFormat resolved_format() const {
    if (!format.empty()) return corpus::parse_format(format);
    return path.ends_with(".csv") ? corpus::TraceFormat::csv : corpus::TraceFormat::jsonl;
  }

  [[nodiscard]] std::vector<corpus::ApiTrace> load() const {
    auto traces = corpus::ingest(path, resolved_format());
    if (part == "all") return traces;
    auto s = corpus::split(traces, test_fraction, split_seed);
    return part == "train" ? std::move(s.train) : std::move(s.test);
  }

  [[nodiscard]] json to_json() const {
    return {{"corpus", path}, {"split", part}, {"test_fraction", test_fraction}, {"split_seed", split_seed}};
  }
};

// Training-side dev split carved from the selected traces.
struct DevSplit {
  std::vector<corpus::ApiTrace> train;
  std::vector<corpus::ApiTrace> dev;
};

DevSplit carve_dev(const std::vector<corpus::ApiTrace>& traces, double dev_fraction, std::uint64_t seed) {
  if (dev_fraction <= 0.0) return {traces, {}};
  auto s = corpus::split(traces, dev_fraction, mix_seed(seed, 77));
  return {std::move(s.train), std::move(s.test)};
}

struct ModelDims {
  std::size_t max_len = 128;
  std::size_t embed_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  float dropout = 0.1f;

  void add(CLI::App* app) {
    app->add_option("--max-len", max_len, "context length in tokens")->capture_default_str();
    app->add_option("--embed-dim", embed_dim)->capture_default_str();
    app->add_option("--layers", layers)->capture_default_str();
    app->add_option("--heads", heads)->capture_default_str();
    app->add_option("--ff-dim", ff_dim)->capture_default_str();
    app->add_option("--dropout", dropout)->capture_default_str();
  }

  [[nodiscard]] encoder::EncoderConfig encoder_config(std::size_t vocab_size, std::uint64_t seed) const {
    encoder::EncoderConfig c;
    c.vocab_size = vocab_size;
    c.max_len = max_len;
    c.embed_dim = embed_dim;
    c.n_layers = layers;
    c.n_heads = heads;
    c.ff_dim = ff_dim;
    c.dropout = dropout;
    c.attention_dropout = dropout;
    c.seed = seed;
    return c;
  }
};

std::vector<std::size_t> parse_horizons(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size() || v == 0) throw ConfigError("");
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--horizons expects a comma list of positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("--horizons must not be empty");
  return out;
}

std::vector<std::string> parse_calls(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct EarlyArgs {
  std::size_t prefix_len = 20;
  std::string strategy = "greedy";
  std::size_t k = 5;
  double temperature = 1.0;
  float threshold = detector::kDefaultThreshold;

  void add(CLI::App* app) {
    app->add_option("--prefix-len", prefix_len, "observed calls before prediction")->capture_default_str();
    app->add_option("--strategy", strategy, "greedy or topk")->capture_default_str();
    app->add_option("--k", k, "top-k sampling width")->capture_default_str();
    app->add_option("--temperature", temperature)->capture_default_str();
    app->add_option("--threshold", threshold, "malware iff probability >= threshold")->capture_default_str();
  }

  [[nodiscard]] detector::EarlyDetectConfig config(std::size_t horizon, std::uint64_t seed) const {
    detector::EarlyDetectConfig c;
    c.prefix_len = prefix_len;
    c.horizon = horizon;
    c.strategy = genlm::parse_strategy(strategy);
    c.k = k;
    c.temperature = temperature;
    c.seed = seed;
    c.threshold = threshold;
    c.validate();
    return c;
  }
};

json curve_json(const std::vector<double>& v) { return json(v); }

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    eval::write_text(path, text);
  }
}

json verdict_json(const std::string& id, const detector::Verdict& v) {
  return {{"id", id},
          {"probability", v.probability},
          {"label", corpus::label_name(v.label)},
          {"prefix_used", v.prefix_used},
          {"extended_len", v.extended_len},
          {"suffix", v.suffix}};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App app{"Early malware detection from API-call traces"};
  app.require_subcommand(1);

  // gen-corpus
  corpus::SynthConfig synth;
  std::string synth_out, synth_format = "jsonl";
  auto* gen = app.add_subcommand("gen-corpus", "write a seeded synthetic trace corpus");
  gen->add_option("--out", synth_out, "output path")->required();
  gen->add_option("--format", synth_format, "jsonl or csv")->capture_default_str();
  gen->add_option("--traces", synth.n_traces)->capture_default_str();
  gen->add_option("--vocab-size", synth.vocab_size, "distinct API names")->capture_default_str();
  gen->add_option("--malware-fraction", synth.malware_fraction)->capture_default_str();
  gen->add_option("--onset-min", synth.motif_onset_min, "earliest planted-motif position")->capture_default_str();
  gen->add_option("--family-bias", synth.family_bias, "malware background pull toward family motifs")
      ->capture_default_str();
  gen->add_option("--onset-rate", synth.onset_rate, "per-boundary chance of the first planted motif")
      ->capture_default_str();
  gen->add_option("--onset-spread", synth.onset_spread, "latest first-motif start past the onset minimum")
      ->capture_default_str();
  gen->add_option("--min-len", synth.min_len)->capture_default_str();
  gen->add_option("--max-len", synth.max_len)->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();

  // build-vocab
  CorpusArgs vocab_corpus;
  std::string vocab_out;
  std::size_t vocab_max = 1u << 20;
  auto* bv = app.add_subcommand("build-vocab", "build the API-name vocabulary");
  vocab_corpus.add(bv, "all");
  bv->add_option("--out", vocab_out)->required();
  bv->add_option("--max-size", vocab_max, "largest vocabulary including reserved ids");

  // shared model/training flags
  std::string vocab_path, model_out, lm_path, detector_path, encoder_path, report_out, report_format = "json";
  std::size_t epochs = 10, batch_size = 32;
  double lr = 1e-3, dev_fraction = 0.1;
  std::optional<std::uint64_t> seed_flag;
  ModelDims dims;

  // train-lm
  CorpusArgs lm_corpus;
  auto* tlm = app.add_subcommand("train-lm", "train the next-call language model");
  lm_corpus.add(tlm, "train");
  tlm->add_option("--vocab", vocab_path)->required();
  tlm->add_option("--out", model_out)->required();
  tlm->add_option("--epochs", epochs)->capture_default_str();
  tlm->add_option("--batch-size", batch_size)->capture_default_str();
  tlm->add_option("--lr", lr)->capture_default_str();
  tlm->add_option("--dev-fraction", dev_fraction)->capture_default_str();
  tlm->add_option("--seed", seed_flag, "default: EMD_SEED or 1");
  tlm->add_option("--log", report_out, "training log JSON (default: stdout)");
  dims.add(tlm);

  // train-encoder
  CorpusArgs enc_corpus;
  double mask_rate = 0.15;
  auto* tenc = app.add_subcommand("train-encoder", "masked-token pretraining of the contextual encoder");
  enc_corpus.add(tenc, "train");
  tenc->add_option("--vocab", vocab_path)->required();
  tenc->add_option("--out", model_out)->required();
  tenc->add_option("--epochs", epochs)->capture_default_str();
  tenc->add_option("--batch-size", batch_size)->capture_default_str();
  tenc->add_option("--lr", lr)->capture_default_str();
  tenc->add_option("--mask-rate", mask_rate)->capture_default_str();
  tenc->add_option("--seed", seed_flag, "default: EMD_SEED or 1");
  tenc->add_option("--log", report_out, "training log JSON (default: stdout)");
  dims.add(tenc);

  // train-detector
  CorpusArgs det_corpus;
  std::string variant = "bigru_attention";
  bool freeze = false;
  std::size_t hidden = 32;
  float head_dropout = 0.3f;
  auto* tdet = app.add_subcommand("train-detector", "train the encoder + head classifier");
  det_corpus.add(tdet, "train");
  tdet->add_option("--vocab", vocab_path)->required();
  tdet->add_option("--out", model_out)->required();
  tdet->add_option("--encoder", encoder_path, "pretrained encoder checkpoint (default: fresh)");
  tdet->add_option("--variant", variant, "bigru_attention, lstm, bilstm, gru or cnn")->capture_default_str();
  tdet->add_flag("--freeze-encoder", freeze, "train the head only");
  tdet->add_option("--hidden", hidden, "recurrent units per direction")->capture_default_str();
  tdet->add_option("--head-dropout", head_dropout)->capture_default_str();
  tdet->add_option("--epochs", epochs)->capture_default_str();
  tdet->add_option("--batch-size", batch_size)->capture_default_str();
  tdet->add_option("--lr", lr)->capture_default_str();
  tdet->add_option("--dev-fraction", dev_fraction)->capture_default_str();
  tdet->add_option("--seed", seed_flag, "default: EMD_SEED or 1");
  tdet->add_option("--log", report_out, "training log JSON (default: stdout)");
  dims.add(tdet);

  // predict-suffix
  std::string prefix_text;
  std::size_t horizon = 10;
  EarlyArgs early;
  auto* ps = app.add_subcommand("predict-suffix", "predict the calls that follow a prefix");
  ps->add_option("--lm", lm_path)->required();
  ps->add_option("--vocab", vocab_path)->required();
  ps->add_option("--prefix", prefix_text, "comma-separated API calls")->required();
  ps->add_option("--horizon", horizon)->capture_default_str();
  ps->add_option("--strategy", early.strategy, "greedy or topk")->capture_default_str();
  ps->add_option("--k", early.k)->capture_default_str();
  ps->add_option("--temperature", early.temperature)->capture_default_str();
  ps->add_option("--seed", seed_flag, "default: EMD_SEED or 1");

  // detect
  CorpusArgs detect_corpus;
  std::string calls_text;
  bool full_trace = false;
  auto* det = app.add_subcommand("detect", "early detection verdicts, one JSON object per trace");
  det->add_option("--detector", detector_path)->required();
  det->add_option("--vocab", vocab_path)->required();
  det->add_option("--lm", lm_path, "language model (not needed with --full)");
  det->add_option("--corpus", detect_corpus.path, "trace file");
  det->add_option("--format", detect_corpus.format);
  det->add_option("--calls", calls_text, "one trace as comma-separated calls");
  det->add_flag("--full", full_trace, "classify whole traces without prediction");
  det->add_option("--horizon", horizon)->capture_default_str();
  det->add_option("--seed", seed_flag, "default: EMD_SEED or 1");
  det->add_option("--out", report_out, "output path (default: stdout)");
  early.add(det);

  // sweep
  CorpusArgs sweep_corpus;
  std::string horizons_text = "10,20,30";
  auto* sw = app.add_subcommand("sweep", "early-detection metrics per horizon");
  sweep_corpus.add(sw, "test");
  sw->add_option("--lm", lm_path)->required();
  sw->add_option("--detector", detector_path)->required();
  sw->add_option("--vocab", vocab_path)->required();
  sw->add_option("--horizons", horizons_text, "comma list")->capture_default_str();
  sw->add_option("--seed", seed_flag, "default: EMD_SEED or 1");
  sw->add_option("--out", report_out, "report path (default: stdout)");
  sw->add_option("--report-format", report_format, "json or csv")->capture_default_str();
  early.add(sw);

  // evaluate
  CorpusArgs eval_corpus;
  float eval_threshold = detector::kDefaultThreshold;
  auto* ev = app.add_subcommand("evaluate", "full-trace classification metrics");
  eval_corpus.add(ev, "test");
  ev->add_option("--detector", detector_path)->required();
  ev->add_option("--vocab", vocab_path)->required();
  ev->add_option("--threshold", eval_threshold)->capture_default_str();
  ev->add_option("--out", report_out, "report path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  const std::uint64_t run_seed = seed_flag.value_or(seed);

  try {
    if (gen->parsed()) {
      const auto traces = corpus::generate_synthetic(synth);
      corpus::write_traces(synth_out, traces, corpus::parse_format(synth_format));
      return kExitOk;
    }
    if (bv->parsed()) {
      corpus::build_vocab(vocab_corpus.load(), vocab_max).save(vocab_out);
      return kExitOk;
    }
    const auto vocab = corpus::Vocabulary::load(vocab_path);

    if (tlm->parsed()) {
      const auto split = carve_dev(lm_corpus.load(), dev_fraction, run_seed);
      genlm::LmConfig cfg;
      cfg.vocab_size = vocab.size();
      cfg.max_len = dims.max_len;
      cfg.embed_dim = dims.embed_dim;
      cfg.n_layers = dims.layers;
      cfg.n_heads = dims.heads;
      cfg.ff_dim = dims.ff_dim;
      cfg.dropout = dims.dropout;
      cfg.seed = run_seed;
      genlm::GenerativeLm lm(cfg, vocab.hash());
      const double untrained = split.dev.empty() ? 0.0 : genlm::perplexity(lm, split.dev, vocab);
      genlm::TrainOptions opts{epochs, batch_size, lr, 1.0, run_seed};
      const auto curve = genlm::lm_train(lm, split.train, split.dev, vocab, opts);
      io::save_lm(lm, model_out);
      json run{{"command", "train-lm"}, {"corpus", lm_corpus.to_json()}, {"model", cfg.to_json()},
               {"epochs", epochs},      {"batch_size", batch_size},      {"lr", lr},
               {"dev_fraction", dev_fraction}};
      json log{{"run_config", run},
               {"config_hash", config_hash(run)},
               {"train_traces", split.train.size()},
               {"dev_traces", split.dev.size()},
               {"train_loss", curve_json(curve.train)},
               {"dev_loss", curve_json(curve.dev)}};
      if (!split.dev.empty()) {
        log["dev_perplexity_untrained"] = untrained;
        log["dev_perplexity"] = genlm::perplexity(lm, split.dev, vocab);
      }
      write_or_print(report_out, log.dump(2) + "\n", out);
      return kExitOk;
    }

    if (tenc->parsed()) {
      const auto traces = enc_corpus.load();
      encoder::ContextualEncoder enc(dims.encoder_config(vocab.size(), run_seed), vocab.hash());
      encoder::MlmOptions opts;
      opts.mask_rate = mask_rate;
      opts.epochs = epochs;
      opts.batch_size = batch_size;
      opts.lr = lr;
      opts.seed = run_seed;
      const auto curve = encoder::mlm_pretrain(enc, traces, vocab, opts);
      io::save_encoder(enc, model_out);
      json run{{"command", "train-encoder"}, {"corpus", enc_corpus.to_json()}, {"model", enc.config().to_json()},
               {"epochs", epochs},           {"batch_size", batch_size},       {"lr", lr},
               {"mask_rate", mask_rate}};
      json log{{"run_config", run}, {"config_hash", config_hash(run)}, {"mlm_loss", curve_json(curve.loss)}};
      write_or_print(report_out, log.dump(2) + "\n", out);
      return kExitOk;
    }

    if (tdet->parsed()) {
      const auto split = carve_dev(det_corpus.load(), dev_fraction, run_seed);
      head::HeadConfig hc;
      hc.variant = head::parse_variant(variant);
      hc.hidden = hidden;
      hc.dropout = head_dropout;
      hc.seed = mix_seed(run_seed, 3);
      std::optional<detector::DetectorModel> model;
      if (!encoder_path.empty()) {
        const auto enc = io::load_encoder(encoder_path, &vocab);
        hc.input_dim = enc.config().embed_dim;
        model.emplace(enc, hc);
      } else {
        hc.input_dim = dims.embed_dim;
        model.emplace(dims.encoder_config(vocab.size(), run_seed), hc, vocab.hash());
      }
      detector::DetectorOptions opts;
      opts.epochs = epochs;
      opts.batch_size = batch_size;
      opts.lr = lr;
      opts.seed = run_seed;
      opts.freeze_encoder = freeze;
      const auto curve = detector::train_detector(*model, split.train, split.dev, vocab, opts);
      io::save_detector(*model, model_out);
      std::size_t malware = 0;
      for (const auto& t : split.train) malware += t.label == corpus::Label::malware ? 1 : 0;
      json run{{"command", "train-detector"},
               {"corpus", det_corpus.to_json()},
               {"encoder", model->encoder().config().to_json()},
               {"head", hc.to_json()},
               {"pretrained_encoder", encoder_path},
               {"training", model->meta.to_json()},
               {"dev_fraction", dev_fraction}};
      json log{{"run_config", run},
               {"config_hash", config_hash(run)},
               {"train_traces", split.train.size()},
               {"train_malware", malware},
               {"train_benign", split.train.size() - malware},
               {"dev_traces", split.dev.size()},
               {"train_loss", curve_json(curve.train_loss)},
               {"dev_loss", curve_json(curve.dev_loss)},
               {"dev_accuracy", curve_json(curve.dev_accuracy)}};
      write_or_print(report_out, log.dump(2) + "\n", out);
      return kExitOk;
    }

    if (ps->parsed()) {
      const auto lm = io::load_lm(lm_path, &vocab);
      const auto calls = parse_calls(prefix_text);
      if (calls.empty()) throw DataError("--prefix holds no calls");
      genlm::GenRequest req;
      req.prefix = corpus::encode_ids(calls, vocab, calls.size() + 1, /*add_eos=*/false);
      req.horizon = horizon;
      req.strategy = genlm::parse_strategy(early.strategy);
      req.k = early.k;
      req.temperature = early.temperature;
      req.seed = run_seed;
      for (auto id : genlm::generate_suffix(lm, req)) out << vocab.name_of(id) << "\n";
      return kExitOk;
    }

    if (det->parsed()) {
      const auto model = io::load_detector(detector_path, &vocab);
      std::vector<corpus::ApiTrace> traces;
      if (!calls_text.empty()) {
        corpus::ApiTrace t;
        t.id = "cli";
        t.calls = parse_calls(calls_text);
        traces.push_back(std::move(t));
      } else if (!detect_corpus.path.empty()) {
        detect_corpus.part = "all";
        traces = detect_corpus.load();
      } else {
        throw ConfigError("detect needs --calls or --corpus");
      }
      std::string text;
      int code = kExitOk;
      if (full_trace) {
        for (const auto& t : traces) {
          text += verdict_json(t.id, detector::classify_trace(model, vocab, t.calls, early.threshold)).dump() + "\n";
        }
      } else {
        if (lm_path.empty()) throw ConfigError("detect needs --lm unless --full is given");
        const auto lm = io::load_lm(lm_path, &vocab);
        const auto r = detector::batch_detect(lm, model, vocab, traces, early.config(horizon, run_seed));
        for (std::size_t i = 0; i < traces.size(); ++i) {
          if (r.ok[i]) text += verdict_json(traces[i].id, r.verdicts[i]).dump() + "\n";
        }
        for (const auto& e : r.errors) {
          err << "error: trace " << e.trace_id << ": " << e.message << "\n";
          code = kExitData;
        }
      }
      write_or_print(report_out, text, out);
      return code;
    }

    if (sw->parsed()) {
      const auto lm = io::load_lm(lm_path, &vocab);
      const auto model = io::load_detector(detector_path, &vocab);
      const auto traces = sweep_corpus.load();
      const auto horizons = parse_horizons(horizons_text);
      const auto fmt = eval::parse_report_format(report_format);
      auto result = eval::run_sweep(lm, model, vocab, traces, early.prefix_len, horizons,
                                    early.config(horizons.front(), run_seed));
      json run{{"command", "sweep"},
               {"corpus", sweep_corpus.to_json()},
               {"lm", lm.config().to_json()},
               {"detector_training", model.meta.to_json()},
               {"seed", run_seed}};
      result.metadata["run_config"] = run;
      result.metadata["config_hash"] = config_hash(run);
      write_or_print(report_out, eval::format_report(result, fmt), out);
      return kExitOk;
    }

    if (ev->parsed()) {
      const auto model = io::load_detector(detector_path, &vocab);
      const auto traces = eval_corpus.load();
      const auto scores = detector::score_traces(model, traces, vocab);
      const auto metrics = eval::compute_metrics(scores, eval::labels_of(traces), eval_threshold);
      json run{{"command", "evaluate"},
               {"corpus", eval_corpus.to_json()},
               {"variant", head::variant_name(model.head().config().variant)},
               {"detector_training", model.meta.to_json()},
               {"threshold", eval_threshold}};
      json meta{{"run_config", run},
                {"config_hash", config_hash(run)},
                {"vocab_hash", vocab.hash_hex()},
                {"detector_config_hash", model.config_hash()}};
      write_or_print(report_out, eval::evaluation_json(metrics, meta).dump(2) + "\n", out);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CompatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace emd::cli
