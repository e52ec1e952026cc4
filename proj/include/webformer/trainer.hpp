#pragma once

// Training loop, evaluation, checkpoints and the few-shot transfer driver.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "webformer/corpus.hpp"
#include "webformer/dom.hpp"
#include "webformer/model.hpp"
#include "webformer/numerics/optim.hpp"
#include "webformer/text.hpp"
#include "webformer/topology.hpp"

namespace webformer {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int eval_every = 1;   // epochs between dev evaluations
  int patience = 0;     // stop after this many evaluations without dev improvement; 0 = never
  double max_skip_rate = 0.10;
  IngestCaps caps;
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (patience < 0) throw ConfigError("patience must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed},
            {"eval_every", eval_every}, {"patience", patience}, {"max_skip_rate", max_skip_rate},
            {"max_html_tokens", caps.max_html_tokens}, {"max_text_tokens", caps.max_text_tokens},
            {"model", model.to_json()}};
  }
};

/// One supervised example: a field of a page with its gold span (global,
/// inclusive).
struct Example {
  std::size_t doc = 0;
  int field_id = 0;
  std::string field;
  std::string gold;
  int begin = 0;
  int end = 0;
};

/// Ingested pages plus their examples. Topologies are cached per document;
/// they must outlive every tape that references them.
struct PreparedSet {
  std::vector<Document> docs;
  std::vector<AttentionTopology> topologies;
  std::vector<std::string> domains;
  std::vector<Example> examples;
  std::size_t pages = 0;
  std::size_t skipped_pages = 0;
  std::size_t skipped_labels = 0;
  std::vector<std::string> warnings;
};

/// Ingests pages; a page that fails to ingest is skipped with a warning and a
/// label that cannot be aligned drops only that example.
inline PreparedSet prepare(const std::vector<LabeledPage>& pages, const Vocab& vocab, const ModelConfig& model,
                           const IngestCaps& caps = {}, double max_skip_rate = 1.0) {
  PreparedSet set;
  set.pages = pages.size();
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const auto& page = pages[i];
    Document doc;
    try {
      doc = ingest(page.html, vocab, caps);
    } catch (const Error& e) {
      ++set.skipped_pages;
      set.warnings.push_back("page " + std::to_string(i) + " skipped: " + e.what());
      continue;
    }
    const std::size_t d = set.docs.size();
    for (const auto& l : page.labels) {
      if (!vocab.has_field(l.field)) {
        ++set.skipped_labels;
        continue;
      }
      const auto span = split_words(l.value).empty() ? std::nullopt : locate_answer(doc.tokens, l.value);
      if (!span || span->end - span->begin >= model.max_span_len) {
        ++set.skipped_labels;
        set.warnings.push_back("page " + std::to_string(i) + " field '" + l.field + "' not aligned");
        continue;
      }
      Example ex;
      ex.doc = d;
      ex.field_id = vocab.field_id(l.field);
      ex.field = l.field;
      ex.gold = l.value;
      ex.begin = doc.tokens.global_index(span->node, span->begin);
      ex.end = doc.tokens.global_index(span->node, span->end);
      set.examples.push_back(std::move(ex));
    }
    set.topologies.push_back(build_topology(doc, model.radius, model.flags.h2f));
    set.docs.push_back(std::move(doc));
    set.domains.push_back(page.domain);
  }
  if (!pages.empty() && static_cast<double>(set.skipped_pages) > max_skip_rate * static_cast<double>(pages.size()))
    throw DataQualityError(std::to_string(set.skipped_pages) + " of " + std::to_string(pages.size()) +
                           " pages failed to ingest");
  return set;
}

// ---- evaluation ----

struct Prediction {
  std::size_t example = 0;
  SpanPrediction span;
};

template <typename T>
Metrics evaluate(WebFormer<T>& model, const PreparedSet& set, std::vector<Prediction>* predictions = nullptr) {
  Metrics m;
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    const auto& ex = set.examples[i];
    const auto& doc = set.docs[ex.doc];
    const SpanPrediction p = model.predict(doc, set.topologies[ex.doc], ex.field_id);
    m.add(ex.field, doc.tokens.raw_text_tokens, em_f1(p.text, ex.gold));
    if (predictions) predictions->push_back({i, p});
  }
  return m;
}

// ---- training ----

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_em = -1.0;  // -1 when not evaluated this epoch
  double dev_f1 = -1.0;
  double seconds = 0.0;

  bool operator==(const EpochLog& o) const {
    return epoch == o.epoch && train_loss == o.train_loss && dev_em == o.dev_em && dev_f1 == o.dev_f1;
  }
};

struct TrainResult {
  std::vector<EpochLog> history;
  num::ParamStore<float> best_params;
  int best_epoch = 0;
  double best_dev_em = -1.0;
  std::size_t steps = 0;
};

inline nlohmann::json history_to_json(const std::vector<EpochLog>& h) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : h)
    out.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_em", e.dev_em}, {"dev_f1", e.dev_f1},
                   {"seconds", e.seconds}});
  return out;
}

/// Forward + backward of one example on a fresh tape; gradients are added to
/// the parameters scaled by `weight`. Returns the unscaled loss.
template <typename T>
double accumulate_example(WebFormer<T>& model, const PreparedSet& set, const Example& ex, T weight,
                          std::uint64_t dropout_seed) {
  num::Tape<T> tape(true, dropout_seed);
  const auto& doc = set.docs[ex.doc];
  num::Var loss = model.example_loss(tape, doc, set.topologies[ex.doc], ex.field_id, ex.begin, ex.end);
  const double value = static_cast<double>(tape.value(loss)[0]);
  tape.backward(num::ops::scale(tape, loss, weight));
  return value;
}

/// Mini-batch steps over `examples` (indices into set.examples) in a fixed
/// shuffled order. lr = 0 leaves every parameter untouched.
template <typename T>
double run_steps(WebFormer<T>& model, const PreparedSet& set, const std::vector<std::size_t>& order, int batch_size,
                 double lr, std::uint64_t seed, std::size_t& step_counter) {
  num::AdamConfig adam;
  adam.lr = lr;
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const T weight = T(1) / static_cast<T>(stop - start);
    for (std::size_t k = start; k < stop; ++k)
      total += accumulate_example(model, set, set.examples[order[k]], weight, detail::mix_seed(seed, step_counter * 4096 + k));
    if (lr > 0.0) num::adam_step(model.params(), adam);
    else model.params().zero_grad();
    ++step_counter;
  }
  return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

/// Trains on `train`, evaluating on `dev` every `eval_every` epochs; the
/// parameters with the best dev EM are kept. The model is left holding them.
template <typename T>
TrainResult train(WebFormer<T>& model, const PreparedSet& train_set, const PreparedSet& dev_set, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.examples.empty()) throw EmptyDataset("no training examples");
  TrainResult result;
  result.best_params = model.params().template cast<float>();
  std::vector<std::size_t> order(train_set.examples.size());
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = run_steps(model, train_set, order, cfg.batch_size, cfg.lr, cfg.seed, result.steps);
    bool improved = false;
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      const Metrics m = dev_set.examples.empty() ? Metrics{} : evaluate(model, dev_set);
      log.dev_em = m.exact_match();
      log.dev_f1 = m.f1();
      if (log.dev_em > result.best_dev_em) {
        result.best_dev_em = log.dev_em;
        result.best_epoch = epoch;
        result.best_params = model.params().template cast<float>();
        improved = true;
      }
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (log.dev_em >= 0.0) {
      since_best = improved ? 0 : since_best + 1;
      if (cfg.patience > 0 && since_best >= cfg.patience) break;
      if (log.dev_em >= 1.0) break;  // nothing left to select for
    }
  }
  // Restore the selected parameters (optimizer state is not part of the selection).
  auto& params = model.params();
  for (auto& p : params.params()) {
    const auto& best = result.best_params.get(p.name).value;
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(best[i]);
  }
  return result;
}

// ---- checkpoints ----

struct Checkpoint {
  ModelConfig config;
  num::ParamStore<float> params;
  std::string vocab_hash;
  std::optional<Vocab> vocab;
};

namespace detail {

inline bool host_is_little_endian() {
  const std::uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

inline void write_f32_le(std::ostream& out, const float* data, std::size_t n) {
  if (host_is_little_endian()) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, data + i, 4);
    const char bytes[4] = {char(u & 0xff), char((u >> 8) & 0xff), char((u >> 16) & 0xff), char(u >> 24)};
    out.write(bytes, 4);
  }
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t u = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                          (std::uint32_t(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

/// Writes `dir`/manifest.json, `dir`/params.bin (little-endian f32 in
/// manifest order) and `dir`/vocab.json.
inline void save_checkpoint(const std::string& dir, const ModelConfig& config, const num::ParamStore<float>& params,
                            const Vocab& vocab) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create checkpoint directory " + dir + ": " + ec.message());
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw IOError("cannot write " + (fs::path(dir) / "params.bin").string());
  for (const auto& p : params.params()) {
    const std::size_t bytes = p.value.size() * sizeof(float);
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"dtype", "float32"}, {"offset", offset},
                       {"count", p.value.size()}});
    detail::write_f32_le(blob, p.value.data(), p.value.size());
    offset += bytes;
  }
  blob.close();
  if (!blob) throw IOError("write failed for params.bin");
  const nlohmann::json manifest = {{"format", "webformer-checkpoint"}, {"version", 1},     {"byteorder", "little"},
                                   {"total_bytes", offset},            {"tensors", tensors}, {"config", config.to_json()},
                                   {"vocab_hash", vocab.hash()}};
  std::ofstream m(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!m) throw IOError("cannot write manifest in " + dir);
  m << manifest.dump(2) << '\n';
  vocab.save((fs::path(dir) / "vocab.json").string());
}

template <typename T>
void save_checkpoint(const std::string& dir, const WebFormer<T>& model, const Vocab& vocab) {
  save_checkpoint(dir, model.config(), model.params().template cast<float>(), vocab);
}

/// Loads and validates a checkpoint: every tensor must match the shapes the
/// stored configuration implies and the blob must hold exactly the listed
/// bytes.
inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  const fs::path bpath = fs::path(dir) / "params.bin";
  std::ifstream min(mpath, std::ios::binary);
  if (!min) throw CorruptCheckpoint("missing " + mpath.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("unreadable manifest: ") + e.what());
  }
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw CorruptCheckpoint("missing " + bpath.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_json(manifest.at("config"));
    ck.config.validate();
    ck.vocab_hash = manifest.at("vocab_hash").get<std::string>();
    const auto& tensors = manifest.at("tensors");
    const WebFormer<float> reference(ck.config, 0);
    const auto& ref = reference.params();
    if (tensors.size() != ref.size()) throw CorruptCheckpoint("tensor count does not match the configuration");
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = tensors[i];
      const std::string name = t.at("name").get<std::string>();
      const num::Shape shape = t.at("shape").get<num::Shape>();
      const std::size_t offset = t.at("offset").get<std::size_t>();
      const std::size_t count = t.at("count").get<std::size_t>();
      if (t.value("dtype", std::string("float32")) != "float32") throw CorruptCheckpoint(name + ": unsupported dtype");
      if (!ref.contains(name)) throw CorruptCheckpoint("unexpected tensor " + name);
      if (shape != ref.get(name).value.shape())
        throw CorruptCheckpoint(name + ": shape " + num::shape_string(shape) + " does not match configuration " +
                                num::shape_string(ref.get(name).value.shape()));
      if (count != num::shape_size(shape)) throw CorruptCheckpoint(name + ": count disagrees with shape");
      if (offset != expected_offset) throw CorruptCheckpoint(name + ": offset out of sequence");
      if (offset + count * 4 > blob.size()) throw CorruptCheckpoint(name + ": blob is truncated");
      num::Tensor<float> value(shape);
      for (std::size_t k = 0; k < count; ++k) value[k] = detail::read_f32_le(blob.data() + offset + 4 * k);
      ck.params.add(name, std::move(value));
      expected_offset = offset + count * 4;
    }
    if (expected_offset != blob.size())
      throw CorruptCheckpoint("blob holds " + std::to_string(blob.size()) + " bytes, manifest lists " +
                              std::to_string(expected_offset));
    if (manifest.contains("total_bytes") && manifest.at("total_bytes").get<std::size_t>() != blob.size())
      throw CorruptCheckpoint("total_bytes disagrees with blob size");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(std::string("invalid configuration: ") + e.what());
  }
  const fs::path vpath = fs::path(dir) / "vocab.json";
  if (fs::exists(vpath)) {
    try {
      ck.vocab = Vocab::load(vpath.string());
    } catch (const Error& e) {
      throw CorruptCheckpoint(std::string("vocab: ") + e.what());
    }
    if (ck.vocab->hash() != ck.vocab_hash) throw CorruptCheckpoint("stored vocab does not match its recorded hash");
  }
  return ck;
}

inline void require_vocab(const Checkpoint& ck, const Vocab& vocab) {
  if (vocab.hash() != ck.vocab_hash)
    throw VocabHashError("vocabulary hash " + vocab.hash() + " does not match checkpoint " + ck.vocab_hash);
}

/// Evaluates a checkpoint on pages ingested with `vocab`.
inline Metrics evaluate(const Checkpoint& ck, const std::vector<LabeledPage>& pages, const Vocab& vocab,
                        const IngestCaps& caps = {}, std::vector<Prediction>* predictions = nullptr,
                        PreparedSet* prepared = nullptr) {
  require_vocab(ck, vocab);
  WebFormer<float> model(ck.config, ck.params);
  PreparedSet set = prepare(pages, vocab, ck.config, caps);
  Metrics m = evaluate(model, set, predictions);
  if (prepared) *prepared = std::move(set);
  return m;
}

// ---- few-shot transfer ----

struct TransferConfig {
  std::vector<std::string> source_domains = {"products", "movies"};
  std::string target_domain = "events";
  std::vector<int> shots = {0, 1, 2, 5, 10, 50, 100};
  TrainConfig pretrain;
  int finetune_steps = 2000;
  int finetune_batch = 16;
  double finetune_lr = 1e-3;
};

struct TransferRow {
  int shots = 0;
  Metrics metrics;  // target-domain test metrics
};

/// Pretrains on the source domains, then for every shot count fine-tunes a
/// copy on the first `shots` target training pages and scores the target
/// test pages. The vocabulary covers all domains.
inline std::vector<TransferRow> transfer_experiment(const CorpusSplits& corpus, const Vocab& vocab,
                                                    const TransferConfig& cfg,
                                                    const std::function<void(const std::string&)>& log = {}) {
  auto by_domain = [](const std::vector<LabeledPage>& pages, const std::vector<std::string>& domains) {
    std::vector<LabeledPage> out;
    for (const auto& p : pages)
      if (std::find(domains.begin(), domains.end(), p.domain) != domains.end()) out.push_back(p);
    return out;
  };
  const auto target_train = by_domain(corpus.train, {cfg.target_domain});
  for (int s : cfg.shots) {
    if (s < 0) throw ConfigError("shot counts must be non-negative");
    if (static_cast<std::size_t>(s) > target_train.size())
      throw ConfigError("shot count " + std::to_string(s) + " exceeds the " + std::to_string(target_train.size()) +
                        " available target pages");
  }
  if (cfg.finetune_steps < 1 || cfg.finetune_batch < 1) throw ConfigError("fine-tune budget must be positive");

  ModelConfig mc = cfg.pretrain.model;
  mc.set_vocab(vocab);
  const PreparedSet src_train = prepare(by_domain(corpus.train, cfg.source_domains), vocab, mc, cfg.pretrain.caps,
                                        cfg.pretrain.max_skip_rate);
  const PreparedSet src_dev = prepare(by_domain(corpus.dev, cfg.source_domains), vocab, mc, cfg.pretrain.caps);
  const PreparedSet tgt_test = prepare(by_domain(corpus.test, {cfg.target_domain}), vocab, mc, cfg.pretrain.caps);

  WebFormer<float> base(mc, cfg.pretrain.seed);
  TrainConfig pre = cfg.pretrain;
  pre.model = mc;
  train(base, src_train, src_dev, pre, [&](const EpochLog& e) {
    if (log) log("pretrain epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.train_loss) + " dev_em " +
                 std::to_string(e.dev_em));
  });

  std::vector<TransferRow> rows;
  for (int s : cfg.shots) {
    WebFormer<float> model(mc, base.params());
    model.params().step() = 0;
    for (auto& p : model.params().params()) {
      p.m.zero();
      p.v.zero();
    }
    if (s > 0) {
      const std::vector<LabeledPage> shots(target_train.begin(), target_train.begin() + s);
      const PreparedSet ft = prepare(shots, vocab, mc, cfg.pretrain.caps);
      if (!ft.examples.empty()) {
        std::mt19937_64 rng(detail::mix_seed(cfg.pretrain.seed, 7919u + static_cast<std::uint64_t>(s)));
        std::vector<std::size_t> pool(ft.examples.size());
        std::vector<std::size_t> order;
        const std::size_t needed = static_cast<std::size_t>(cfg.finetune_steps) * static_cast<std::size_t>(cfg.finetune_batch);
        while (order.size() < needed) {
          std::iota(pool.begin(), pool.end(), std::size_t{0});
          std::shuffle(pool.begin(), pool.end(), rng);
          order.insert(order.end(), pool.begin(), pool.end());
        }
        order.resize(needed);
        std::size_t steps = 0;
        run_steps(model, ft, order, cfg.finetune_batch, cfg.finetune_lr, cfg.pretrain.seed + 17u * static_cast<std::uint64_t>(s), steps);
      }
    }
    TransferRow row;
    row.shots = s;
    row.metrics = evaluate(model, tgt_test);
    if (log) log("shots " + std::to_string(s) + " target EM " + std::to_string(row.metrics.exact_match()));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace webformer
