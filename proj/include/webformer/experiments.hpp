#pragma once

// Drivers shared by the CLI and the acceptance binary: pattern ablations and
// the attention-cost benchmark.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "webformer/flops.hpp"
#include "webformer/trainer.hpp"

namespace webformer {

inline const std::vector<std::string>& pattern_names() {
  static const std::vector<std::string> names = {"h2h", "h2t", "t2h", "t2t"};
  return names;
}

/// Turns one attention pattern off; unknown names are a ConfigError.
inline void disable_pattern(PatternFlags& flags, const std::string& name) {
  if (name == "h2h") flags.h2h = false;
  else if (name == "h2t") flags.h2t = false;
  else if (name == "t2h") flags.t2h = false;
  else if (name == "t2t") flags.t2t = false;
  else throw ConfigError("unknown attention pattern '" + name + "' (expected h2h, h2t, t2h or t2t)");
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---- ablations ----

struct AblationRow {
  std::string variant;  // "full" or "-h2h" etc.
  std::vector<double> em, f1;

  double mean_em() const { return em.empty() ? 0.0 : std::accumulate(em.begin(), em.end(), 0.0) / static_cast<double>(em.size()); }
  double mean_f1() const { return f1.empty() ? 0.0 : std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size()); }
};

struct AblationConfig {
  std::vector<std::string> disable = pattern_names();
  std::vector<std::uint64_t> seeds = {1};
  TrainConfig train;
};

/// Trains the full model and one model per disabled pattern on the same
/// corpus for every seed; scores held-out (test) EM/F1.
inline std::vector<AblationRow> ablation_experiment(const CorpusSplits& corpus, const Vocab& vocab,
                                                    const AblationConfig& cfg,
                                                    const std::function<void(const std::string&)>& log = {}) {
  for (const auto& name : cfg.disable) {
    PatternFlags probe;
    disable_pattern(probe, name);
  }
  if (cfg.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<std::string> variants = {"full"};
  for (const auto& name : cfg.disable) variants.push_back("-" + name);

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v;
    ModelConfig mc = cfg.train.model;
    mc.set_vocab(vocab);
    if (v != "full") disable_pattern(mc.flags, v.substr(1));
    const PreparedSet tr = prepare(corpus.train, vocab, mc, cfg.train.caps, cfg.train.max_skip_rate);
    const PreparedSet dv = prepare(corpus.dev, vocab, mc, cfg.train.caps);
    const PreparedSet te = prepare(corpus.test, vocab, mc, cfg.train.caps);
    for (std::uint64_t seed : cfg.seeds) {
      TrainConfig tc = cfg.train;
      tc.model = mc;
      tc.seed = seed;
      WebFormer<float> model(mc, seed);
      train(model, tr, dv, tc);
      const Metrics m = evaluate(model, te);
      row.em.push_back(m.exact_match());
      row.f1.push_back(m.f1());
      if (log) log(v + " seed " + std::to_string(seed) + " test EM " + std::to_string(m.exact_match()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"variant", r.variant}, {"em", r.em}, {"f1", r.f1}, {"mean_em", r.mean_em()}, {"mean_f1", r.mean_f1()}});
  return out;
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,mean_em,mean_f1,seeds\n";
  for (const auto& r : rows) os << r.variant << ',' << r.mean_em() << ',' << r.mean_f1() << ',' << r.em.size() << '\n';
  return os.str();
}

// ---- attention benchmark ----

struct BenchConfig {
  std::vector<std::size_t> lengths = {512, 1024, 2048};
  std::string mode = "webformer";  // or "full"
  std::size_t html_nodes = 64;     // N_html, fixed across lengths
  int radius = 8;
  int repeats = 5;
  std::uint64_t seed = 1;

  void validate() const {
    if (mode != "webformer" && mode != "full") throw ConfigError("bench mode must be webformer or full");
    if (lengths.empty()) throw ConfigError("bench needs at least one length");
    if (html_nodes < 3) throw ConfigError("bench needs at least 3 HTML nodes");
    if (repeats < 1) throw ConfigError("bench repeats must be positive");
    for (auto n : lengths)
      if (n < html_nodes - 2) throw ConfigError("each length must cover one word per text node");
  }
};

struct BenchRow {
  std::string mode;
  std::size_t length = 0;
  std::uint64_t flops = 0;
  double ms = 0.0;
};

/// A page with exactly `html_nodes` elements (html, body, then p nodes) and
/// `length` words spread evenly over the p nodes.
inline std::string bench_page(std::size_t length, std::size_t html_nodes, std::uint64_t seed) {
  const std::size_t paras = html_nodes - 2;
  std::mt19937_64 rng(seed);
  static const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "river", "stone", "market",
                                                 "north", "event", "ticket", "price", "garden"};
  std::string html = "<html><body>";
  for (std::size_t p = 0; p < paras; ++p) {
    const std::size_t n = length / paras + (p < length % paras ? 1 : 0);
    html += "<p>";
    for (std::size_t w = 0; w < n; ++w) html += (w ? " " : "") + words[rng() % words.size()];
    html += "</p>";
  }
  return html + "</body></html>";
}

inline std::vector<BenchRow> bench_attention(const BenchConfig& cfg) {
  cfg.validate();
  std::vector<BenchRow> rows;
  for (std::size_t length : cfg.lengths) {
    const std::string html = bench_page(length, cfg.html_nodes, cfg.seed);
    LabeledPage page{html, "bench", {{"name", "alpha"}}};
    const Vocab vocab = build_vocab({page}, 1);
    const IngestCaps caps{cfg.html_nodes, length};
    const Document doc = ingest(html, vocab, caps);
    ModelConfig mc = ModelConfig::desk();
    mc.radius = cfg.radius;
    mc.set_vocab(vocab);
    WebFormer<float> model(mc, cfg.seed);
    AttentionTopology topo = model.topology(doc);
    BenchRow row;
    row.mode = cfg.mode;
    row.length = doc.tokens.text_count();
    if (cfg.mode == "full") {
      topo = dense_text_topology(topo);
      row.flops = full_attention_flops(mc, row.length);
    } else {
      row.flops = flop_count(mc, topo).attention();
    }
    // Best of `repeats` after one warm-up pass; preemption only ever adds time.
    row.ms = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= cfg.repeats; ++r) {
      num::Tape<float> tape(false);
      const auto t0 = std::chrono::steady_clock::now();
      model.encode(tape, doc, topo, 0);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (r > 0) row.ms = std::min(row.ms, ms);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string bench_to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "mode,length,flops,ms\n";
  for (const auto& r : rows) os << r.mode << ',' << r.length << ',' << r.flops << ',' << r.ms << '\n';
  return os.str();
}

}  // namespace webformer
