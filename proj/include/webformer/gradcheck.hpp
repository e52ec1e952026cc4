#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "webformer/corpus.hpp"
#include "webformer/model.hpp"
#include "webformer/numerics/optim.hpp"

namespace webformer {

struct GradcheckConfig {
  std::size_t coords = 200;
  std::uint64_t seed = 1;
  double tolerance = 1e-5;
  double step = 1e-4;
  // Gradients smaller than this are compared in absolute terms.
  double floor = 1e-6;

  void validate() const {
    if (coords == 0) throw ConfigError("gradcheck needs at least one coordinate");
    if (!(tolerance > 0.0) || !(step > 0.0) || floor < 0.0) throw ConfigError("gradcheck tolerance, step and floor must be positive");
  }
};

struct GradcheckSample {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckSample> samples;
  double tolerance = 0.0;

  const GradcheckSample& worst() const {
    return *std::max_element(samples.begin(), samples.end(),
                             [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
  }
  std::vector<GradcheckSample> failures() const {
    std::vector<GradcheckSample> out;
    for (const auto& s : samples)
      if (!(s.rel_error <= tolerance)) out.push_back(s);
    return out;
  }
  bool passed() const { return failures().empty(); }

  nlohmann::json to_json() const {
    nlohmann::json bad = nlohmann::json::array();
    for (const auto& s : failures())
      bad.push_back({{"tensor", s.tensor}, {"index", s.index}, {"analytic", s.analytic}, {"numeric", s.numeric},
                     {"rel_error", s.rel_error}});
    const auto& w = worst();
    return {{"coords", samples.size()}, {"tolerance", tolerance}, {"passed", passed()},
            {"worst", {{"tensor", w.tensor}, {"index", w.index}, {"rel_error", w.rel_error}}}, {"failures", bad}};
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backprop gradients of one example loss against central
/// differences. Coordinates: a tensor uniformly at random, then an entry;
/// for embedding tables the row is drawn from ids the document uses, since
/// other rows are trivially zero. `tamper` runs between backward and the
/// comparison, which lets tests corrupt an adjoint on purpose.
inline GradcheckReport gradcheck(WebFormer<double>& model, const Document& doc, const AttentionTopology& topo,
                                 int field_id, int gold_begin, int gold_end, const GradcheckConfig& cfg,
                                 const std::function<void(num::ParamStore<double>&)>& tamper = {}) {
  cfg.validate();
  auto& store = model.params();
  auto loss_value = [&]() {
    num::Tape<double> tape(false);
    return tape.value(model.example_loss(tape, doc, topo, field_id, gold_begin, gold_end))[0];
  };
  store.zero_grad();
  {
    num::Tape<double> tape(false);
    tape.backward(model.example_loss(tape, doc, topo, field_id, gold_begin, gold_end));
  }
  if (tamper) tamper(store);

  std::set<int> word_rows, tag_rows;
  for (const auto& row : doc.tokens.text_tokens) word_rows.insert(row.begin(), row.end());
  tag_rows.insert(doc.tokens.html_tags.begin(), doc.tokens.html_tags.end());
  auto pick_row = [](const std::set<int>& rows, std::mt19937_64& rng) {
    auto it = rows.begin();
    std::advance(it, static_cast<long>(std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng)));
    return static_cast<std::size_t>(*it);
  };

  std::mt19937_64 rng(cfg.seed);
  GradcheckReport report;
  report.tolerance = cfg.tolerance;
  auto& params = store.params();
  for (std::size_t c = 0; c < cfg.coords; ++c) {
    auto& p = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    std::size_t index;
    if (p.name == "emb.word" || p.name == "emb.tag" || p.name == "emb.field") {
      const std::size_t row = p.name == "emb.word"  ? pick_row(word_rows, rng)
                              : p.name == "emb.tag" ? pick_row(tag_rows, rng)
                                                    : static_cast<std::size_t>(field_id);
      index = row * p.value.cols() + std::uniform_int_distribution<std::size_t>(0, p.value.cols() - 1)(rng);
    } else {
      index = std::uniform_int_distribution<std::size_t>(0, p.value.size() - 1)(rng);
    }
    GradcheckSample s;
    s.tensor = p.name;
    s.index = index;
    s.analytic = p.grad[index];
    s.numeric = num::finite_diff_grad<double>(loss_value, p, index, cfg.step);
    s.rel_error = relative_error(s.analytic, s.numeric, cfg.floor);
    report.samples.push_back(s);
  }
  store.zero_grad();
  return report;
}

/// Random desk-config model and random synthetic page for the gradient check.
struct GradcheckFixture {
  Vocab vocab;
  Document doc;
  AttentionTopology topo;
  WebFormer<double> model;
  int field_id = 0;
  int begin = 0;
  int end = 0;
};

inline GradcheckFixture make_gradcheck_fixture(std::uint64_t seed, ModelConfig cfg = ModelConfig::desk()) {
  std::mt19937_64 rng(seed);
  const auto& schemas = builtin_schemas();
  const auto& schema = schemas[std::uniform_int_distribution<std::size_t>(0, schemas.size() - 1)(rng)];
  LabeledPage page = gen_page(schema, rng());
  GradcheckFixture fx;
  fx.vocab = build_vocab({page}, 1);
  fx.doc = ingest(page.html, fx.vocab);
  cfg.set_vocab(fx.vocab);
  fx.model = WebFormer<double>(cfg, rng());
  fx.topo = fx.model.topology(fx.doc);
  const Label& label = page.labels[std::uniform_int_distribution<std::size_t>(0, page.labels.size() - 1)(rng)];
  fx.field_id = fx.vocab.field_id(label.field);
  auto span = locate_answer(fx.doc.tokens, label.value);
  if (!span) throw LabelError("generated label not found on its page");
  fx.begin = fx.doc.tokens.global_index(span->node, span->begin);
  fx.end = fx.doc.tokens.global_index(span->node, span->end);
  return fx;
}

}  // namespace webformer
