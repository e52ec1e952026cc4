#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "webformer/dom.hpp"
#include "webformer/numerics/autograd.hpp"
#include "webformer/numerics/tensor.hpp"
#include "webformer/text.hpp"
#include "webformer/topology.hpp"

namespace webformer {

struct PatternFlags {
  bool h2h = true;
  bool h2t = true;
  bool t2h = true;
  bool t2t = true;
  bool h2f = true;  // field token joins every HTML token's H2H softmax

  bool operator==(const PatternFlags&) const = default;
};

struct ModelConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int ffn = 256;
  int radius = 8;
  int segment_dim = 8;
  double dropout = 0.1;
  PatternFlags flags;
  bool share_qk_by_token_type = false;
  int max_span_len = 64;
  std::size_t word_vocab = 2;
  std::size_t tag_vocab = 1;
  std::size_t field_vocab = 1;

  int head_dim() const { return hidden / heads; }
  int embed_dim() const { return hidden - segment_dim; }

  /// Desk-scale default.
  static ModelConfig desk() { return {}; }

  /// Full-size configuration: 12 layers, 768 hidden, 3072 FFN, radius 64,
  /// 12 heads of 64.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.layers = 12;
    c.hidden = 768;
    c.heads = 12;
    c.ffn = 3072;
    c.radius = 64;
    c.segment_dim = 64;
    c.dropout = 0.1;
    return c;
  }

  void validate() const {
    if (layers < 0) throw ConfigError("layer count must be non-negative");
    if (hidden <= 0 || heads <= 0 || hidden % heads != 0) throw ConfigError("hidden size must be a positive multiple of head count");
    if (segment_dim <= 0 || segment_dim >= hidden) throw ConfigError("segment width must leave a positive word/tag width");
    if (ffn <= 0) throw ConfigError("FFN size must be positive");
    if (radius < 0) throw ConfigError("radius must be non-negative");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (max_span_len < 1) throw ConfigError("max_span_len must be positive");
    if (word_vocab < 2 || tag_vocab < 1 || field_vocab < 1) throw ConfigError("vocabulary sizes are not set");
  }

  void set_vocab(const Vocab& v) {
    word_vocab = v.word_count();
    tag_vocab = v.tag_count();
    field_vocab = v.field_count();
  }

  nlohmann::json to_json() const {
    return {{"layers", layers}, {"hidden", hidden}, {"heads", heads}, {"ffn", ffn}, {"radius", radius},
            {"segment_dim", segment_dim}, {"dropout", dropout},
            {"flags", {{"h2h", flags.h2h}, {"h2t", flags.h2t}, {"t2h", flags.t2h}, {"t2t", flags.t2t}, {"h2f", flags.h2f}}},
            {"share_qk_by_token_type", share_qk_by_token_type}, {"max_span_len", max_span_len},
            {"word_vocab", word_vocab}, {"tag_vocab", tag_vocab}, {"field_vocab", field_vocab}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = j.value("layers", c.layers);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.radius = j.value("radius", c.radius);
    c.segment_dim = j.value("segment_dim", c.segment_dim);
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("flags")) {
      const auto& f = j.at("flags");
      c.flags.h2h = f.value("h2h", true);
      c.flags.h2t = f.value("h2t", true);
      c.flags.t2h = f.value("t2h", true);
      c.flags.t2t = f.value("t2t", true);
      c.flags.h2f = f.value("h2f", true);
    }
    c.share_qk_by_token_type = j.value("share_qk_by_token_type", c.share_qk_by_token_type);
    c.max_span_len = j.value("max_span_len", c.max_span_len);
    c.word_vocab = j.value("word_vocab", c.word_vocab);
    c.tag_vocab = j.value("tag_vocab", c.tag_vocab);
    c.field_vocab = j.value("field_vocab", c.field_vocab);
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class Segment : int { kField = 0, kHtml = 1, kText = 2 };

/// Parameter name of a query/key projection. With token-type sharing the
/// query of a pattern is keyed by its query token type and the key by its
/// key token type, so e.g. the T2T and T2H queries resolve to one tensor.
inline std::string projection_name(int layer, const std::string& pattern, char role, bool share) {
  const std::string prefix = "layer" + std::to_string(layer) + ".";
  if (share && pattern != "f2h") {
    const bool text_query = pattern == "t2t" || pattern == "t2h";
    const bool text_key = pattern == "t2t" || pattern == "h2t";
    const bool text = role == 'q' ? text_query : text_key;
    return prefix + role + (text ? ".text" : ".html");
  }
  return prefix + pattern + "." + role;
}

/// Token states flowing through the encoder.
struct StreamState {
  num::Var field;  // 1 x d
  num::Var html;   // N_html x d
  num::Var text;   // N_text x d
};

template <typename T>
struct SpanLogits {
  num::Var begin;        // N_text x 1
  num::Var end;          // admissible ends x 1, starting at `end_offset`
  int begin_index = 0;   // begin the end logits are conditioned on
  int end_offset = 0;    // global index of the first admissible end
};

struct SpanPrediction {
  int begin = 0;
  int end = 0;
  double score = 0.0;  // log P(begin) + log P(end | begin)
  int node = 0;
  std::string text;
};

/// Global range of admissible ends for a begin index: same node, j >= b,
/// j - b < max_span_len.
inline TokenRange admissible_ends(const TokenizedDoc& doc, int begin, int max_span_len) {
  const auto [node, off] = doc.flat_index[static_cast<std::size_t>(begin)];
  const int node_end = doc.node_text_begin[static_cast<std::size_t>(node)] + doc.node_length(node);
  return {begin, std::min(node_end, begin + max_span_len)};
}

template <typename T>
class WebFormer {
 public:
  using Tape = num::Tape<T>;
  using Var = num::Var;

  WebFormer() = default;
  WebFormer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    init_params(seed);
  }
  WebFormer(const ModelConfig& cfg, num::ParamStore<T> params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  num::ParamStore<T>& params() { return params_; }
  const num::ParamStore<T>& params() const { return params_; }

  AttentionTopology topology(const Document& doc) const { return build_topology(doc, cfg_.radius, cfg_.flags.h2f); }

  StreamState embed(Tape& tape, const TokenizedDoc& doc, int field_id) {
    if (field_id < 0 || static_cast<std::size_t>(field_id) >= cfg_.field_vocab)
      throw VocabError("field id " + std::to_string(field_id) + " outside field vocabulary");
    Var seg = p(tape, "emb.segment");
    auto with_segment = [&](Var rows, Segment s, std::size_t n) {
      return num::ops::concat_cols(tape, rows, num::ops::gather_rows(tape, seg, std::vector<int>(n, static_cast<int>(s))));
    };
    std::vector<int> words;
    words.reserve(doc.text_count());
    for (const auto& [node, off] : doc.flat_index)
      words.push_back(doc.text_tokens[static_cast<std::size_t>(node)][static_cast<std::size_t>(off)]);
    StreamState s;
    s.field = with_segment(num::ops::gather_rows(tape, p(tape, "emb.field"), {field_id}), Segment::kField, 1);
    s.html = with_segment(num::ops::gather_rows(tape, p(tape, "emb.tag"), doc.html_tags), Segment::kHtml, doc.html_count());
    s.text = with_segment(num::ops::gather_rows(tape, p(tape, "emb.word"), words), Segment::kText, doc.text_count());
    return s;
  }

  // ---- individual attention flows (per-head contexts, concatenated) ----

  Var h2h_attention(Tape& tape, const StreamState& x, const AttentionTopology& topo, int l) {
    Var q = proj(tape, x.html, l, "h2h", 'q');
    Var edge = p(tape, lname(l, "h2h.edge"));
    Var wk = p(tape, projection_name(l, "h2h", 'k', cfg_.share_qk_by_token_type));
    Var wv = p(tape, lname(l, "value.html"));
    Var k = num::ops::matmul(tape, x.html, wk);
    Var v = num::ops::matmul(tape, x.html, wv);
    if (topo.field_edges) {
      k = num::ops::concat_rows(tape, k, num::ops::matmul(tape, x.field, wk));
      v = num::ops::concat_rows(tape, v, num::ops::matmul(tape, x.field, wv));
    }
    return num::ops::indexed_attention(tape, q, k, v, &topo.h2h, edge, heads(), dropout());
  }

  /// Field-only fallback for HTML tokens when the graph pattern is ablated.
  Var h2f_attention(Tape& tape, const StreamState& x, const AttentionTopology& topo, int l) {
    Var q = proj(tape, x.html, l, "h2h", 'q');
    Var k = num::ops::matmul(tape, x.field, p(tape, projection_name(l, "h2h", 'k', cfg_.share_qk_by_token_type)));
    Var v = num::ops::matmul(tape, x.field, p(tape, lname(l, "value.html")));
    return num::ops::indexed_attention(tape, q, k, v, &topo.h2f, p(tape, lname(l, "h2h.edge")), heads(), dropout());
  }

  Var h2t_attention(Tape& tape, const StreamState& x, const AttentionTopology& topo, int l) {
    Var q = proj(tape, x.html, l, "h2t", 'q');
    Var k = proj(tape, x.text, l, "h2t", 'k');
    Var v = num::ops::matmul(tape, x.text, p(tape, lname(l, "value.text")));
    return num::ops::indexed_attention(tape, q, k, v, &topo.h2t, Var{}, heads(), dropout());
  }

  Var t2h_attention(Tape& tape, const StreamState& x, int l) {
    Var q = proj(tape, x.text, l, "t2h", 'q');
    Var k = proj(tape, x.html, l, "t2h", 'k');
    Var v = num::ops::matmul(tape, x.html, p(tape, lname(l, "value.html")));
    return num::ops::indexed_attention<T>(tape, q, k, v, nullptr, Var{}, heads(), dropout());
  }

  /// Field-only fallback for text tokens when T2H is ablated.
  Var t2f_attention(Tape& tape, const StreamState& x, const AttentionTopology& topo, int l) {
    Var q = proj(tape, x.text, l, "t2h", 'q');
    Var k = proj(tape, x.field, l, "t2h", 'k');
    Var v = num::ops::matmul(tape, x.field, p(tape, lname(l, "value.html")));
    return num::ops::indexed_attention(tape, q, k, v, &topo.t2f, Var{}, heads(), dropout());
  }

  Var t2t_attention(Tape& tape, const StreamState& x, const AttentionTopology& topo, int l) {
    Var q = proj(tape, x.text, l, "t2t", 'q');
    Var k = proj(tape, x.text, l, "t2t", 'k');
    Var v = num::ops::matmul(tape, x.text, p(tape, lname(l, "value.text")));
    if (topo.dense_text) return num::ops::indexed_attention<T>(tape, q, k, v, nullptr, Var{}, heads(), dropout());
    return num::ops::indexed_attention(tape, q, k, v, &topo.t2t, p(tape, lname(l, "t2t.rel")), heads(), dropout());
  }

  Var f2h_attention(Tape& tape, const StreamState& x, int l) {
    Var q = proj(tape, x.field, l, "f2h", 'q');
    Var k = proj(tape, x.html, l, "f2h", 'k');
    Var v = num::ops::matmul(tape, x.html, p(tape, lname(l, "value.field")));
    return num::ops::indexed_attention<T>(tape, q, k, v, nullptr, Var{}, heads(), dropout());
  }

  /// One encoder layer: per-stream summed attention contexts, output
  /// projection, residual + layer norm, then a shared GELU FFN with residual
  /// + layer norm. Disabled patterns contribute nothing.
  StreamState encoder_layer(Tape& tape, const StreamState& x, const AttentionTopology& topo, int l) {
    const auto& f = cfg_.flags;
    Var ctx_html, ctx_text;
    auto accumulate = [&](Var& acc, Var term) { acc = acc.valid() ? num::ops::add(tape, acc, term) : term; };
    if (f.h2h) accumulate(ctx_html, h2h_attention(tape, x, topo, l));
    else if (f.h2f) accumulate(ctx_html, h2f_attention(tape, x, topo, l));
    if (f.h2t) accumulate(ctx_html, h2t_attention(tape, x, topo, l));
    if (f.t2t) accumulate(ctx_text, t2t_attention(tape, x, topo, l));
    if (f.t2h) accumulate(ctx_text, t2h_attention(tape, x, l));
    else if (f.h2f) accumulate(ctx_text, t2f_attention(tape, x, topo, l));
    Var ctx_field = f2h_attention(tape, x, l);

    StreamState out;
    out.field = finish_stream(tape, x.field, ctx_field, l, "field");
    out.html = finish_stream(tape, x.html, ctx_html, l, "html");
    out.text = finish_stream(tape, x.text, ctx_text, l, "text");
    return out;
  }

  StreamState encode(Tape& tape, const Document& doc, const AttentionTopology& topo, int field_id) {
    if (doc.tokens.text_count() == 0) throw EmptyDocument("document has no text tokens");
    StreamState s = embed(tape, doc.tokens, field_id);
    for (int l = 0; l < cfg_.layers; ++l) s = encoder_layer(tape, s, topo, l);
    return s;
  }

  Var begin_logits(Tape& tape, Var z_text) { return num::ops::matmul(tape, z_text, p(tape, "head.begin.w")); }

  /// End logits for ends admissible after `begin`:
  ///   w2 . gelu(z_b W1b + z_j W1t + b1)
  Var end_logits(Tape& tape, Var z_text, const TokenizedDoc& doc, int begin, TokenRange* range = nullptr) {
    const TokenRange r = admissible_ends(doc, begin, cfg_.max_span_len);
    if (range) *range = r;
    Var zb = num::ops::slice_rows(tape, z_text, static_cast<std::size_t>(begin), 1);
    Var hb = num::ops::add(tape, num::ops::matmul(tape, zb, p(tape, "head.end.w_begin")), p(tape, "head.end.b1"));
    Var zj = num::ops::slice_rows(tape, z_text, static_cast<std::size_t>(r.begin), static_cast<std::size_t>(r.size()));
    Var hidden = num::ops::add_row(tape, num::ops::matmul(tape, zj, p(tape, "head.end.w_token")), hb);
    return num::ops::matmul(tape, num::ops::gelu(tape, hidden), p(tape, "head.end.w2"));
  }

  /// Begin logits and end logits conditioned on `begin` (the gold begin in
  /// training, the argmax begin otherwise when `begin` < 0).
  SpanLogits<T> span_head(Tape& tape, Var z_text, const TokenizedDoc& doc, int begin = -1) {
    SpanLogits<T> out;
    out.begin = begin_logits(tape, z_text);
    if (begin < 0) begin = argmax_first(tape.value(out.begin), 0, doc.text_count());
    TokenRange r;
    out.end = end_logits(tape, z_text, doc, begin, &r);
    out.begin_index = begin;
    out.end_offset = r.begin;
    return out;
  }

  /// Mean of begin cross-entropy and end cross-entropy given the gold begin.
  Var loss(Tape& tape, const SpanLogits<T>& logits, const TokenizedDoc& doc, int gold_begin, int gold_end) {
    validate_span(doc, gold_begin, gold_end);
    if (logits.begin_index != gold_begin) throw LabelError("end logits are not conditioned on the gold begin");
    Var ce_b = num::ops::cross_entropy(tape, logits.begin, static_cast<std::size_t>(gold_begin));
    Var ce_e = num::ops::cross_entropy(tape, logits.end, static_cast<std::size_t>(gold_end - logits.end_offset));
    return num::ops::scale(tape, num::ops::add(tape, ce_b, ce_e), T(0.5));
  }

  void validate_span(const TokenizedDoc& doc, int b, int e) const {
    const int n = static_cast<int>(doc.text_count());
    if (b < 0 || e < b || e >= n) throw LabelError("span [" + std::to_string(b) + ", " + std::to_string(e) + "] invalid");
    if (doc.flat_index[static_cast<std::size_t>(b)].first != doc.flat_index[static_cast<std::size_t>(e)].first)
      throw LabelError("span crosses text nodes");
    if (e - b >= cfg_.max_span_len) throw LabelError("span longer than max_span_len");
  }

  /// Training loss for one (document, field, gold span) example.
  Var example_loss(Tape& tape, const Document& doc, const AttentionTopology& topo, int field_id, int gold_begin,
                   int gold_end) {
    validate_span(doc.tokens, gold_begin, gold_end);
    StreamState z = encode(tape, doc, topo, field_id);
    return loss(tape, span_head(tape, z.text, doc.tokens, gold_begin), doc.tokens, gold_begin, gold_end);
  }

  SpanPrediction decode(const Tape& tape, const SpanLogits<T>& logits, const TokenizedDoc& doc) const {
    const auto& B = tape.value(logits.begin);
    const auto& E = tape.value(logits.end);
    SpanPrediction pred;
    pred.begin = logits.begin_index;
    pred.end = logits.end_offset + argmax_first(E, 0, E.size());
    pred.score = log_softmax_at(B, static_cast<std::size_t>(pred.begin)) +
                 log_softmax_at(E, static_cast<std::size_t>(pred.end - logits.end_offset));
    pred.node = doc.flat_index[static_cast<std::size_t>(pred.begin)].first;
    pred.text = doc.span_text(pred.begin, pred.end);
    return pred;
  }

  /// Eval-mode extraction for one field.
  SpanPrediction predict(const Document& doc, const AttentionTopology& topo, int field_id) {
    Tape tape(false);
    StreamState z = encode(tape, doc, topo, field_id);
    return decode(tape, span_head(tape, z.text, doc.tokens), doc.tokens);
  }

  static int argmax_first(const num::Tensor<T>& v, std::size_t from, std::size_t to) {
    std::size_t best = from;
    for (std::size_t i = from + 1; i < to; ++i)
      if (v[i] > v[best]) best = i;
    return static_cast<int>(best);
  }

  static double log_softmax_at(const num::Tensor<T>& v, std::size_t i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < v.size(); ++k) mx = std::max(mx, static_cast<double>(v[k]));
    double z = 0;
    for (std::size_t k = 0; k < v.size(); ++k) z += std::exp(static_cast<double>(v[k]) - mx);
    return static_cast<double>(v[i]) - mx - std::log(z);
  }

 private:
  std::size_t heads() const { return static_cast<std::size_t>(cfg_.heads); }
  T dropout() const { return static_cast<T>(cfg_.dropout); }
  static std::string lname(int l, const std::string& rest) { return "layer" + std::to_string(l) + "." + rest; }

  Var p(Tape& tape, const std::string& name) { return tape.param(params_, name); }

  Var proj(Tape& tape, Var x, int l, const std::string& pattern, char role) {
    return num::ops::matmul(tape, x, p(tape, projection_name(l, pattern, role, cfg_.share_qk_by_token_type)));
  }

  Var finish_stream(Tape& tape, Var x, Var ctx, int l, const std::string& stream) {
    Var h = x;
    if (ctx.valid()) {
      Var o = num::ops::matmul(tape, ctx, p(tape, lname(l, "out." + stream + ".w")));
      o = num::ops::add_row(tape, o, p(tape, lname(l, "out." + stream + ".b")));
      h = num::ops::add(tape, x, o);
    }
    h = num::ops::layer_norm(tape, h, p(tape, lname(l, "ln1.gamma")), p(tape, lname(l, "ln1.beta")));
    Var a = num::ops::add_row(tape, num::ops::matmul(tape, h, p(tape, lname(l, "ffn.w1"))), p(tape, lname(l, "ffn.b1")));
    a = num::ops::gelu(tape, a);
    a = num::ops::add_row(tape, num::ops::matmul(tape, a, p(tape, lname(l, "ffn.w2"))), p(tape, lname(l, "ffn.b2")));
    return num::ops::layer_norm(tape, num::ops::add(tape, h, a), p(tape, lname(l, "ln2.gamma")), p(tape, lname(l, "ln2.beta")));
  }

  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden);
    const std::size_t e = static_cast<std::size_t>(cfg_.embed_dim());
    const std::size_t dh = static_cast<std::size_t>(cfg_.head_dim());
    const T bound = T(1) / std::sqrt(static_cast<T>(d));
    auto uniform = [&](std::size_t r, std::size_t c) {
      std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
      num::Tensor<T> t(r, c);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
      return t;
    };
    auto constant = [](std::size_t n, T v) { return num::Tensor<T>(num::Shape{n}, v); };
    auto add_once = [&](const std::string& name, auto make) {
      if (!params_.contains(name)) params_.add(name, make());
    };

    params_.add("emb.word", uniform(cfg_.word_vocab, e));
    params_.add("emb.tag", uniform(cfg_.tag_vocab, e));
    params_.add("emb.field", uniform(cfg_.field_vocab, e));
    params_.add("emb.segment", uniform(3, static_cast<std::size_t>(cfg_.segment_dim)));
    const bool share = cfg_.share_qk_by_token_type;
    for (int l = 0; l < cfg_.layers; ++l) {
      for (const char* pattern : {"h2h", "h2t", "t2h", "t2t", "f2h"}) {
        add_once(projection_name(l, pattern, 'q', share), [&] { return uniform(d, d); });
        add_once(projection_name(l, pattern, 'k', share), [&] { return uniform(d, d); });
      }
      for (const char* v : {"value.html", "value.text", "value.field"}) params_.add(lname(l, v), uniform(d, d));
      params_.add(lname(l, "h2h.edge"), num::Tensor<T>(static_cast<std::size_t>(kEdgeTypeCount), dh));
      params_.add(lname(l, "t2t.rel"), num::Tensor<T>(static_cast<std::size_t>(2 * cfg_.radius + 1), dh));
      for (const char* s : {"field", "html", "text"}) {
        params_.add(lname(l, std::string("out.") + s + ".w"), uniform(d, d));
        params_.add(lname(l, std::string("out.") + s + ".b"), constant(d, T(0)));
      }
      params_.add(lname(l, "ln1.gamma"), constant(d, T(1)));
      params_.add(lname(l, "ln1.beta"), constant(d, T(0)));
      params_.add(lname(l, "ffn.w1"), uniform(d, static_cast<std::size_t>(cfg_.ffn)));
      params_.add(lname(l, "ffn.b1"), constant(static_cast<std::size_t>(cfg_.ffn), T(0)));
      params_.add(lname(l, "ffn.w2"), uniform(static_cast<std::size_t>(cfg_.ffn), d));
      params_.add(lname(l, "ffn.b2"), constant(d, T(0)));
      params_.add(lname(l, "ln2.gamma"), constant(d, T(1)));
      params_.add(lname(l, "ln2.beta"), constant(d, T(0)));
    }
    params_.add("head.begin.w", uniform(d, 1));
    params_.add("head.end.w_begin", uniform(d, d));
    params_.add("head.end.w_token", uniform(d, d));
    params_.add("head.end.b1", num::Tensor<T>(1, d));
    params_.add("head.end.w2", uniform(d, 1));
  }

  ModelConfig cfg_;
  num::ParamStore<T> params_;
};

}  // namespace webformer
