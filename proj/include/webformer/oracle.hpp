#pragma once

// Reference computations used by the test and acceptance suites: a dense
// masked attention built straight from the DOM, and a node-shuffling
// re-serializer for the permutation check.

#include <cmath>
#include <algorithm>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "webformer/dom.hpp"
#include "webformer/model.hpp"

namespace webformer::oracle {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// allowed(i, j) plus an optional key-offset row per entry (-1 for none).
struct Mask {
  std::vector<std::vector<bool>> allowed;
  std::vector<std::vector<int>> bias;
};

/// Softmax over all keys with -inf logits where the mask forbids; the offset
/// vector of an entry is added to the key row before the dot product. Rows
/// with no allowed key are zero.
inline Mat dense_masked_attention(const Mat& Q, const Mat& K, const Mat& V, const Mask& mask, const Mat* table,
                                  int heads) {
  const Eigen::Index nq = Q.rows(), nk = K.rows(), d = Q.cols(), dh = d / heads;
  Mat out = Mat::Zero(nq, d);
  const double inf = std::numeric_limits<double>::infinity();
  for (int h = 0; h < heads; ++h) {
    Mat logits(nq, nk);
    for (Eigen::Index i = 0; i < nq; ++i)
      for (Eigen::Index j = 0; j < nk; ++j) {
        if (!mask.allowed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          logits(i, j) = -inf;
          continue;
        }
        Eigen::RowVectorXd key = K.row(j).segment(h * dh, dh);
        const int b = mask.bias.empty() ? -1 : mask.bias[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (table && b >= 0) key += table->row(b);
        logits(i, j) = Q.row(i).segment(h * dh, dh).dot(key) / std::sqrt(static_cast<double>(dh));
      }
    for (Eigen::Index i = 0; i < nq; ++i) {
      const double mx = logits.row(i).maxCoeff();
      if (mx == -inf) continue;
      Eigen::RowVectorXd p = (logits.row(i).array() - mx).exp();
      p /= p.sum();
      out.block(i, h * dh, 1, dh) = p * V.block(0, h * dh, nk, dh);
    }
  }
  return out;
}

inline Mat to_mat(const num::Tensor<double>& t) {
  return Eigen::Map<const Mat>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

/// Masks derived from the DOM and token layout directly, not from the
/// neighbor lists under test.
struct PatternMasks {
  Mask h2h, h2t, t2h, t2t, f2h;
};

inline PatternMasks build_masks(const Document& doc, int radius, bool field_edges) {
  const auto& g = doc.graph;
  const std::size_t nh = g.nodes.size(), nt = doc.tokens.text_count();
  auto blank = [](std::size_t r, std::size_t c) {
    Mask m;
    m.allowed.assign(r, std::vector<bool>(c, false));
    m.bias.assign(r, std::vector<int>(c, -1));
    return m;
  };
  PatternMasks m;
  m.h2h = blank(nh, nh + (field_edges ? 1 : 0));
  for (std::size_t i = 0; i < nh; ++i) {
    const auto& a = g.nodes[i];
    for (std::size_t j = 0; j < nh; ++j) {
      const auto& b = g.nodes[j];
      int e = -1;
      if (i == j) e = static_cast<int>(EdgeType::kSelf);
      else if (a.parent && *a.parent == static_cast<int>(j)) e = static_cast<int>(EdgeType::kParent);
      else if (b.parent && *b.parent == static_cast<int>(i)) e = static_cast<int>(EdgeType::kChild);
      else if (a.parent && b.parent && *a.parent == *b.parent) e = static_cast<int>(EdgeType::kSibling);
      if (e >= 0) {
        m.h2h.allowed[i][j] = true;
        m.h2h.bias[i][j] = e;
      }
    }
    if (field_edges) {
      m.h2h.allowed[i][nh] = true;
      m.h2h.bias[i][nh] = static_cast<int>(EdgeType::kField);
    }
  }
  m.h2t = blank(nh, nt);
  m.t2t = blank(nt, nt);
  for (std::size_t i = 0; i < nt; ++i) {
    const auto [node_i, off_i] = doc.tokens.flat_index[i];
    m.h2t.allowed[static_cast<std::size_t>(node_i)][i] = true;
    for (std::size_t j = 0; j < nt; ++j) {
      const auto [node_j, off_j] = doc.tokens.flat_index[j];
      if (node_i == node_j && std::abs(off_i - off_j) <= radius) {
        m.t2t.allowed[i][j] = true;
        m.t2t.bias[i][j] = off_i - off_j + radius;
      }
    }
  }
  m.t2h = blank(nt, nh);
  for (auto& row : m.t2h.allowed) row.assign(nh, true);
  m.f2h = blank(1, nh);
  m.f2h.allowed[0].assign(nh, true);
  return m;
}

struct OracleDiff {
  double h2h = 0, h2t = 0, t2h = 0, t2t = 0, f2h = 0;
  double max() const { return std::max({h2h, h2t, t2h, t2t, f2h}); }
};

/// Max |sparse - dense| per pattern for layer `l` on random input states.
inline OracleDiff compare_with_dense(WebFormer<double>& model, const Document& doc, int l, std::mt19937_64& rng) {
  const auto& cfg = model.config();
  const auto topo = model.topology(doc);
  const auto masks = build_masks(doc, cfg.radius, topo.field_edges);
  const std::size_t d = static_cast<std::size_t>(cfg.hidden);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto random_rows = [&](std::size_t r) {
    num::Tensor<double> t(r, d);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = nd(rng);
    return t;
  };
  num::Tape<double> tape(false);
  StreamState x;
  x.field = tape.constant(random_rows(1));
  x.html = tape.constant(random_rows(doc.tokens.html_count()));
  x.text = tape.constant(random_rows(doc.tokens.text_count()));
  const Mat XF = to_mat(tape.value(x.field)), XH = to_mat(tape.value(x.html)), XT = to_mat(tape.value(x.text));

  const auto& P = model.params();
  const bool share = cfg.share_qk_by_token_type;
  auto W = [&](const std::string& name) { return to_mat(P.get(name).value); };
  auto proj = [&](const std::string& pattern, char role) { return W(projection_name(l, pattern, role, share)); };
  const std::string pre = "layer" + std::to_string(l) + ".";
  const Mat edge = W(pre + "h2h.edge"), rel = W(pre + "t2t.rel");
  const Mat VH = W(pre + "value.html"), VT = W(pre + "value.text"), VF = W(pre + "value.field");
  const int heads = cfg.heads;

  auto diff = [&](num::Var sparse, const Mat& dense) { return (to_mat(tape.value(sparse)) - dense).cwiseAbs().maxCoeff(); };
  OracleDiff out;
  {
    Mat keys_in = XH, vals_in = XH;
    if (topo.field_edges) {
      keys_in.conservativeResize(XH.rows() + 1, Eigen::NoChange);
      keys_in.row(XH.rows()) = XF.row(0);
      vals_in = keys_in;
    }
    const Mat dense = dense_masked_attention(XH * proj("h2h", 'q'), keys_in * proj("h2h", 'k'), vals_in * VH, masks.h2h, &edge, heads);
    out.h2h = diff(model.h2h_attention(tape, x, topo, l), dense);
  }
  out.h2t = diff(model.h2t_attention(tape, x, topo, l),
                 dense_masked_attention(XH * proj("h2t", 'q'), XT * proj("h2t", 'k'), XT * VT, masks.h2t, nullptr, heads));
  out.t2h = diff(model.t2h_attention(tape, x, l),
                 dense_masked_attention(XT * proj("t2h", 'q'), XH * proj("t2h", 'k'), XH * VH, masks.t2h, nullptr, heads));
  out.t2t = diff(model.t2t_attention(tape, x, topo, l),
                 dense_masked_attention(XT * proj("t2t", 'q'), XT * proj("t2t", 'k'), XT * VT, masks.t2t, &rel, heads));
  out.f2h = diff(model.f2h_attention(tape, x, l),
                 dense_masked_attention(XF * proj("f2h", 'q'), XH * proj("f2h", 'k'), XH * VF, masks.f2h, nullptr, heads));
  return out;
}

/// Random nonzero values for every parameter, so offset tables and biases
/// take part in the comparison.
inline void randomize(num::ParamStore<double>& store, std::mt19937_64& rng, double scale = 0.3) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& p : store.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = nd(rng);
}

// ---- node shuffling ----

inline std::string escape_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

/// Re-serializes a pruned graph with every child list shuffled. `order`
/// receives the original node ids in the new preorder.
inline std::string shuffled_html(const DomGraph& g, std::mt19937_64& rng, std::vector<int>& order) {
  order.clear();
  std::string out;
  auto emit = [&](auto&& self, int id) -> void {
    const auto& n = g.nodes[static_cast<std::size_t>(id)];
    const bool synthetic = n.tag == kSyntheticRootTag;
    order.push_back(id);
    if (!synthetic) out += "<" + n.tag + ">";
    if (n.direct_text) out += escape_text(*n.direct_text);
    std::vector<int> kids = n.children;
    std::shuffle(kids.begin(), kids.end(), rng);
    for (int c : kids) self(self, c);
    if (!synthetic) out += "</" + n.tag + ">";
  };
  emit(emit, g.root_id);
  return out;
}

/// For a re-ingested shuffled document, the original node of each new node,
/// or nullopt when the round trip changed the tree.
inline std::optional<std::vector<int>> node_correspondence(const Document& original, const Document& shuffled,
                                                           const std::vector<int>& order) {
  const auto& a = original.graph.nodes;
  const auto& b = shuffled.graph.nodes;
  if (a.size() != b.size() || order.size() != b.size()) return std::nullopt;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& o = a[static_cast<std::size_t>(order[i])];
    if (o.tag != b[i].tag || o.direct_text != b[i].direct_text) return std::nullopt;
    if (o.parent.has_value() != b[i].parent.has_value()) return std::nullopt;
    if (b[i].parent && order[static_cast<std::size_t>(*b[i].parent)] != *o.parent) return std::nullopt;
  }
  return order;
}

/// Max |Z_T - Z_T'| over corresponding text tokens after shuffling every
/// child list of `doc` and re-ingesting it. nullopt when the shuffled page
/// does not round-trip to an isomorphic tree.
template <typename T>
std::optional<double> permutation_gap(WebFormer<T>& model, const Document& doc, const Vocab& vocab, int field_id,
                                      std::mt19937_64& rng, const IngestCaps& caps = {}) {
  std::vector<int> order;
  const std::string html = shuffled_html(doc.graph, rng, order);
  const Document shuffled = ingest(html, vocab, caps);
  const auto corr = node_correspondence(doc, shuffled, order);
  if (!corr || shuffled.tokens.text_count() != doc.tokens.text_count()) return std::nullopt;
  num::Tape<T> ta(false), tb(false);
  const auto& za = ta.value(model.encode(ta, doc, model.topology(doc), field_id).text);
  const auto& zb = tb.value(model.encode(tb, shuffled, model.topology(shuffled), field_id).text);
  double gap = 0.0;
  for (std::size_t g = 0; g < shuffled.tokens.text_count(); ++g) {
    const auto [node, off] = shuffled.tokens.flat_index[g];
    const int orig = doc.tokens.global_index((*corr)[static_cast<std::size_t>(node)], off);
    for (std::size_t c = 0; c < za.cols(); ++c)
      gap = std::max(gap, std::abs(static_cast<double>(zb.at(g, c)) - static_cast<double>(za.at(static_cast<std::size_t>(orig), c))));
  }
  return gap;
}

}  // namespace webformer::oracle
