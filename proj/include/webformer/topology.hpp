#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "webformer/dom.hpp"
#include "webformer/numerics/autograd.hpp"

namespace webformer {

enum class EdgeType : int { kSelf = 0, kParent = 1, kChild = 2, kSibling = 3, kField = 4 };
inline constexpr int kEdgeTypeCount = 5;

inline const char* edge_type_name(EdgeType e) {
  switch (e) {
    case EdgeType::kSelf: return "self";
    case EdgeType::kParent: return "parent";
    case EdgeType::kChild: return "child";
    case EdgeType::kSibling: return "sibling";
    case EdgeType::kField: return "field";
  }
  return "?";
}

struct TokenRange {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  int size() const { return end - begin; }
  bool operator==(const TokenRange&) const = default;
};

/// Index structures for the four token-to-token attention patterns.
///
/// Key numbering: HTML keys are node ids; text keys are global text
/// positions; the field token, when present, is key `n_html` in `h2h`
/// (appended after the HTML keys) and key 0 in `t2f`.
struct AttentionTopology {
  std::size_t n_html = 0;
  std::size_t n_text = 0;
  int radius = 0;
  bool field_edges = false;
  bool dense_text = false;  // text tokens attend to every text token (sequence-model reference)

  num::NeighborLists h2h;      // graph neighbors, edge type as bias id
  num::NeighborLists h2f;      // field entry only, key 0 (used when H2H is ablated)
  num::NeighborLists h2t;      // text span of each text node; empty rows otherwise
  num::NeighborLists t2t;      // local window, bias id = (i - j) + radius
  num::NeighborLists t2f;      // field entry only (used when T2H is ablated)
  std::vector<TokenRange> node_token_span;   // per HTML token; empty for non-text nodes
  std::vector<TokenRange> t2t_window;        // per text token, inclusive-exclusive global range

  /// Offset i - j of a T2T entry, in [-radius, radius].
  static int rel_offset(int i, int j) { return i - j; }
  int rel_bucket_id(int i, int j) const { return rel_offset(i, j) + radius; }
  int rel_bucket_count() const { return 2 * radius + 1; }
};

/// H2H lists: each node sees itself, its parent, its children and every
/// other child of its parent. With `field_edges` the field token is appended
/// to every list as key `n_html`.
inline num::NeighborLists build_h2h(const DomGraph& graph, bool field_edges = false) {
  num::NeighborLists nb;
  const int field_key = static_cast<int>(graph.nodes.size());
  for (const auto& node : graph.nodes) {
    nb.push(node.id, static_cast<int>(EdgeType::kSelf));
    if (node.parent) {
      const int p = *node.parent;
      nb.push(p, static_cast<int>(EdgeType::kParent));
      for (int s : graph.nodes[static_cast<std::size_t>(p)].children)
        if (s != node.id) nb.push(s, static_cast<int>(EdgeType::kSibling));
    }
    for (int c : node.children) nb.push(c, static_cast<int>(EdgeType::kChild));
    if (field_edges) nb.push(field_key, static_cast<int>(EdgeType::kField));
    nb.close_row();
  }
  return nb;
}

/// T2T lists: token at local offset o of a node of length n sees local
/// offsets [max(0, o - r), min(n - 1, o + r)].
inline num::NeighborLists build_t2t(const TokenizedDoc& doc, int radius, std::vector<TokenRange>* windows = nullptr) {
  if (radius < 0) throw ConfigError("T2T radius must be non-negative");
  num::NeighborLists nb;
  if (windows) windows->clear();
  for (std::size_t g = 0; g < doc.flat_index.size(); ++g) {
    const auto [node, off] = doc.flat_index[g];
    const int n = doc.node_length(node);
    const int base = doc.node_text_begin[static_cast<std::size_t>(node)];
    const int lo = std::max(0, off - radius);
    const int hi = std::min(n - 1, off + radius);
    const int i = static_cast<int>(g);
    for (int o = lo; o <= hi; ++o) nb.push(base + o, AttentionTopology::rel_offset(i, base + o) + radius);
    nb.close_row();
    if (windows) windows->push_back({base + lo, base + hi + 1});
  }
  return nb;
}

/// H2T lists (text node -> its own tokens, others empty) and the per-node
/// token spans. T2H needs no lists: every text token sees every HTML token.
inline num::NeighborLists build_h2t(const TokenizedDoc& doc, std::vector<TokenRange>* spans = nullptr) {
  num::NeighborLists nb;
  if (spans) spans->assign(doc.html_count(), TokenRange{});
  for (std::size_t node = 0; node < doc.html_count(); ++node) {
    const int begin = doc.node_text_begin[node];
    const int len = static_cast<int>(doc.text_tokens[node].size());
    for (int k = 0; k < len; ++k) nb.push(begin + k);
    nb.close_row();
    if (spans && len > 0) (*spans)[node] = {begin, begin + len};
  }
  return nb;
}

inline num::NeighborLists single_key_lists(std::size_t queries, int key, int bias) {
  num::NeighborLists nb;
  for (std::size_t i = 0; i < queries; ++i) {
    nb.push(key, bias);
    nb.close_row();
  }
  return nb;
}

inline AttentionTopology build_topology(const Document& doc, int radius, bool field_edges) {
  AttentionTopology topo;
  topo.n_html = doc.tokens.html_count();
  topo.n_text = doc.tokens.text_count();
  topo.radius = radius;
  topo.field_edges = field_edges;
  topo.h2h = build_h2h(doc.graph, field_edges);
  topo.h2t = build_h2t(doc.tokens, &topo.node_token_span);
  topo.t2t = build_t2t(doc.tokens, radius, &topo.t2t_window);
  if (field_edges) {
    topo.h2f = single_key_lists(topo.n_html, 0, static_cast<int>(EdgeType::kField));
    topo.t2f = single_key_lists(topo.n_text, 0, -1);
  }
  return topo;
}

/// Same topology with T2T replaced by full text-to-text attention and no
/// relative vectors. Only used as the quadratic reference in benchmarks.
inline AttentionTopology dense_text_topology(AttentionTopology topo) {
  topo.dense_text = true;
  topo.t2t = num::NeighborLists{};
  for (std::size_t i = 0; i < topo.n_text; ++i) topo.t2t_window[i] = {0, static_cast<int>(topo.n_text)};
  return topo;
}

/// Structural invariants of a topology against its document. Returns one
/// message per violation; empty means the topology is sound.
inline std::vector<std::string> topology_violations(const Document& doc, const AttentionTopology& topo) {
  std::vector<std::string> bad;
  auto fail = [&](const std::string& m) { bad.push_back(m); };
  const auto& g = doc.graph;
  const int n_html = static_cast<int>(topo.n_html);
  if (topo.n_html != g.nodes.size() || topo.n_text != doc.tokens.text_count()) fail("token counts disagree with the document");
  if (topo.h2h.queries() != topo.n_html) {
    fail("h2h has the wrong number of rows");
    return bad;
  }
  auto has = [&](int i, int key, EdgeType e) {
    for (int s = topo.h2h.offsets[static_cast<std::size_t>(i)]; s < topo.h2h.offsets[static_cast<std::size_t>(i) + 1]; ++s)
      if (topo.h2h.index[static_cast<std::size_t>(s)] == key && topo.h2h.bias_id[static_cast<std::size_t>(s)] == static_cast<int>(e))
        return true;
    return false;
  };
  for (int i = 0; i < n_html; ++i) {
    const auto& node = g.nodes[static_cast<std::size_t>(i)];
    int selfs = 0, fields = 0;
    for (int s = topo.h2h.offsets[static_cast<std::size_t>(i)]; s < topo.h2h.offsets[static_cast<std::size_t>(i) + 1]; ++s) {
      const int j = topo.h2h.index[static_cast<std::size_t>(s)];
      const auto e = static_cast<EdgeType>(topo.h2h.bias_id[static_cast<std::size_t>(s)]);
      const std::string at = "h2h[" + std::to_string(i) + "] -> " + std::to_string(j) + ": ";
      switch (e) {
        case EdgeType::kSelf:
          ++selfs;
          if (j != i) fail(at + "SELF edge to another node");
          break;
        case EdgeType::kChild:
          if (!has(j, i, EdgeType::kParent)) fail(at + "CHILD without reciprocal PARENT");
          break;
        case EdgeType::kParent:
          if (!has(j, i, EdgeType::kChild)) fail(at + "PARENT without reciprocal CHILD");
          if (!node.parent || *node.parent != j) fail(at + "PARENT is not the DOM parent");
          break;
        case EdgeType::kSibling:
          if (!has(j, i, EdgeType::kSibling)) fail(at + "SIBLING not symmetric");
          if (j == i || !node.parent || g.nodes[static_cast<std::size_t>(j)].parent != node.parent)
            fail(at + "SIBLING does not share the parent");
          break;
        case EdgeType::kField:
          ++fields;
          if (!topo.field_edges || j != n_html) fail(at + "unexpected FIELD edge");
          break;
        default:
          fail(at + "unknown edge type");
      }
    }
    if (selfs != 1) fail("h2h[" + std::to_string(i) + "] has " + std::to_string(selfs) + " SELF edges");
    if (fields != (topo.field_edges ? 1 : 0)) fail("h2h[" + std::to_string(i) + "] has " + std::to_string(fields) + " FIELD edges");
    for (int c : node.children)
      if (!has(i, c, EdgeType::kChild)) fail("h2h[" + std::to_string(i) + "] misses child " + std::to_string(c));
  }

  // Node spans partition [0, n_text) in preorder.
  int next = 0;
  for (int i = 0; i < n_html; ++i) {
    const auto& r = topo.node_token_span[static_cast<std::size_t>(i)];
    if (r.size() == 0) continue;
    if (r.begin != next) fail("node span of " + std::to_string(i) + " does not continue the partition");
    next = r.end;
  }
  if (next != static_cast<int>(topo.n_text)) fail("node spans do not cover every text token");

  if (topo.t2t.queries() != topo.n_text) {
    fail("t2t has the wrong number of rows");
    return bad;
  }
  std::set<int> offsets_seen;
  for (std::size_t i = 0; i < topo.n_text; ++i) {
    const int node = doc.tokens.flat_index[i].first;
    const auto& span = topo.node_token_span[static_cast<std::size_t>(node)];
    const auto& w = topo.t2t_window[i];
    if (w.begin < span.begin || w.end > span.end) fail("t2t window of " + std::to_string(i) + " leaves its node");
    const auto row = topo.t2t.row(i);
    if (static_cast<int>(row.size()) != w.size()) fail("t2t row of " + std::to_string(i) + " disagrees with its window");
    for (int s = topo.t2t.offsets[i]; s < topo.t2t.offsets[i + 1]; ++s) {
      const int j = topo.t2t.index[static_cast<std::size_t>(s)];
      const int b = topo.t2t.bias_id[static_cast<std::size_t>(s)];
      const int gi = static_cast<int>(i);
      if (j < w.begin || j >= w.end) fail("t2t key outside window");
      if (std::abs(gi - j) > topo.radius) fail("t2t key farther than the radius");
      if (b != topo.rel_bucket_id(gi, j) || b < 0 || b >= topo.rel_bucket_count()) {
        fail("t2t relative bucket out of range");
        continue;
      }
      offsets_seen.insert(gi - j);
    }
  }
  if (offsets_seen.size() > static_cast<std::size_t>(topo.rel_bucket_count())) fail("more than 2r+1 relative offsets realized");
  for (std::size_t i = 0; i < topo.n_html; ++i) {
    const auto& r = topo.node_token_span[i];
    if (static_cast<int>(topo.h2t.row(i).size()) != r.size()) fail("h2t row of " + std::to_string(i) + " is not its token span");
  }
  return bad;
}

inline nlohmann::json topology_to_json(const AttentionTopology& topo) {
  using nlohmann::json;
  json h2h = json::array();
  for (std::size_t i = 0; i < topo.h2h.queries(); ++i) {
    json row = json::array();
    for (int s = topo.h2h.offsets[i]; s < topo.h2h.offsets[i + 1]; ++s)
      row.push_back({{"key", topo.h2h.index[static_cast<std::size_t>(s)]},
                     {"edge", edge_type_name(static_cast<EdgeType>(topo.h2h.bias_id[static_cast<std::size_t>(s)]))}});
    h2h.push_back(std::move(row));
  }
  json spans = json::array();
  for (const auto& r : topo.node_token_span) spans.push_back({r.begin, r.end});
  json windows = json::array();
  for (const auto& r : topo.t2t_window) windows.push_back({r.begin, r.end});
  return {{"n_html", topo.n_html}, {"n_text", topo.n_text}, {"radius", topo.radius},
          {"field_edges", topo.field_edges}, {"h2h", std::move(h2h)},
          {"node_token_span", std::move(spans)}, {"t2t_window", std::move(windows)}};
}

}  // namespace webformer
