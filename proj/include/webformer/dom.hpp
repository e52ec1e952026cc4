#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "webformer/errors.hpp"
#include "webformer/html.hpp"
#include "webformer/text.hpp"

namespace webformer {

/// Pruned DOM: every node except the root lies on a path to a text node.
/// Ids are preorder indices and `text_node_ids` is in preorder.
struct DomGraph {
  std::vector<DomNode> nodes;
  std::vector<int> text_node_ids;
  int root_id = 0;

  bool is_text_node(int id) const { return nodes[static_cast<std::size_t>(id)].direct_text.has_value(); }
};

struct IngestCaps {
  std::size_t max_html_tokens = 256;
  std::size_t max_text_tokens = 2048;
};

/// Token-level view of a DomGraph. Text tokens are numbered globally by
/// walking text nodes in preorder.
struct TokenizedDoc {
  std::vector<int> html_tags;                    // per node
  std::vector<std::vector<int>> text_tokens;     // per node, empty for non-text nodes
  std::vector<std::vector<std::string>> words;   // surface form of text_tokens
  std::vector<int> text_nodes;                   // preorder
  std::vector<int> node_text_begin;              // per node, -1 for non-text nodes
  std::vector<std::pair<int, int>> flat_index;   // global position -> (node, local offset)
  std::size_t raw_text_tokens = 0;               // before truncation

  std::size_t html_count() const { return html_tags.size(); }
  std::size_t text_count() const { return flat_index.size(); }
  int global_index(int node, int offset) const { return node_text_begin[static_cast<std::size_t>(node)] + offset; }
  int node_length(int node) const { return static_cast<int>(text_tokens[static_cast<std::size_t>(node)].size()); }

  /// Words [begin, end] (global, inclusive) joined with single spaces.
  std::string span_text(int begin, int end) const {
    std::vector<std::string> out;
    for (int g = begin; g <= end; ++g) {
      const auto [node, off] = flat_index[static_cast<std::size_t>(g)];
      out.push_back(words[static_cast<std::size_t>(node)][static_cast<std::size_t>(off)]);
    }
    return join_words(out);
  }

  bool operator==(const TokenizedDoc&) const = default;
};

struct Document {
  DomGraph graph;
  TokenizedDoc tokens;
};

/// Answer location in local (node, offset) coordinates; `end` is inclusive.
struct AnswerSpan {
  int node = 0;
  int begin = 0;
  int end = 0;
  bool operator==(const AnswerSpan&) const = default;
};

namespace detail {

// Keeps nodes flagged in `keep`, re-indexing in preorder. Returns old->new.
inline std::vector<int> compact(const std::vector<DomNode>& nodes, const std::vector<bool>& keep,
                                std::vector<DomNode>& out) {
  std::vector<int> remap(nodes.size(), -1);
  out.clear();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!keep[i]) continue;
    remap[i] = static_cast<int>(out.size());
    DomNode n = nodes[i];
    n.id = remap[i];
    n.children.clear();
    if (n.parent) n.parent = remap[static_cast<std::size_t>(*n.parent)];
    out.push_back(std::move(n));
  }
  for (auto& n : out)
    if (n.parent) out[static_cast<std::size_t>(*n.parent)].children.push_back(n.id);
  return remap;
}

inline std::vector<int> prune_to_graph(const std::vector<DomNode>& nodes, std::size_t max_html_tokens,
                                       DomGraph& graph) {
  if (max_html_tokens < 1) throw ConfigError("max_html_tokens must be at least 1");
  const std::size_t n = nodes.size();
  std::vector<bool> keep(n, false);
  // Preorder ids: children always follow their parent, so a reverse sweep is bottom-up.
  for (std::size_t i = n; i-- > 0;) {
    if (nodes[i].direct_text) keep[i] = true;
    if (keep[i] && nodes[i].parent) keep[static_cast<std::size_t>(*nodes[i].parent)] = true;
  }
  if (n) keep[0] = true;
  std::size_t count = 0;
  std::vector<int> live_children(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    ++count;
    if (nodes[i].parent) ++live_children[static_cast<std::size_t>(*nodes[i].parent)];
  }
  std::size_t cursor = n;
  while (count > max_html_tokens && cursor > 1) {
    --cursor;
    if (!keep[cursor] || !nodes[cursor].direct_text) continue;
    // The last retained text node in preorder has no retained descendants.
    std::size_t victim = cursor;
    for (;;) {
      keep[victim] = false;
      --count;
      const auto parent = nodes[victim].parent;
      if (!parent) break;
      const auto p = static_cast<std::size_t>(*parent);
      if (--live_children[p] > 0 || p == 0 || nodes[p].direct_text) break;
      victim = p;
    }
  }
  auto remap = compact(nodes, keep, graph.nodes);
  graph.root_id = 0;
  graph.text_node_ids.clear();
  for (const auto& node : graph.nodes)
    if (node.direct_text) graph.text_node_ids.push_back(node.id);
  return remap;
}

}  // namespace detail

/// Marks text nodes, prunes text-free branches, then drops trailing preorder
/// text nodes (and ancestors left childless) until the node count fits.
inline DomGraph build_dom_graph(const DomTree& tree, std::size_t max_html_tokens) {
  DomGraph graph;
  detail::prune_to_graph(tree.nodes, max_html_tokens, graph);
  return graph;
}

/// Parses, prunes and tokenizes a page. Text tokens are kept per node in
/// preorder until the text cap is exhausted; nodes left without tokens stop
/// being text nodes and are pruned again.
inline Document ingest(std::string_view html, const Vocab& vocab, const IngestCaps& caps = {}) {
  if (caps.max_text_tokens < 1) throw ConfigError("max_text_tokens must be at least 1");
  const DomTree tree = parse_html(html);
  DomGraph graph = build_dom_graph(tree, caps.max_html_tokens);

  std::vector<std::vector<std::string>> words(graph.nodes.size());
  std::size_t raw_total = 0;
  std::size_t budget = caps.max_text_tokens;
  bool dropped = false;
  for (int id : graph.text_node_ids) {
    auto w = split_words(*graph.nodes[static_cast<std::size_t>(id)].direct_text);
    raw_total += w.size();
    if (w.size() > budget) w.resize(budget);
    budget -= w.size();
    if (w.empty()) {
      graph.nodes[static_cast<std::size_t>(id)].direct_text.reset();
      dropped = true;
    }
    words[static_cast<std::size_t>(id)] = std::move(w);
  }
  if (dropped) {
    DomGraph repruned;
    const auto remap = detail::prune_to_graph(graph.nodes, caps.max_html_tokens, repruned);
    std::vector<std::vector<std::string>> moved(repruned.nodes.size());
    for (std::size_t i = 0; i < remap.size(); ++i)
      if (remap[i] >= 0) moved[static_cast<std::size_t>(remap[i])] = std::move(words[i]);
    graph = std::move(repruned);
    words = std::move(moved);
  }

  Document doc;
  auto& t = doc.tokens;
  t.raw_text_tokens = raw_total;
  t.html_tags.reserve(graph.nodes.size());
  for (const auto& node : graph.nodes) t.html_tags.push_back(vocab.tag_id(node.tag));
  t.text_tokens.resize(graph.nodes.size());
  t.node_text_begin.assign(graph.nodes.size(), -1);
  t.text_nodes = graph.text_node_ids;
  for (int id : graph.text_node_ids) {
    const auto u = static_cast<std::size_t>(id);
    t.node_text_begin[u] = static_cast<int>(t.flat_index.size());
    for (std::size_t k = 0; k < words[u].size(); ++k) {
      t.text_tokens[u].push_back(vocab.word_id(words[u][k]));
      t.flat_index.emplace_back(id, static_cast<int>(k));
    }
  }
  t.words = std::move(words);
  doc.graph = std::move(graph);
  return doc;
}

/// First occurrence (text nodes in preorder, then offset) of the answer's
/// token sequence inside a single text node.
inline std::optional<AnswerSpan> locate_answer(const TokenizedDoc& doc, std::string_view answer) {
  const auto needle = split_words(answer);
  if (needle.empty()) throw LabelError("answer tokenizes to nothing");
  for (int node : doc.text_nodes) {
    const auto& hay = doc.words[static_cast<std::size_t>(node)];
    if (hay.size() < needle.size()) continue;
    for (std::size_t off = 0; off + needle.size() <= hay.size(); ++off) {
      if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(off)))
        return AnswerSpan{node, static_cast<int>(off), static_cast<int>(off + needle.size() - 1)};
    }
  }
  return std::nullopt;
}

/// Debug dump of a document (the `ingest-dump` format).
inline nlohmann::json document_to_json(const Document& doc) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& n : doc.graph.nodes) {
    const auto u = static_cast<std::size_t>(n.id);
    json jn = {{"id", n.id},
               {"tag", n.tag},
               {"tag_id", doc.tokens.html_tags[u]},
               {"parent", n.parent ? json(*n.parent) : json(nullptr)},
               {"children", n.children},
               {"is_text", !doc.tokens.text_tokens[u].empty()},
               {"text", n.direct_text ? json(*n.direct_text) : json(nullptr)},
               {"token_ids", doc.tokens.text_tokens[u]},
               {"tokens", doc.tokens.words[u]},
               {"text_begin", doc.tokens.node_text_begin[u]}};
    nodes.push_back(std::move(jn));
  }
  json flat = json::array();
  for (const auto& [node, off] : doc.tokens.flat_index) flat.push_back({node, off});
  return {{"root_id", doc.graph.root_id},
          {"nodes", std::move(nodes)},
          {"text_node_ids", doc.graph.text_node_ids},
          {"flat_index", std::move(flat)},
          {"n_html", doc.tokens.html_count()},
          {"n_text", doc.tokens.text_count()},
          {"raw_text_tokens", doc.tokens.raw_text_tokens}};
}

}  // namespace webformer
