#include <gtest/gtest.h>

#include <map>
#include <set>

#include "webformer/corpus.hpp"
#include "webformer/topology.hpp"

using namespace webformer;

namespace {

const char* kNestedPage =
    "<html><body><h1>Spark Social SF Events</h1>"
    "<div><img src=logo.png><div><p>Fun Family Fest</p><p>Spark Social SF</p></div>"
    "<h3>Dec 13</h3></div><p>This is a great event for everyone</p></body></html>";

// node ids after pruning: html 0, body 1, h1 2, div 3, div 4, p 5, p 6, h3 7, p 8

std::map<int, EdgeType> row_of(const AttentionTopology& t, int i) {
  std::map<int, EdgeType> out;
  for (int s = t.h2h.offsets[static_cast<std::size_t>(i)]; s < t.h2h.offsets[static_cast<std::size_t>(i) + 1]; ++s)
    out[t.h2h.index[static_cast<std::size_t>(s)]] = static_cast<EdgeType>(t.h2h.bias_id[static_cast<std::size_t>(s)]);
  return out;
}

std::vector<int> keys(const num::NeighborLists& nb, std::size_t i) {
  auto r = nb.row(i);
  return {r.begin(), r.end()};
}

}  // namespace

TEST(H2H, NestedPageOuterDiv) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = build_topology(d, 1, false);
  const std::map<int, EdgeType> want = {{3, EdgeType::kSelf},    {1, EdgeType::kParent}, {4, EdgeType::kChild},
                                        {7, EdgeType::kChild},   {2, EdgeType::kSibling}, {8, EdgeType::kSibling}};
  EXPECT_EQ(row_of(t, 3), want);
}

TEST(H2H, RootHasSelfAndChildrenOnly) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = build_topology(d, 1, false);
  const std::map<int, EdgeType> want = {{0, EdgeType::kSelf}, {1, EdgeType::kChild}};
  EXPECT_EQ(row_of(t, 0), want);
}

TEST(H2H, SingleNodeGraphIsSelfOnly) {
  DomGraph g;
  DomNode n;
  n.id = 0;
  n.tag = "p";
  n.direct_text = "x";
  g.nodes.push_back(n);
  g.text_node_ids = {0};
  const auto nb = build_h2h(g);
  ASSERT_EQ(nb.queries(), 1u);
  EXPECT_EQ(keys(nb, 0), std::vector<int>{0});
  EXPECT_EQ(nb.bias_id[0], static_cast<int>(EdgeType::kSelf));
}

TEST(H2H, FieldEdgesAppendTheFieldKey) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto off = build_topology(d, 1, false);
  const auto on = build_topology(d, 1, true);
  for (std::size_t i = 0; i < on.n_html; ++i) {
    auto r = row_of(on, static_cast<int>(i));
    ASSERT_TRUE(r.count(static_cast<int>(on.n_html)));
    EXPECT_EQ(r.at(static_cast<int>(on.n_html)), EdgeType::kField);
    r.erase(static_cast<int>(on.n_html));
    EXPECT_EQ(r, row_of(off, static_cast<int>(i)));
  }
  for (int b : off.h2h.bias_id) EXPECT_NE(b, static_cast<int>(EdgeType::kField));
  EXPECT_EQ(off.h2f.queries(), 0u);
  EXPECT_EQ(on.h2f.queries(), on.n_html);
  EXPECT_EQ(on.t2f.queries(), on.n_text);
}

TEST(T2T, RadiusOneAroundIs) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = build_topology(d, 1, false);
  // text: h1 0-3, p 4-6, p 7-9, h3 10-11, p 12-18 ("this is a ...")
  ASSERT_EQ(d.tokens.span_text(13, 13), "is");
  EXPECT_EQ(keys(t.t2t, 13), (std::vector<int>{12, 13, 14}));
  EXPECT_EQ(t.t2t_window[13], (TokenRange{12, 15}));
  // First token of a node: the window is clipped at the node edge.
  EXPECT_EQ(keys(t.t2t, 12), (std::vector<int>{12, 13}));
  EXPECT_EQ(keys(t.t2t, 11), (std::vector<int>{10, 11}));
}

TEST(T2T, RelativeBucketsAreOffsetsPlusRadius) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = build_topology(d, 2, false);
  const auto r = keys(t.t2t, 14);
  for (std::size_t k = 0; k < r.size(); ++k) {
    const int s = t.t2t.offsets[14] + static_cast<int>(k);
    EXPECT_EQ(t.t2t.bias_id[static_cast<std::size_t>(s)], 14 - r[k] + 2);
  }
}

TEST(T2T, RadiusZeroIsSelf) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = build_topology(d, 0, false);
  for (std::size_t i = 0; i < t.n_text; ++i) EXPECT_EQ(keys(t.t2t, i), std::vector<int>{static_cast<int>(i)});
}

TEST(T2T, SingleTokenNodeIsSelfForAnyRadius) {
  const Document d = ingest("<div><p>a</p><p>b c d</p><p>e</p></div>", Vocab{});
  for (int r : {1, 5, 64}) {
    const auto t = build_topology(d, r, false);
    EXPECT_EQ(keys(t.t2t, 0), std::vector<int>{0});
    EXPECT_EQ(keys(t.t2t, 4), std::vector<int>{4});
  }
}

TEST(T2T, NegativeRadiusRejected) {
  const Document d = ingest(kNestedPage, Vocab{});
  EXPECT_THROW(build_topology(d, -1, false), ConfigError);
}

TEST(H2T, OwnTokensOnly) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = build_topology(d, 1, false);
  EXPECT_EQ(keys(t.h2t, 6), (std::vector<int>{7, 8, 9}));  // "spark social sf"
  EXPECT_TRUE(keys(t.h2t, 3).empty());                       // outer div
  EXPECT_EQ(t.node_token_span[6], (TokenRange{7, 10}));
  EXPECT_EQ(t.node_token_span[3], (TokenRange{}));
}

TEST(Topology, DenseTextVariantCoversEveryToken) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto t = dense_text_topology(build_topology(d, 1, true));
  EXPECT_TRUE(t.dense_text);
  for (const auto& w : t.t2t_window) EXPECT_EQ(w, (TokenRange{0, static_cast<int>(t.n_text)}));
}

TEST(Topology, Deterministic) {
  const auto page = gen_page(schema_for("products"), 5);
  const Document d = ingest(page.html, Vocab{});
  EXPECT_EQ(topology_to_json(build_topology(d, 3, true)), topology_to_json(build_topology(d, 3, true)));
}

TEST(Topology, InvariantsHoldOnRandomPages) {
  std::size_t pages = 0;
  for (const auto& schema : builtin_schemas())
    for (std::uint64_t seed = 0; seed < 70; ++seed) {
      const auto page = gen_page(schema, seed);
      const Document d = ingest(page.html, Vocab{});
      for (int r : {0, 2, 8}) {
        const auto v = topology_violations(d, build_topology(d, r, seed % 2 == 0));
        EXPECT_TRUE(v.empty()) << schema.domain << " seed " << seed << ": " << v.front();
      }
      ++pages;
    }
  EXPECT_EQ(pages, 210u);
}

TEST(Topology, CheckerCatchesBrokenTopologies) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto good = build_topology(d, 2, true);
  ASSERT_TRUE(topology_violations(d, good).empty());

  auto asym = good;  // turn one SIBLING edge into a CHILD edge
  for (std::size_t s = 0; s < asym.h2h.nnz(); ++s)
    if (asym.h2h.bias_id[s] == static_cast<int>(EdgeType::kSibling)) {
      asym.h2h.bias_id[s] = static_cast<int>(EdgeType::kChild);
      break;
    }
  EXPECT_FALSE(topology_violations(d, asym).empty());

  auto wide = good;  // widen a window past its node
  wide.t2t_window[12].begin = 11;
  EXPECT_FALSE(topology_violations(d, wide).empty());

  auto gap = good;  // break the span partition
  gap.node_token_span[8].begin += 1;
  EXPECT_FALSE(topology_violations(d, gap).empty());
}

TEST(Topology, JsonDumpHasEdgeNames) {
  const Document d = ingest(kNestedPage, Vocab{});
  const auto j = topology_to_json(build_topology(d, 1, false));
  EXPECT_EQ(j["n_html"], 9);
  EXPECT_EQ(j["n_text"], 19);
  EXPECT_EQ(j["h2h"][0][0]["edge"], "self");
}
