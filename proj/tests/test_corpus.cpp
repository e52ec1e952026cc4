#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "webformer/corpus.hpp"

using namespace webformer;

namespace {

std::string tmp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

std::vector<std::string> skeleton(const std::string& html) {
  std::vector<std::string> tags;
  for (const auto& n : parse_html(html).nodes) tags.push_back(n.tag + (n.parent ? std::to_string(*n.parent) : ""));
  return tags;
}

}  // namespace

TEST(Schemas, FieldNamesAreUniqueAndTwelveOverall) {
  std::set<std::string> all;
  for (const auto& s : builtin_schemas()) {
    const auto names = s.field_names();
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size()) << s.domain;
    all.insert(names.begin(), names.end());
  }
  EXPECT_EQ(all.size(), 12u);
  EXPECT_EQ(schema_for("events").field_names(), (std::vector<std::string>{"name", "description", "date", "location"}));
  EXPECT_THROW(schema_for("jobs"), ConfigError);
}

TEST(GenPage, EventsPageHasOneValuePerField) {
  const auto page = gen_page(schema_for("events"), 7, 1.0);
  EXPECT_EQ(page.domain, "events");
  ASSERT_EQ(page.labels.size(), 4u);
  const DomTree tree = parse_html(page.html);
  for (const auto& l : page.labels) EXPECT_EQ(detail::count_occurrences(tree, split_words(l.value)), 1) << l.field;
}

TEST(GenPage, ZeroNoiseIsAFixedTemplate) {
  const auto& s = schema_for("products");
  EXPECT_EQ(gen_page(s, 3, 0.0), gen_page(s, 3, 0.0));
  EXPECT_EQ(skeleton(gen_page(s, 3, 0.0).html), skeleton(gen_page(s, 99, 0.0).html));
}

TEST(GenPage, SameSeedSamePage) {
  for (const auto& s : builtin_schemas()) EXPECT_EQ(gen_page(s, 42, 1.0), gen_page(s, 42, 1.0));
}

TEST(GenPage, NoiseVariesStructureAndDepth) {
  std::set<std::vector<std::string>> shapes;
  int min_depth = 100, max_depth = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto page = gen_page(schema_for("movies"), seed, 1.0);
    const Document d = ingest(page.html, Vocab{});
    shapes.insert(skeleton(page.html));
    for (int id : d.graph.text_node_ids) {
      // Element ancestors; the synthetic document root does not count.
      int depth = -1;
      for (auto p = d.graph.nodes[static_cast<std::size_t>(id)].parent; p; p = d.graph.nodes[static_cast<std::size_t>(*p)].parent) ++depth;
      min_depth = std::min(min_depth, depth);
      max_depth = std::max(max_depth, depth);
    }
  }
  EXPECT_GT(shapes.size(), 150u);
  EXPECT_GE(min_depth, 2);
  EXPECT_LE(max_depth, 8);
  EXPECT_GE(max_depth, 6);
}

TEST(GenPage, EventDateAndLocationAreSiblings) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto page = gen_page(schema_for("events"), seed, 1.0);
    const Document d = ingest(page.html, Vocab{});
    std::optional<int> parents[2];
    for (int k = 0; k < 2; ++k) {
      const auto a = locate_answer(d.tokens, page.labels[2 + static_cast<std::size_t>(k)].value);
      ASSERT_TRUE(a);
      parents[k] = d.graph.nodes[static_cast<std::size_t>(a->node)].parent;
    }
    EXPECT_EQ(parents[0], parents[1]) << page.html;
  }
}

TEST(GenPage, ThousandPagesAlignToTheirLabels) {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto page = gen_page(builtin_schemas()[seed % 3], seed * 31 + 5, 1.0);
    const Document d = ingest(page.html, Vocab{});
    for (const auto& l : page.labels) {
      const auto a = locate_answer(d.tokens, l.value);
      ASSERT_TRUE(a) << l.field << " / " << l.value;
      const int b = d.tokens.global_index(a->node, a->begin), e = d.tokens.global_index(a->node, a->end);
      EXPECT_EQ(em_f1(d.tokens.span_text(b, e), l.value).em, 1.0);
      ++checked;
    }
  }
  EXPECT_GT(checked, 5000u);
}

TEST(GenPage, DistractorCountIsBounded) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto& s = builtin_schemas()[seed % 3];
    const auto page = gen_page(s, seed, 1.0);
    const Document d = ingest(page.html, Vocab{});
    // field values plus at most one cue node each, plus at most 20 distractors
    EXPECT_LE(d.graph.text_node_ids.size(), 2 * s.fields.size() + 20);
  }
}

TEST(GenPage, RejectsNoiseOutOfRange) { EXPECT_THROW(gen_page(schema_for("events"), 1, 1.5), ConfigError); }

TEST(Dataset, RoundTrip) {
  std::vector<LabeledPage> pages;
  for (std::uint64_t i = 0; i < 100; ++i) pages.push_back(gen_page(builtin_schemas()[i % 3], i, 1.0));
  pages[0].html += "caf\xC3\xA9 \"quoted\"\n\ttab";
  const auto path = tmp_path("wf_ds_roundtrip.jsonl");
  write_dataset(path, pages);
  EXPECT_EQ(read_dataset(path), pages);
  std::ifstream in(path, std::ios::binary);
  const std::string first((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  write_dataset(path, read_dataset(path));
  std::ifstream in2(path, std::ios::binary);
  const std::string second((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(first, second);
  std::remove(path.c_str());
}

TEST(Dataset, TruncatedLastLineReportsItsNumber) {
  const auto path = tmp_path("wf_ds_trunc.jsonl");
  std::vector<LabeledPage> pages;
  for (std::uint64_t i = 0; i < 3; ++i) pages.push_back(gen_page(schema_for("events"), i, 1.0));
  write_dataset(path, pages);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 20);
  try {
    read_dataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::remove(path.c_str());
}

TEST(Dataset, EmptyFileIsEmptyStream) {
  const auto path = tmp_path("wf_ds_empty.jsonl");
  std::ofstream(path).close();
  EXPECT_TRUE(read_dataset(path).empty());
  std::remove(path.c_str());
  EXPECT_THROW(read_dataset(path), IOError);
}

TEST(Corpus, SplitsAreEightOneOneAndSeeded) {
  const auto a = generate_corpus({"events", "products", "movies"}, 20, 5);
  EXPECT_EQ(a.train.size(), 48u);
  EXPECT_EQ(a.dev.size(), 6u);
  EXPECT_EQ(a.test.size(), 6u);
  const auto b = generate_corpus({"events", "products", "movies"}, 20, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  const auto c = generate_corpus({"events", "products", "movies"}, 20, 6);
  EXPECT_NE(a.train, c.train);
  EXPECT_THROW(generate_corpus({"events"}, 0, 1), ConfigError);
}

TEST(BuildVocab, FrequencyThresholdAndFields) {
  std::vector<LabeledPage> pages;
  for (int i = 0; i < 50; ++i) pages.push_back({"<p>price tag " + std::to_string(i) + "</p>", "products", {}});
  pages.push_back({"<p>hapax</p>", "events", {}});
  pages.push_back({"<p>x</p>", "movies", {}});
  const Vocab v = build_vocab(pages, 2);
  EXPECT_TRUE(v.has_word("price"));
  EXPECT_FALSE(v.has_word("hapax"));
  EXPECT_EQ(tokenize_text("hapax", v), (std::vector<int>{Vocab::kUnk}));
  EXPECT_EQ(v.field_count(), 12u);
  EXPECT_NE(v.tag_id("p"), Vocab::kUnkTag);
  EXPECT_THROW(build_vocab({}, 2), EmptyDataset);
}

TEST(EmF1, Examples) {
  auto s = em_f1("Dec 13", "Dec 13");
  EXPECT_EQ(s.em, 1.0);
  EXPECT_DOUBLE_EQ(s.f1, 1.0);
  s = em_f1("Fun Festival", "Fun Festival at Square Park");
  EXPECT_EQ(s.em, 0.0);
  EXPECT_NEAR(s.f1, 4.0 / 7.0, 1e-12);
  s = em_f1("", "x");
  EXPECT_EQ(s.em, 0.0);
  EXPECT_EQ(s.f1, 0.0);
  EXPECT_THROW(em_f1("x", ""), InvalidGold);
  EXPECT_THROW(em_f1("x", "   "), InvalidGold);
}

TEST(EmF1, MultisetOverlap) {
  EXPECT_NEAR(em_f1("a a b", "a b b").f1, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(em_f1("b a", "a b").em, 0.0);
  EXPECT_DOUBLE_EQ(em_f1("b a", "a b").f1, 1.0);
  EXPECT_EQ(em_f1("DEC  13", "dec 13").em, 1.0);
}

TEST(EmF1, PropertiesOnRandomPairs) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> lex = {"a", "b", "c", "d", "e"};
  auto draw = [&](int min_len) {
    std::string s;
    const int n = min_len + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) s += lex[rng() % lex.size()] + " ";
    return s;
  };
  for (int t = 0; t < 2000; ++t) {
    const std::string p = draw(1), g = draw(1);
    const auto s = em_f1(p, g);
    EXPECT_LE(0.0, s.em);
    EXPECT_LE(s.em, s.f1);
    EXPECT_LE(s.f1, 1.0);
    EXPECT_DOUBLE_EQ(s.f1, em_f1(g, p).f1);
  }
}

TEST(Metrics, BucketsAndBreakdowns) {
  EXPECT_EQ(length_bucket(0), 0u);
  EXPECT_EQ(length_bucket(511), 0u);
  EXPECT_EQ(length_bucket(512), 1u);
  EXPECT_EQ(length_bucket(600), 1u);
  EXPECT_EQ(length_bucket(1024), 2u);
  EXPECT_EQ(length_bucket(5000), 3u);
  Metrics m;
  m.add("date", 100, em_f1("dec 13", "dec 13"));
  m.add("name", 600, em_f1("fun festival", "fun festival at square park"));
  EXPECT_DOUBLE_EQ(m.exact_match(), 0.5);
  EXPECT_NEAR(m.f1(), (1.0 + 4.0 / 7.0) / 2.0, 1e-12);
  EXPECT_EQ(m.per_bucket[1].count, 1u);
  EXPECT_EQ(m.per_field.at("date").mean_em(), 1.0);
  const auto j = m.to_json();
  EXPECT_EQ(j["per_bucket"].size(), 4u);
  EXPECT_TRUE(j["per_bucket"].contains("512-1024"));
  const std::string csv = m.to_csv();
  EXPECT_NE(csv.find("bucket,2048-inf"), std::string::npos);
  EXPECT_NE(csv.find("field,name"), std::string::npos);
}
