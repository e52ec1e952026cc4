#include <gtest/gtest.h>

#include "webformer/html.hpp"

using namespace webformer;

namespace {

const DomNode* find_tag(const DomTree& t, const std::string& tag, int nth = 0) {
  for (const auto& n : t.nodes)
    if (n.tag == tag && nth-- == 0) return &n;
  return nullptr;
}

void expect_consistent(const DomTree& t) {
  for (const auto& n : t.nodes) {
    EXPECT_EQ(&t.nodes[static_cast<std::size_t>(n.id)], &n);
    for (int c : n.children) {
      ASSERT_TRUE(t.nodes[static_cast<std::size_t>(c)].parent.has_value());
      EXPECT_EQ(*t.nodes[static_cast<std::size_t>(c)].parent, n.id);
      EXPECT_GT(c, n.id);  // preorder
    }
    if (n.direct_text) {
      EXPECT_FALSE(n.direct_text->empty());
    }
  }
  EXPECT_FALSE(t.nodes.front().parent.has_value());
}

}  // namespace

TEST(ParseHtml, MinimalPage) {
  const DomTree t = parse_html("<html><body><p>Hi</p></body></html>");
  expect_consistent(t);
  EXPECT_EQ(t.nodes.front().tag, "html");
  const DomNode* p = find_tag(t, "p");
  ASSERT_NE(p, nullptr);
  ASSERT_TRUE(p->direct_text);
  EXPECT_EQ(*p->direct_text, "Hi");
}

TEST(ParseHtml, UnclosedParagraphsBecomeSiblingsUnderSyntheticRoot) {
  const DomTree t = parse_html("<p>a<p>b");
  expect_consistent(t);
  ASSERT_EQ(t.nodes.size(), 3u);
  EXPECT_EQ(t.nodes[0].tag, kSyntheticRootTag);
  EXPECT_EQ(t.nodes[0].children, (std::vector<int>{1, 2}));
  EXPECT_EQ(*t.nodes[1].direct_text, "a");
  EXPECT_EQ(*t.nodes[2].direct_text, "b");
}

TEST(ParseHtml, ScriptOnlyIsEmpty) {
  EXPECT_THROW(parse_html("<script>var x;</script>"), EmptyDocument);
  EXPECT_THROW(parse_html(""), EmptyDocument);
  EXPECT_THROW(parse_html("<!-- just a comment -->"), EmptyDocument);
}

TEST(ParseHtml, StripsInvisibleContent) {
  const DomTree t = parse_html(
      "<html><head><title>T</title><meta charset=utf-8><style>p{}</style></head>"
      "<body><!-- hidden --><script>if (a<b) x();</script><noscript>no</noscript><template><p>t</p></template>"
      "<p>shown</p></body></html>");
  expect_consistent(t);
  for (const auto& n : t.nodes) {
    EXPECT_NE(n.tag, "head");
    EXPECT_NE(n.tag, "script");
    EXPECT_NE(n.tag, "style");
    EXPECT_NE(n.tag, "template");
    if (n.direct_text) {
      EXPECT_EQ(*n.direct_text, "shown");
    }
  }
}

TEST(ParseHtml, DecodesEntities) {
  const DomTree t = parse_html("<p>Tom &amp; Jerry &lt;3 &#65;&#x42; caf&eacute;&nbsp;x</p>");
  EXPECT_EQ(*find_tag(t, "p")->direct_text, "Tom & Jerry <3 AB caf\xC3\xA9 x");
  EXPECT_EQ(decode_entities("&bogus; &amp"), "&bogus; &amp");
}

TEST(ParseHtml, MixedContentKeepsOwnText) {
  const DomTree t = parse_html("<div>Price: <b>$5</b> today</div>");
  const DomNode* div = find_tag(t, "div");
  ASSERT_TRUE(div->direct_text);
  EXPECT_EQ(*div->direct_text, "Price: today");
  EXPECT_EQ(*find_tag(t, "b")->direct_text, "$5");
}

TEST(ParseHtml, TagsAreLowercasedAndVoidElementsHaveNoChildren) {
  const DomTree t = parse_html("<DIV><IMG src=x.png><Br/>text</DIV>");
  expect_consistent(t);
  const DomNode* img = find_tag(t, "img");
  ASSERT_NE(img, nullptr);
  EXPECT_TRUE(img->children.empty());
  EXPECT_EQ(*find_tag(t, "div")->direct_text, "text");
}

TEST(ParseHtml, StrayEndTagsAreIgnored) {
  const DomTree t = parse_html("<div></span><p>x</p></div></div></body>");
  expect_consistent(t);
  EXPECT_EQ(*find_tag(t, "p")->direct_text, "x");
}

TEST(ParseHtml, ListItemsCloseEachOther) {
  const DomTree t = parse_html("<ul><li>a<li>b</ul>");
  expect_consistent(t);
  const DomNode* ul = find_tag(t, "ul");
  EXPECT_EQ(ul->children.size(), 2u);
}

TEST(ParseHtml, AttributesWithAngleBrackets) {
  const DomTree t = parse_html("<p title=\"a > b\" data-x='1'>ok</p>");
  EXPECT_EQ(*find_tag(t, "p")->direct_text, "ok");
}

TEST(ParseHtml, Deterministic) {
  const std::string html = "<html><body><div><h1>A</h1><p>b c</p></div><div></div></body></html>";
  const DomTree a = parse_html(html), b = parse_html(html);
  ASSERT_EQ(a.nodes.size(), b.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    EXPECT_EQ(a.nodes[i].tag, b.nodes[i].tag);
    EXPECT_EQ(a.nodes[i].children, b.nodes[i].children);
    EXPECT_EQ(a.nodes[i].direct_text, b.nodes[i].direct_text);
  }
}
