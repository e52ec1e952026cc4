#pragma once

// Tolerant HTML front end: tokenizes markup, builds an element tree with the
// common HTML5 implied-end-tag rules, and strips non-visible content.

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "webformer/errors.hpp"
#include "webformer/text.hpp"

namespace webformer {

struct DomNode {
  int id = 0;
  std::string tag;
  std::optional<int> parent;
  std::vector<int> children;
  std::optional<std::string> direct_text;  // set only when non-empty after normalization
};

/// Element tree in preorder: nodes[0] is the root and every parent id is
/// smaller than its children's ids.
struct DomTree {
  std::vector<DomNode> nodes;
};

inline constexpr const char* kSyntheticRootTag = "#root";

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline const std::unordered_map<std::string_view, char32_t>& named_entities() {
  static const std::unordered_map<std::string_view, char32_t> table = {
      {"amp", '&'},      {"lt", '<'},        {"gt", '>'},       {"quot", '"'},
      {"apos", '\''},    {"nbsp", 0xA0},     {"copy", 0xA9},    {"reg", 0xAE},
      {"trade", 0x2122}, {"euro", 0x20AC},   {"pound", 0xA3},   {"yen", 0xA5},
      {"cent", 0xA2},    {"sect", 0xA7},     {"deg", 0xB0},     {"middot", 0xB7},
      {"bull", 0x2022},  {"hellip", 0x2026}, {"ndash", 0x2013}, {"mdash", 0x2014},
      {"lsquo", 0x2018}, {"rsquo", 0x2019},  {"ldquo", 0x201C}, {"rdquo", 0x201D},
      {"laquo", 0xAB},   {"raquo", 0xBB},    {"times", 0xD7},   {"divide", 0xF7},
      {"eacute", 0xE9},  {"egrave", 0xE8},   {"aacute", 0xE1},  {"agrave", 0xE0},
      {"ouml", 0xF6},    {"uuml", 0xFC},     {"auml", 0xE4},    {"ccedil", 0xE7},
      {"ntilde", 0xF1},  {"szlig", 0xDF},    {"frac12", 0xBD},  {"plusmn", 0xB1},
  };
  return table;
}

}  // namespace detail

/// Replaces named (`&amp;`) and numeric (`&#39;`, `&#x27;`) character
/// references. Unknown or unterminated references are left verbatim.
inline std::string decode_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] != '&') {
      out.push_back(s[i++]);
      continue;
    }
    const std::size_t semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out.push_back(s[i++]);
      continue;
    }
    const std::string_view body = s.substr(i + 1, semi - i - 1);
    bool ok = false;
    if (!body.empty() && body[0] == '#') {
      char32_t cp = 0;
      const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
      const std::string_view digits = body.substr(hex ? 2 : 1);
      ok = !digits.empty();
      for (char c : digits) {
        const int v = hex ? (std::isxdigit(static_cast<unsigned char>(c))
                                 ? (std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : (std::tolower(c) - 'a' + 10))
                                 : -1)
                          : (std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : -1);
        if (v < 0 || cp > 0x10FFFF) {
          ok = false;
          break;
        }
        cp = cp * (hex ? 16 : 10) + static_cast<char32_t>(v);
      }
      if (ok) detail::append_utf8(out, cp);
    } else {
      const auto& table = detail::named_entities();
      auto it = table.find(body);
      if (it != table.end()) {
        detail::append_utf8(out, it->second);
        ok = true;
      }
    }
    if (ok) {
      i = semi + 1;
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

namespace detail {

inline bool is_void_element(std::string_view tag) {
  static const std::unordered_set<std::string_view> kVoid = {
      "area", "base", "br", "col", "embed", "hr", "img", "input",
      "link", "meta", "param", "source", "track", "wbr", "keygen"};
  return kVoid.count(tag) != 0;
}

// Content of these elements is never visible text and is discarded whole.
inline bool is_skipped_raw_element(std::string_view tag) {
  return tag == "script" || tag == "style" || tag == "template" || tag == "noscript" ||
         tag == "title" || tag == "iframe" || tag == "xmp";
}

// Elements removed with their subtree after tree construction.
inline bool is_metadata_element(std::string_view tag) {
  return tag == "head" || tag == "meta" || tag == "link" || tag == "base";
}

// Start tags that implicitly close an open <p>.
inline bool closes_paragraph(std::string_view tag) {
  static const std::unordered_set<std::string_view> kClosers = {
      "address", "article", "aside", "blockquote", "center", "details", "dialog",
      "dir", "div", "dl", "fieldset", "figcaption", "figure", "footer", "form",
      "h1", "h2", "h3", "h4", "h5", "h6", "header", "hgroup", "hr", "li", "main",
      "menu", "nav", "ol", "p", "pre", "section", "summary", "table", "ul", "dd", "dt"};
  return kClosers.count(tag) != 0;
}

// Elements that bound the search for an implicitly closed element.
inline bool is_scope_boundary(std::string_view tag) {
  return tag == "html" || tag == "body" || tag == "table" || tag == "td" || tag == "th" ||
         tag == "button" || tag == "caption" || tag == "object" || tag == "marquee" ||
         tag == "applet" || tag == "template";
}

struct RawElement {
  std::string tag;
  int parent = -1;
  std::vector<int> children;
  std::vector<std::string> text_parts;
};

class TreeBuilder {
 public:
  TreeBuilder() { elements_.push_back({kSyntheticRootTag, -1, {}, {}}); stack_.push_back(0); }

  void text(std::string t) { elements_[static_cast<std::size_t>(stack_.back())].text_parts.push_back(std::move(t)); }

  void start(const std::string& tag, bool self_closing) {
    apply_implied_ends(tag);
    const int id = static_cast<int>(elements_.size());
    elements_.push_back({tag, stack_.back(), {}, {}});
    elements_[static_cast<std::size_t>(stack_.back())].children.push_back(id);
    if (!self_closing && !is_void_element(tag)) stack_.push_back(id);
  }

  void end(const std::string& tag) {
    // </p> without an open p creates an empty paragraph in HTML5; it carries no
    // text, so ignoring the tag is equivalent after pruning.
    for (std::size_t k = stack_.size(); k-- > 1;) {
      if (elements_[static_cast<std::size_t>(stack_[k])].tag == tag) {
        stack_.resize(k);
        return;
      }
    }
  }

  std::vector<RawElement> finish() && { return std::move(elements_); }

 private:
  void close_nearest(std::initializer_list<std::string_view> targets,
                     std::initializer_list<std::string_view> stoppers) {
    for (std::size_t k = stack_.size(); k-- > 1;) {
      const std::string& t = elements_[static_cast<std::size_t>(stack_[k])].tag;
      if (std::find(targets.begin(), targets.end(), t) != targets.end()) {
        stack_.resize(k);
        return;
      }
      if (std::find(stoppers.begin(), stoppers.end(), t) != stoppers.end() || is_scope_boundary(t)) return;
    }
  }

  void apply_implied_ends(const std::string& tag) {
    if (closes_paragraph(tag)) close_nearest({"p"}, {});
    if (tag == "li") close_nearest({"li"}, {"ul", "ol", "menu"});
    if (tag == "dt" || tag == "dd") close_nearest({"dt", "dd"}, {"dl"});
    if (tag == "tr") close_nearest({"tr"}, {"tbody", "thead", "tfoot"});
    if (tag == "td" || tag == "th") {
      for (std::size_t k = stack_.size(); k-- > 1;) {
        const std::string& t = elements_[static_cast<std::size_t>(stack_[k])].tag;
        if (t == "td" || t == "th") {
          stack_.resize(k);
          break;
        }
        if (t == "tr" || t == "table") break;
      }
    }
    if (tag == "option") close_nearest({"option"}, {"select", "datalist"});
    if (tag == "body") close_nearest({"head"}, {});
  }

  std::vector<RawElement> elements_;
  std::vector<int> stack_;
};

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == ':';
}

// Finds the matching "</tag" (case-insensitive) at or after `from`.
inline std::size_t find_raw_end(std::string_view html, std::size_t from, std::string_view tag) {
  for (std::size_t i = html.find("</", from); i != std::string_view::npos; i = html.find("</", i + 2)) {
    if (i + 2 + tag.size() > html.size()) break;
    if (lower_ascii(html.substr(i + 2, tag.size())) == tag) {
      const std::size_t after = i + 2 + tag.size();
      if (after == html.size() || !is_name_char(html[after])) return i;
    }
  }
  return std::string_view::npos;
}

}  // namespace detail

/// Parses `html` into a single-rooted element tree. A document whose only
/// top-level element is <html> is rooted there; anything else is wrapped in a
/// synthetic `#root` element. Throws EmptyDocument when no visible text
/// remains after stripping.
inline DomTree parse_html(std::string_view html) {
  detail::TreeBuilder builder;
  std::size_t i = 0;
  const std::size_t n = html.size();
  while (i < n) {
    if (html[i] != '<') {
      const std::size_t next = html.find('<', i);
      const std::size_t stop = next == std::string_view::npos ? n : next;
      builder.text(decode_entities(html.substr(i, stop - i)));
      i = stop;
      continue;
    }
    if (html.compare(i, 4, "<!--") == 0) {
      const std::size_t close = html.find("-->", i + 4);
      i = close == std::string_view::npos ? n : close + 3;
      continue;
    }
    if (i + 1 < n && (html[i + 1] == '!' || html[i + 1] == '?')) {
      const std::size_t close = html.find('>', i + 2);
      i = close == std::string_view::npos ? n : close + 1;
      continue;
    }
    const bool closing = i + 1 < n && html[i + 1] == '/';
    std::size_t p = i + (closing ? 2 : 1);
    const std::size_t name_begin = p;
    while (p < n && detail::is_name_char(html[p])) ++p;
    if (p == name_begin || !std::isalpha(static_cast<unsigned char>(html[name_begin]))) {
      // Not a tag: a literal '<'.
      builder.text("<");
      ++i;
      continue;
    }
    const std::string tag = detail::lower_ascii(html.substr(name_begin, p - name_begin));
    // Skip attributes, honouring quoted values that may contain '>'.
    char quote = 0;
    while (p < n) {
      const char c = html[p];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '>') {
        break;
      }
      ++p;
    }
    const bool self_closing = p > 0 && p < n && html[p - 1] == '/';
    i = p < n ? p + 1 : n;
    if (closing) {
      builder.end(tag);
      continue;
    }
    if (detail::is_skipped_raw_element(tag)) {
      const std::size_t close = self_closing ? i : detail::find_raw_end(html, i, tag);
      if (close == std::string_view::npos) {
        i = n;
      } else if (!self_closing) {
        const std::size_t gt = html.find('>', close);
        i = gt == std::string_view::npos ? n : gt + 1;
      }
      continue;
    }
    builder.start(tag, self_closing);
  }

  std::vector<detail::RawElement> raw = std::move(builder).finish();

  // Choose the root: a lone top-level <html> element with no stray text.
  int root = 0;
  {
    const auto& top = raw[0];
    bool stray_text = false;
    for (const auto& t : top.text_parts) stray_text = stray_text || !normalize_whitespace(t).empty();
    std::vector<int> visible_children;
    for (int c : top.children)
      if (!detail::is_metadata_element(raw[static_cast<std::size_t>(c)].tag)) visible_children.push_back(c);
    if (!stray_text && visible_children.size() == 1 && raw[static_cast<std::size_t>(visible_children[0])].tag == "html")
      root = visible_children[0];
  }

  DomTree tree;
  bool any_text = false;
  // Iterative preorder emission, dropping metadata subtrees.
  std::vector<std::pair<int, int>> work{{root, -1}};  // (raw id, new parent id)
  while (!work.empty()) {
    auto [rid, parent] = work.back();
    work.pop_back();
    const auto& re = raw[static_cast<std::size_t>(rid)];
    DomNode node;
    node.id = static_cast<int>(tree.nodes.size());
    node.tag = re.tag;
    if (parent >= 0) {
      node.parent = parent;
      tree.nodes[static_cast<std::size_t>(parent)].children.push_back(node.id);
    }
    std::string joined;
    for (const auto& part : re.text_parts) {
      joined += part;
      joined += ' ';
    }
    std::string normalized = normalize_whitespace(joined);
    if (!normalized.empty()) {
      node.direct_text = std::move(normalized);
      any_text = true;
    }
    tree.nodes.push_back(std::move(node));
    const int new_id = static_cast<int>(tree.nodes.size()) - 1;
    for (auto it = re.children.rbegin(); it != re.children.rend(); ++it)
      if (!detail::is_metadata_element(raw[static_cast<std::size_t>(*it)].tag)) work.emplace_back(*it, new_id);
  }
  if (!any_text) throw EmptyDocument("no visible text after stripping markup");
  return tree;
}

}  // namespace webformer
