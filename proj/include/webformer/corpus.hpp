#pragma once

// Synthetic multi-domain pages, JSONL datasets, vocabulary building and
// EM/F1 scoring.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "webformer/dom.hpp"
#include "webformer/errors.hpp"
#include "webformer/html.hpp"
#include "webformer/text.hpp"

namespace webformer {

/// A field and the value patterns it is drawn from. Patterns are strings
/// with `{slot}` references into the schema lexicon.
struct FieldSpec {
  std::string name;
  std::vector<std::string> patterns;
  std::vector<std::string> labels;  // cue words rendered next to the value
  bool label_required = false;      // person-like fields need a cue to be told apart
};

struct FieldSchema {
  std::string domain;
  std::vector<FieldSpec> fields;
  std::map<std::string, std::vector<std::string>> lexicon;

  std::vector<std::string> field_names() const {
    std::vector<std::string> out;
    for (const auto& f : fields) out.push_back(f.name);
    return out;
  }
  const FieldSpec& field(const std::string& name) const {
    for (const auto& f : fields)
      if (f.name == name) return f;
    throw ConfigError("field '" + name + "' not in schema " + domain);
  }
  void validate() const {
    for (std::size_t i = 0; i < fields.size(); ++i)
      for (std::size_t j = i + 1; j < fields.size(); ++j)
        if (fields[i].name == fields[j].name) throw ConfigError("duplicate field '" + fields[i].name + "' in " + domain);
  }
};

struct Label {
  std::string field;
  std::string value;
  bool operator==(const Label&) const = default;
};

struct LabeledPage {
  std::string html;
  std::string domain;
  std::vector<Label> labels;
  bool operator==(const LabeledPage&) const = default;
};

namespace detail {

using Lexicon = std::map<std::string, std::vector<std::string>>;

inline Lexicon shared_lexicon() {
  return {
      {"adj", {"grand", "golden", "silver", "classic", "royal", "urban", "little", "bright", "happy", "wild",
               "midnight", "summer", "winter", "spring", "autumn", "modern", "vintage", "lucky", "secret", "hidden",
               "great", "sunny", "crystal", "electric", "cosmic", "northern", "southern", "fun", "family", "super",
               "mega", "prime", "simple", "bold", "quiet", "swift", "brave", "gentle", "noble", "magic", "first",
               "last", "amazing", "epic", "cozy", "fresh", "daring", "mighty"}},
      {"month", {"jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec", "january",
                 "february", "march", "april", "june", "july", "august", "september", "october", "november",
                 "december"}},
      {"weekday", {"mon", "tue", "wed", "thu", "fri", "sat", "sun", "monday", "friday", "saturday", "sunday"}},
      {"day", {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15", "16", "17", "18",
               "19", "20", "21", "22", "23", "24", "25", "26", "27", "28"}},
      {"year", {"2019", "2020", "2021", "2022", "2023", "2024", "2025", "1998", "2004", "2011"}},
      {"first", {"john", "mary", "alex", "sam", "lee", "maria", "david", "emma", "noah", "olivia", "liam", "ava",
                 "lucas", "mia", "ethan", "zoe", "ryan", "nina", "omar", "iris", "hugo", "lena", "raj", "yuki"}},
      {"last", {"smith", "jones", "garcia", "chen", "kim", "patel", "brown", "miller", "davis", "lopez", "wilson",
                "moore", "taylor", "clark", "walker", "young", "hall", "allen", "wright", "scott", "nguyen",
                "tanaka", "rossi", "novak"}},
      {"shared_phrase", {"a perfect choice for everyone", "made with love and care", "loved by fans around the world",
                         "an unforgettable experience", "with something for the whole family", "now better than ever",
                         "you will not want to miss it", "the best of its kind", "full of surprises",
                         "bringing people together", "a true classic for all ages", "simply the best around",
                         "designed to delight", "a favorite of critics and fans"}},
  };
}

inline std::vector<FieldSchema> make_builtin_schemas() {
  std::vector<FieldSchema> out;
  const std::vector<std::string> name_labels = {"title", "name"};
  const std::vector<std::string> desc_labels = {"about", "description", "overview", "details"};
  {
    FieldSchema s;
    s.domain = "events";
    s.lexicon = {
        {"noun", {"fest", "festival", "night", "fair", "concert", "gala", "marathon", "meetup", "party", "expo",
                  "carnival", "market", "parade", "workshop", "jam", "social", "tour", "picnic"}},
        {"domain_phrase", {"live music and local food", "games and activities for kids", "free entry for all",
                           "food trucks and craft stalls", "dancing until late", "tickets available at the door",
                           "a day of music and art", "fireworks at sunset"}},
        {"venue", {"square park", "city hall", "the old mill", "harbor pier", "central plaza", "river stage",
                   "union hall", "civic center", "lakeside lawn", "the warehouse", "grand arena", "oak pavilion"}},
        {"city", {"san jose", "austin", "denver", "boston", "seattle", "portland", "chicago", "miami", "oakland",
                  "phoenix", "atlanta", "dallas"}},
        {"street", {"main", "oak", "pine", "maple", "elm", "cedar", "market", "mission", "park", "lake"}},
        {"num", {"12", "48", "101", "220", "350", "417", "505", "640", "777", "900"}},
    };
    s.fields = {
        {"name", {"{adj} {noun}", "{adj} {adj} {noun}", "the {adj} {noun}", "{adj} {noun} {year}"}, name_labels},
        {"description", {"{domain_phrase} , {shared_phrase} .", "{shared_phrase} with {domain_phrase} .",
                         "{domain_phrase} and {domain_phrase} , {shared_phrase} ."}, desc_labels},
        {"date", {"{month} {day}", "{month} {day} , {year}", "{weekday} , {month} {day}", "{day} {month} {year}"},
         {"date", "when", "on"}},
        {"location", {"{venue} , {city}", "{num} {street} st , {city}", "{venue}", "{venue} in {city}"},
         {"where", "venue", "location", "at"}},
    };
    out.push_back(std::move(s));
  }
  {
    FieldSchema s;
    s.domain = "products";
    s.lexicon = {
        {"noun", {"blender", "backpack", "lamp", "kettle", "headphones", "sneakers", "jacket", "watch", "speaker",
                  "mug", "chair", "desk", "camera", "notebook", "bottle", "toaster", "drone", "keyboard"}},
        {"model", {"x200", "pro", "mini", "max", "lite", "plus", "v2", "s9", "air", "ultra"}},
        {"domain_phrase", {"durable design and long battery life", "easy to clean and store",
                           "lightweight build for travel", "backed by a two year warranty",
                           "soft grip and sturdy frame", "fast charging in minutes", "quiet motor and smart controls",
                           "water resistant materials"}},
        {"brand", {"acme", "nordika", "zentro", "luma", "kova", "brightline", "orbit labs", "vexa", "solano",
                   "hearth and co", "peakform", "tidewell", "quanta", "maple works"}},
        {"dollars", {"9", "14", "19", "24", "29", "39", "49", "59", "79", "99", "129", "249"}},
        {"cents", {"00", "49", "50", "90", "95", "99", "25", "75"}},
        {"color", {"black", "white", "navy", "beige", "teal", "maroon", "charcoal", "ivory", "olive", "coral",
                   "crimson", "turquoise", "lavender", "mustard"}},
        {"shade", {"matte", "dark", "light", "deep", "pale"}},
    };
    s.fields = {
        {"name", {"{adj} {noun}", "{adj} {noun} {model}", "{noun} {model}", "the {adj} {noun}"}, name_labels},
        {"description", {"{domain_phrase} , {shared_phrase} .", "{shared_phrase} with {domain_phrase} .",
                         "{domain_phrase} and {domain_phrase} , {shared_phrase} ."}, desc_labels},
        {"brand", {"{brand}"}, {"brand", "by", "from"}},
        {"price", {"${dollars}.{cents}", "$ {dollars}.{cents}", "usd {dollars}.{cents}"}, {"price", "now", "only"}},
        {"color", {"{color}", "{shade} {color}"}, {"color", "colour", "finish"}},
    };
    out.push_back(std::move(s));
  }
  {
    FieldSchema s;
    s.domain = "movies";
    s.lexicon = {
        {"noun", {"river", "kingdom", "shadow", "journey", "legacy", "storm", "horizon", "dream", "empire", "garden",
                  "echo", "island", "frontier", "odyssey", "voyage", "mirror", "code", "lantern"}},
        {"domain_phrase", {"a thrilling story of courage", "stunning visuals and a powerful score",
                           "a heartfelt tale of friendship", "twists at every turn", "based on a true story",
                           "a bold vision from a new voice", "laughs from start to finish", "a dark and moody mystery"}},
        {"genre", {"drama", "comedy", "thriller", "horror", "documentary", "animation", "romance", "sci-fi",
                   "action", "adventure", "fantasy", "mystery", "romantic comedy", "crime drama"}},
        {"hours", {"1", "2", "3"}},
        {"minutes", {"5", "10", "12", "18", "24", "30", "35", "42", "45", "50", "55"}},
        {"total", {"88", "94", "101", "112", "118", "125", "133", "141", "152"}},
    };
    s.fields = {
        {"name", {"the {adj} {noun}", "{noun} of the {adj} {noun}", "{adj} {noun}", "{adj} {noun} {hours}"},
         name_labels},
        {"description", {"{domain_phrase} , {shared_phrase} .", "{shared_phrase} with {domain_phrase} .",
                         "{domain_phrase} and {domain_phrase} , {shared_phrase} ."}, desc_labels},
        {"genre", {"{genre}"}, {"genre", "category"}},
        {"duration", {"{hours} h {minutes} min", "{total} minutes", "{hours} hr {minutes} min", "{total} min"},
         {"runtime", "length", "duration"}},
        {"director", {"{first} {last}"}, {"directed by", "director"}, true},
        {"actor", {"{first} {last}"}, {"starring", "cast"}, true},
        {"published date", {"{month} {day} , {year}", "{year}", "{month} {year}"}, {"released", "release date", "premiere"}},
    };
    out.push_back(std::move(s));
  }
  for (auto& s : out) {
    s.validate();
    for (auto& [k, v] : shared_lexicon()) s.lexicon.emplace(k, v);
  }
  return out;
}

}  // namespace detail

inline const std::vector<FieldSchema>& builtin_schemas() {
  static const std::vector<FieldSchema> schemas = detail::make_builtin_schemas();
  return schemas;
}

inline const FieldSchema& schema_for(const std::string& domain) {
  for (const auto& s : builtin_schemas())
    if (s.domain == domain) return s;
  throw ConfigError("unknown domain '" + domain + "'");
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Values are always random; structure only varies with probability `noise`.
class PageRng {
 public:
  PageRng(std::uint64_t seed, double noise) : rng_(seed), noise_(noise) {}

  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  int between(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  bool coin(double p) { return unit() < p; }
  template <typename C>
  const auto& any(const C& c) { return c[index(c.size())]; }

  bool noisy() { return noise_ > 0.0 && coin(noise_); }
  // First option unless the structure is perturbed.
  template <typename C>
  const auto& style(const C& c) { return noisy() ? any(c) : c[0]; }
  double noise() const { return noise_; }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  double noise_;
};

inline std::string expand(const std::string& pattern, const Lexicon& lex, PageRng& rng) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] != '{') {
      out += pattern[i];
      continue;
    }
    const auto close = pattern.find('}', i);
    const std::string slot = pattern.substr(i + 1, close - i - 1);
    auto it = lex.find(slot);
    if (it == lex.end()) throw ConfigError("pattern slot '" + slot + "' has no lexicon");
    out += rng.any(it->second);
    i = close;
  }
  return out;
}

inline std::string element(const std::string& tag, const std::string& inner) {
  return "<" + tag + ">" + inner + "</" + tag + ">";
}

struct Block {
  std::string html;
};

inline const std::vector<std::string>& nav_texts() {
  static const std::vector<std::string> v = {"home", "about us", "contact", "login", "sign up", "help", "cart",
                                             "search", "deals", "blog", "careers", "support"};
  return v;
}

inline const std::vector<std::string>& filler_texts() {
  static const std::vector<std::string> v = {
      "copyright 2018 all rights reserved", "privacy policy", "terms of use", "follow us on social media",
      "subscribe to our newsletter", "share this page", "back to top", "advertisement", "sponsored",
      "cookie settings", "read more", "leave a review", "free shipping on orders over $75",
      "questions ? call us any time", "sign in to save your list", "gift cards available"};
  return v;
}

// Value text for a field, with an optional inline cue; the wrapper tag varies.
inline std::string render_value(const FieldSpec& f, const std::string& value, PageRng& rng, bool& sibling_label,
                                std::string& label) {
  sibling_label = false;
  label.clear();
  const bool heading = f.name == "name";
  const bool prose = f.name == "description";
  const std::vector<std::string> heading_tags = {"h1", "h2", "div", "span", "p", "strong"};
  const std::vector<std::string> prose_tags = {"p", "div", "span", "li"};
  const std::vector<std::string> short_tags = {"span", "div", "p", "li", "b", "em"};
  const std::string tag = heading ? rng.style(heading_tags) : prose ? rng.style(prose_tags) : rng.style(short_tags);

  std::string text = value;
  if (f.label_required) {
    text = rng.any(f.labels) + (rng.coin(0.5) ? " " : " : ") + value;
  } else if (!f.labels.empty() && !heading) {
    // 0: bare value, 1: inline cue, 2: cue in a sibling node
    const int mode = rng.noisy() ? rng.between(0, 2) : (prose ? 0 : 1);
    if (mode == 1) {
      text = rng.any(f.labels) + " : " + value;
    } else if (mode == 2) {
      sibling_label = true;
      label = rng.any(f.labels);
    }
  }
  if (f.name == "price" && rng.noisy() && rng.coin(0.5)) {
    // Strike-through style old price; the cue word decides which number is live.
    const std::vector<std::string> was = {"$35.00", "$42.50", "$60.00", "$89.99", "$110.00", "$15.25"};
    text = "was " + rng.any(was) + " now " + value;
  }
  return element(tag, text);
}

}  // namespace detail

/// One synthetic page for `schema`. With `noise` = 0 the page layout is a
/// fixed template and only the field values vary with the seed.
inline LabeledPage gen_page_once(const FieldSchema& schema, std::uint64_t seed, double noise) {
  using namespace detail;
  if (noise < 0.0 || noise > 1.0) throw ConfigError("structure noise must lie in [0, 1]");
  PageRng rng(seed, noise);
  LabeledPage page;
  page.domain = schema.domain;

  std::unordered_map<std::string, std::string> values;
  for (const auto& f : schema.fields) {
    std::string v = expand(rng.any(f.patterns), schema.lexicon, rng);
    values[f.name] = v;
    page.labels.push_back({f.name, v});
  }

  // Field blocks. Date and location of events share a container as siblings.
  std::vector<std::string> blocks;
  const std::vector<std::string> block_tags = {"div", "section", "article", "div", "header"};
  auto field_node = [&](const FieldSpec& f) {
    bool sibling_label = false;
    std::string label;
    std::string node = render_value(f, values[f.name], rng, sibling_label, label);
    if (sibling_label) {
      const std::vector<std::string> label_tags = {"span", "strong", "label", "b"};
      const std::string lt = rng.any(label_tags);
      node = element(lt, label) + node;
    }
    return node;
  };
  std::vector<bool> used(schema.fields.size(), false);
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    if (used[i]) continue;
    const auto& f = schema.fields[i];
    std::string inner = field_node(f);
    used[i] = true;
    if (schema.domain == "events" && (f.name == "date" || f.name == "location")) {
      const std::string other = f.name == "date" ? "location" : "date";
      for (std::size_t j = 0; j < schema.fields.size(); ++j)
        if (!used[j] && schema.fields[j].name == other) {
          inner += field_node(schema.fields[j]);
          used[j] = true;
        }
    }
    const std::string bt = rng.style(block_tags);
    // Extra nesting inside the block.
    const int extra = rng.noisy() ? rng.between(0, 2) : 0;
    for (int k = 0; k < extra; ++k) inner = element("div", inner);
    blocks.push_back(element(bt, inner));
  }

  const int distractors = noise > 0.0 ? static_cast<int>(std::lround(noise * rng.between(0, 20))) : 0;
  std::vector<std::string> nav, promos, aside, footer;
  for (int k = 0; k < distractors; ++k) {
    const int where = rng.between(0, 3);
    if (where == 0) {
      nav.push_back(element("li", rng.any(nav_texts())));
    } else if (where == 1) {
      promos.push_back(element(rng.any(std::vector<std::string>{"div", "p", "span"}), rng.any(filler_texts())));
    } else {
      // Look-alike values of this domain, placed outside the main content.
      std::string text;
      if (rng.coin(0.25)) {
        // Look-alike value; the lead-in word marks it as a recommendation.
        const auto& f = rng.any(schema.fields);
        text = expand(rng.any(f.patterns), schema.lexicon, rng);
        if (f.label_required) text = rng.any(f.labels) + " " + text;
        text = rng.any(std::vector<std::string>{"related :", "see also", "similar :", "trending :"}) + " " + text;
      } else {
        text = rng.any(filler_texts());
      }
      const std::string t = rng.any(std::vector<std::string>{"span", "div", "p", "a"});
      (where == 2 ? aside : footer).push_back(element(t, text));
    }
  }

  if (rng.noisy()) std::shuffle(blocks.begin(), blocks.end(), rng.engine());
  // Promos are interleaved with the field blocks.
  for (auto& p : promos) blocks.insert(blocks.begin() + static_cast<std::ptrdiff_t>(rng.index(blocks.size() + 1)), p);

  std::string main;
  for (auto& b : blocks) main += b;
  main = element(rng.style(std::vector<std::string>{"main", "div", "section"}), main);
  if (!aside.empty()) {
    std::string a;
    for (auto& x : aside) a += x;
    main += element("aside", element(rng.any(std::vector<std::string>{"h4", "span"}), "you may also like") + a);
  }
  const int wrappers = rng.noisy() ? rng.between(0, 3) : 1;
  for (int k = 0; k < wrappers; ++k) main = element(rng.any(std::vector<std::string>{"div", "section"}), main);

  std::string body;
  if (!nav.empty()) {
    std::string items;
    for (auto& x : nav) items += x;
    body += element("nav", element("ul", items));
  }
  body += main;
  if (!footer.empty()) {
    std::string f;
    for (auto& x : footer) f += x;
    body += element("footer", f);
  }

  page.html = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + values["name"] +
              "</title><style>body{margin:0}</style></head>\n<body>" + body +
              "<script>window.analytics=[];</script></body></html>\n";
  return page;
}

namespace detail {

inline int count_occurrences(const DomTree& tree, const std::vector<std::string>& needle) {
  int count = 0;
  for (const auto& n : tree.nodes) {
    if (!n.direct_text) continue;
    const auto hay = split_words(*n.direct_text);
    for (std::size_t off = 0; off + needle.size() <= hay.size(); ++off)
      if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(off))) ++count;
  }
  return count;
}

}  // namespace detail

/// Like gen_page_once, but redraws until every label value occurs exactly
/// once in the visible text, so first-occurrence alignment finds the
/// generator's placement.
inline LabeledPage gen_page(const FieldSchema& schema, std::uint64_t seed, double noise = 1.0) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    LabeledPage page = gen_page_once(schema, attempt == 0 ? seed : detail::mix_seed(seed, attempt), noise);
    const DomTree tree = parse_html(page.html);
    bool ok = true;
    for (const auto& l : page.labels) ok = ok && detail::count_occurrences(tree, split_words(l.value)) == 1;
    if (ok) return page;
  }
}

// ---- datasets ----

inline nlohmann::json page_to_json(const LabeledPage& p) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : p.labels) labels.push_back({{"field", l.field}, {"value", l.value}});
  return {{"html", p.html}, {"domain", p.domain}, {"labels", std::move(labels)}};
}

inline LabeledPage page_from_json(const nlohmann::json& j) {
  LabeledPage p;
  p.html = j.at("html").get<std::string>();
  p.domain = j.at("domain").get<std::string>();
  for (const auto& l : j.at("labels")) p.labels.push_back({l.at("field").get<std::string>(), l.at("value").get<std::string>()});
  return p;
}

inline void write_dataset(const std::string& path, const std::vector<LabeledPage>& pages) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path);
  for (const auto& p : pages) out << page_to_json(p).dump() << '\n';
  if (!out) throw IOError("write failed for " + path);
}

inline std::vector<LabeledPage> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read " + path);
  std::vector<LabeledPage> pages;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      pages.push_back(page_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return pages;
}

struct CorpusSplits {
  std::vector<LabeledPage> train, dev, test;
};

/// Pages of each domain with per-page seeds; page i goes to train, dev or
/// test by i mod 10 (8:1:1).
inline CorpusSplits generate_corpus(const std::vector<std::string>& domains, std::size_t pages_per_domain,
                                    std::uint64_t seed, double noise = 1.0) {
  if (pages_per_domain == 0) throw ConfigError("pages per domain must be positive");
  if (domains.empty()) throw ConfigError("no domains requested");
  CorpusSplits out;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    const FieldSchema& schema = schema_for(domains[d]);
    const std::uint64_t domain_seed = detail::mix_seed(seed, std::hash<std::string>{}(domains[d]) & 0xffffffffu);
    for (std::size_t i = 0; i < pages_per_domain; ++i) {
      LabeledPage p = gen_page(schema, detail::mix_seed(domain_seed, i), noise);
      const std::size_t r = i % 10;
      (r < 8 ? out.train : r == 8 ? out.dev : out.test).push_back(std::move(p));
    }
  }
  return out;
}

/// Word vocabulary over visible text (frequency >= min_freq), every observed
/// tag, and the field names of every domain present.
inline Vocab build_vocab(const std::vector<LabeledPage>& pages, std::size_t min_freq = 2) {
  if (pages.empty()) throw EmptyDataset("cannot build a vocabulary from an empty dataset");
  std::map<std::string, std::size_t> word_freq;
  std::vector<std::string> word_order, tag_order, field_order;
  std::map<std::string, bool> tag_seen, field_seen;
  auto add_field = [&](const std::string& f) {
    if (!field_seen[f]) {
      field_seen[f] = true;
      field_order.push_back(f);
    }
  };
  for (const auto& p : pages) {
    DomTree tree;
    try {
      tree = parse_html(p.html);
    } catch (const EmptyDocument&) {
      continue;
    }
    for (const auto& n : tree.nodes) {
      if (!tag_seen[n.tag]) {
        tag_seen[n.tag] = true;
        tag_order.push_back(n.tag);
      }
      if (!n.direct_text) continue;
      for (const auto& w : split_words(*n.direct_text))
        if (word_freq[w]++ == 0) word_order.push_back(w);
    }
    bool known = false;
    for (const auto& s : builtin_schemas())
      if (s.domain == p.domain) {
        known = true;
        for (const auto& f : s.fields) add_field(f.name);
      }
    if (!known)
      for (const auto& l : p.labels) add_field(l.field);
  }
  Vocab v;
  for (const auto& w : word_order)
    if (word_freq[w] >= min_freq) v.add_word(w);
  for (const auto& t : tag_order) v.add_tag(t);
  for (const auto& f : field_order) v.add_field(f);
  return v;
}

// ---- metrics ----

struct SpanScore {
  double em = 0.0;
  double f1 = 0.0;
};

/// Token-level exact match and multiset F1 between two answer strings.
inline SpanScore em_f1(const std::string& predicted, const std::string& gold) {
  const auto g = split_words(gold);
  if (g.empty()) throw InvalidGold("gold answer is empty");
  const auto p = split_words(predicted);
  SpanScore s;
  s.em = p == g ? 1.0 : 0.0;
  if (p.empty()) return s;
  std::map<std::string, int> counts;
  for (const auto& w : g) ++counts[w];
  int overlap = 0;
  for (const auto& w : p)
    if (counts[w]-- > 0) ++overlap;
  if (overlap == 0) return s;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  s.f1 = 2.0 * precision * recall / (precision + recall);
  return s;
}

inline constexpr std::array<const char*, 4> kLengthBuckets = {"0-512", "512-1024", "1024-2048", "2048-inf"};

/// Bucket of a document by its text-token count (before truncation).
inline std::size_t length_bucket(std::size_t tokens) {
  if (tokens < 512) return 0;
  if (tokens < 1024) return 1;
  if (tokens < 2048) return 2;
  return 3;
}

struct ScoreSum {
  double em = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;

  void add(const SpanScore& s) {
    em += s.em;
    f1 += s.f1;
    ++count;
  }
  double mean_em() const { return count ? em / static_cast<double>(count) : 0.0; }
  double mean_f1() const { return count ? f1 / static_cast<double>(count) : 0.0; }
};

struct Metrics {
  ScoreSum overall;
  std::map<std::string, ScoreSum> per_field;
  std::array<ScoreSum, 4> per_bucket{};

  double exact_match() const { return overall.mean_em(); }
  double f1() const { return overall.mean_f1(); }

  void add(const std::string& field, std::size_t doc_tokens, const SpanScore& s) {
    overall.add(s);
    per_field[field].add(s);
    per_bucket[length_bucket(doc_tokens)].add(s);
  }

  nlohmann::json to_json() const {
    using nlohmann::json;
    auto row = [](const ScoreSum& s) { return json{{"em", s.mean_em()}, {"f1", s.mean_f1()}, {"count", s.count}}; };
    json fields = json::object();
    for (const auto& [k, v] : per_field) fields[k] = row(v);
    json buckets = json::object();
    for (std::size_t b = 0; b < kLengthBuckets.size(); ++b) buckets[kLengthBuckets[b]] = row(per_bucket[b]);
    return {{"exact_match", exact_match()}, {"f1", f1()}, {"count", overall.count},
            {"per_field", std::move(fields)}, {"per_bucket", std::move(buckets)}};
  }

  /// Rows of (group, key, em, f1, count).
  std::string to_csv() const {
    std::ostringstream os;
    os << "group,key,em,f1,count\n";
    os << "overall,all," << exact_match() << ',' << f1() << ',' << overall.count << '\n';
    for (const auto& [k, v] : per_field) os << "field," << k << ',' << v.mean_em() << ',' << v.mean_f1() << ',' << v.count << '\n';
    for (std::size_t b = 0; b < kLengthBuckets.size(); ++b)
      os << "bucket," << kLengthBuckets[b] << ',' << per_bucket[b].mean_em() << ',' << per_bucket[b].mean_f1() << ','
         << per_bucket[b].count << '\n';
    return os.str();
  }
};

}  // namespace webformer
