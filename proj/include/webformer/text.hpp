#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "webformer/errors.hpp"

namespace webformer {

namespace detail {

// Decodes one UTF-8 code point starting at `pos`; returns its byte length.
// Invalid lead bytes decode as themselves with length 1.
inline std::size_t utf8_decode(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto cont = [&](std::size_t k) -> unsigned {
    if (pos + k >= s.size()) return 0x100;
    const auto b = static_cast<unsigned char>(s[pos + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : 0x100;
  };
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1) < 0x100) {
    cp = ((b0 & 0x1F) << 6) | cont(1);
    return 2;
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) < 0x100 && cont(2) < 0x100) {
    cp = ((b0 & 0x0F) << 12) | (cont(1) << 6) | cont(2);
    return 3;
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) < 0x100 && cont(2) < 0x100 && cont(3) < 0x100) {
    cp = ((b0 & 0x07) << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3);
    return 4;
  }
  cp = b0;
  return 1;
}

inline bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline bool is_ascii_punct(char32_t cp) {
  return cp < 0x80 && std::ispunct(static_cast<int>(cp)) != 0;
}

}  // namespace detail

/// Collapses every run of Unicode whitespace to one ASCII space and trims.
inline std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = detail::utf8_decode(text, i, cp);
    if (detail::is_unicode_space(cp)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.append(text.substr(i, len));
    }
    i += len;
  }
  return out;
}

/// Lowercased word-level split: Unicode whitespace separates tokens and every
/// ASCII punctuation character is a token of its own.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = detail::utf8_decode(text, i, cp);
    if (detail::is_unicode_space(cp)) {
      flush();
    } else if (detail::is_ascii_punct(cp)) {
      flush();
      words.emplace_back(1, static_cast<char>(cp));
    } else if (cp < 0x80) {
      current.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
    } else {
      current.append(text.substr(i, len));
    }
    i += len;
  }
  flush();
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

/// Word, tag and field id maps. Word ids 0 and 1 are PAD and UNK; tag id 0 is
/// UNK_TAG. Fields have no reserved ids: an unknown field is a VocabError.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kUnkTag = 0;
  static constexpr const char* kPadWord = "[PAD]";
  static constexpr const char* kUnkWord = "[UNK]";
  static constexpr const char* kUnkTagName = "[UNK_TAG]";

  Vocab() {
    add_word(kPadWord);
    add_word(kUnkWord);
    add_tag(kUnkTagName);
  }

  int add_word(const std::string& w) { return add(words_, word_list_, w); }
  int add_tag(const std::string& t) { return add(tags_, tag_list_, t); }
  int add_field(const std::string& f) { return add(fields_, field_list_, f); }

  int word_id(const std::string& w) const {
    auto it = words_.find(w);
    return it == words_.end() ? kUnk : it->second;
  }
  int tag_id(const std::string& t) const {
    auto it = tags_.find(t);
    return it == tags_.end() ? kUnkTag : it->second;
  }
  int field_id(const std::string& f) const {
    auto it = fields_.find(f);
    if (it == fields_.end()) throw VocabError("unknown field '" + f + "'");
    return it->second;
  }
  bool has_word(const std::string& w) const { return words_.count(w) != 0; }
  bool has_field(const std::string& f) const { return fields_.count(f) != 0; }

  const std::string& word(int id) const { return word_list_.at(static_cast<std::size_t>(id)); }
  const std::string& tag(int id) const { return tag_list_.at(static_cast<std::size_t>(id)); }
  const std::string& field(int id) const { return field_list_.at(static_cast<std::size_t>(id)); }

  std::size_t word_count() const { return word_list_.size(); }
  std::size_t tag_count() const { return tag_list_.size(); }
  std::size_t field_count() const { return field_list_.size(); }
  const std::vector<std::string>& fields() const { return field_list_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["reserved"] = {{"words", {{kPadWord, kPad}, {kUnkWord, kUnk}}},
                     {"tags", {{kUnkTagName, kUnkTag}}},
                     {"note", "ids are dense and zero-based; unknown words map to [UNK], "
                              "unknown tags to [UNK_TAG]; fields have no reserved ids"}};
    j["words"] = map_json(word_list_);
    j["tags"] = map_json(tag_list_);
    j["fields"] = map_json(field_list_);
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    v.words_.clear();
    v.word_list_.clear();
    v.tags_.clear();
    v.tag_list_.clear();
    load_map(j.at("words"), v.words_, v.word_list_);
    load_map(j.at("tags"), v.tags_, v.tag_list_);
    load_map(j.at("fields"), v.fields_, v.field_list_);
    if (v.word_list_.size() < 2 || v.word_list_[kPad] != kPadWord || v.word_list_[kUnk] != kUnkWord)
      throw VocabError("reserved word ids are missing");
    if (v.tag_list_.empty() || v.tag_list_[kUnkTag] != kUnkTagName)
      throw VocabError("reserved tag id is missing");
    return v;
  }

  std::string serialize() const { return to_json().dump(1); }

  /// FNV-1a of the serialized form; recorded in checkpoints.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : serialize()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("cannot write " + path);
    out << serialize() << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot read " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw VocabError(std::string("malformed vocab file: ") + e.what());
    }
  }

  bool operator==(const Vocab& o) const {
    return word_list_ == o.word_list_ && tag_list_ == o.tag_list_ && field_list_ == o.field_list_;
  }

 private:
  using Map = std::unordered_map<std::string, int>;

  static int add(Map& m, std::vector<std::string>& list, const std::string& key) {
    auto [it, inserted] = m.emplace(key, static_cast<int>(list.size()));
    if (inserted) list.push_back(key);
    return it->second;
  }

  static nlohmann::json map_json(const std::vector<std::string>& list) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < list.size(); ++i) j[list[i]] = i;
    return j;
  }

  static void load_map(const nlohmann::json& j, Map& m, std::vector<std::string>& list) {
    list.assign(j.size(), std::string());
    std::vector<bool> seen(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::int64_t>();
      if (id < 0 || static_cast<std::size_t>(id) >= list.size() || seen[static_cast<std::size_t>(id)])
        throw VocabError("ids are not dense in vocab map");
      seen[static_cast<std::size_t>(id)] = true;
      list[static_cast<std::size_t>(id)] = it.key();
      m[it.key()] = static_cast<int>(id);
    }
  }

  Map words_, tags_, fields_;
  std::vector<std::string> word_list_, tag_list_, field_list_;
};

/// Word ids for `text`; out-of-vocabulary words map to UNK.
inline std::vector<int> tokenize_text(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.word_id(w));
  return ids;
}

}  // namespace webformer
