#pragma once

#include <map>
#include <string>
#include <vector>

namespace melle::text {

// Unicode codepoints of a UTF-8 string; malformed bytes become U+FFFD.
std::vector<char32_t> decode_utf8(const std::string& s);
std::string encode_utf8(const std::vector<char32_t>& cps);

// Character inventory with reserved ids. Ids are deterministic: reserved
// symbols first, then codepoints sorted ascending.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kUnk = 2;

  // Lower-cases (ascii) and collects every codepoint present.
  static Vocab build(const std::vector<std::string>& corpus_lines);

  // Restores a vocab from an already-sorted inventory (checkpoint restore).
  static Vocab from_symbols(std::vector<char32_t> symbols);

  // One symbol per line: "<pad>", "<eos>", "<unk>", then the inventory.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return 3 + symbols_.size(); }

  // Lower-cases, maps unknown codepoints to UNK, appends EOS.
  std::vector<std::size_t> encode(const std::string& text) const;
  // Inverse on covered text; PAD and EOS are dropped, UNK prints U+FFFD.
  std::string decode(const std::vector<std::size_t>& ids) const;

  const std::vector<char32_t>& symbols() const { return symbols_; }

 private:
  std::vector<char32_t> symbols_;        // id i+3 ↔ symbols_[i]
  std::map<char32_t, std::size_t> ids_;  // codepoint → id
  void index();
};

}  // namespace melle::text
