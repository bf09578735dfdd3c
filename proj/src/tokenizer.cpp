#include "melle/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace melle::text {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

char32_t ascii_lower(char32_t c) { return (c >= U'A' && c <= U'Z') ? c + 32 : c; }

}  // namespace

std::vector<char32_t> decode_utf8(const std::string& s) {
  std::vector<char32_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok || cp > 0x10FFFF) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  for (char32_t cp : cps) {
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
  return out;
}

void Vocab::index() {
  ids_.clear();
  for (std::size_t i = 0; i < symbols_.size(); ++i) ids_[symbols_[i]] = i + 3;
}

Vocab Vocab::build(const std::vector<std::string>& corpus_lines) {
  if (corpus_lines.empty()) throw std::invalid_argument("vocab: empty corpus");
  std::set<char32_t> seen;
  for (const std::string& line : corpus_lines)
    for (char32_t cp : decode_utf8(line)) seen.insert(ascii_lower(cp));
  if (seen.empty()) throw std::invalid_argument("vocab: empty corpus");
  Vocab v;
  v.symbols_.assign(seen.begin(), seen.end());
  v.index();
  return v;
}

Vocab Vocab::from_symbols(std::vector<char32_t> symbols) {
  if (symbols.empty()) throw std::invalid_argument("vocab: empty symbol set");
  if (!std::is_sorted(symbols.begin(), symbols.end()) ||
      std::adjacent_find(symbols.begin(), symbols.end()) != symbols.end())
    throw std::invalid_argument("vocab: symbols must be sorted and unique");
  Vocab v;
  v.symbols_ = std::move(symbols);
  v.index();
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open vocab file: " + path);
  std::string line;
  const char* reserved[3] = {"<pad>", "<eos>", "<unk>"};
  for (const char* want : reserved) {
    if (!std::getline(f, line) || line != want)
      throw std::runtime_error("malformed vocab file (reserved header): " + path);
  }
  Vocab v;
  while (std::getline(f, line)) {
    const auto cps = decode_utf8(line);
    if (cps.size() != 1)
      throw std::runtime_error("malformed vocab file (multi-codepoint symbol): " + path);
    v.symbols_.push_back(cps[0]);
  }
  if (!std::is_sorted(v.symbols_.begin(), v.symbols_.end()))
    throw std::runtime_error("malformed vocab file (symbols out of order): " + path);
  v.index();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write vocab file: " + path);
  f << "<pad>\n<eos>\n<unk>\n";
  for (char32_t cp : symbols_) f << encode_utf8({cp}) << "\n";
  if (!f) throw std::runtime_error("short write: " + path);
}

std::vector<std::size_t> Vocab::encode(const std::string& text) const {
  std::vector<std::size_t> out;
  for (char32_t cp : decode_utf8(text)) {
    const auto it = ids_.find(ascii_lower(cp));
    out.push_back(it == ids_.end() ? kUnk : it->second);
  }
  out.push_back(kEos);
  return out;
}

std::string Vocab::decode(const std::vector<std::size_t>& ids) const {
  std::vector<char32_t> cps;
  for (std::size_t id : ids) {
    if (id == kPad || id == kEos) continue;
    if (id == kUnk || id >= size())
      cps.push_back(kReplacement);
    else
      cps.push_back(symbols_[id - 3]);
  }
  return encode_utf8(cps);
}

}  // namespace melle::text
