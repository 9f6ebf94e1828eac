#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace latentlab::tasks {

using Token = std::size_t;
using Tokens = std::vector<Token>;

class TokenizationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::array<std::string_view, 26> kGlyphNames = {
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M",
    "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W", "X", "Y", "Z"};

inline constexpr std::array<std::string_view, 8> kColorNames = {"red",    "green",  "blue", "yellow",
                                                                "purple", "orange", "cyan", "gray"};

inline constexpr std::size_t kGlyphCount = kGlyphNames.size();
inline constexpr std::size_t kColorCount = kColorNames.size();

// Closed vocabulary. Order is the id assignment and is part of the dataset and
// checkpoint formats; append only.
inline constexpr std::string_view kVocabTable[] = {
    // reserved
    "<pad>", "<bos>", "<eos>", "<latent_start>", "<latent_end>", "<think_image>",
    // structure
    "<grid>", "</grid>", "/", "<answer>", "</answer>", "(", ")", ",", ":", ".", "?",
    // digits
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    // glyphs
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M",
    "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W", "X", "Y", "Z",
    // colors
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "gray",
    // board cells
    "ice", "hole", "start", "goal", "path",
    // actions
    "up", "down", "left", "right",
    // words
    "what", "color", "glyph", "is", "has", "where", "at", "zoom", "to", "Zooming", "into", "region", "the",
    "target", "with", "plan", "a", "from", "draw", "The", "now", "marks"};

inline constexpr std::size_t kVocabSize = std::size(kVocabTable);

namespace tok {
inline constexpr Token pad = 0;
inline constexpr Token bos = 1;
inline constexpr Token eos = 2;
inline constexpr Token latent_start = 3;
inline constexpr Token latent_end = 4;
inline constexpr Token think_image = 5;
inline constexpr Token grid_open = 6;
inline constexpr Token grid_close = 7;
inline constexpr Token row_sep = 8;
inline constexpr Token answer_open = 9;
inline constexpr Token answer_close = 10;
inline constexpr Token lparen = 11;
inline constexpr Token rparen = 12;
inline constexpr Token comma = 13;
inline constexpr Token colon = 14;
inline constexpr Token period = 15;
inline constexpr Token question = 16;
inline constexpr Token digit0 = 17;
inline constexpr Token glyph0 = 27;
inline constexpr Token color0 = 53;
inline constexpr Token cell_ice = 61;
inline constexpr Token cell_hole = 62;
inline constexpr Token cell_start = 63;
inline constexpr Token cell_goal = 64;
inline constexpr Token cell_path = 65;
inline constexpr Token action0 = 66;
}  // namespace tok

inline Token glyph_token(std::size_t g) { return tok::glyph0 + g; }
inline Token color_token(std::size_t c) { return tok::color0 + c; }
inline bool is_glyph(Token t) { return t >= tok::glyph0 && t < tok::glyph0 + kGlyphCount; }
inline bool is_color(Token t) { return t >= tok::color0 && t < tok::color0 + kColorCount; }
inline bool is_digit(Token t) { return t >= tok::digit0 && t < tok::digit0 + 10; }

/// Reserved ids the model treats specially. Must be distinct and < vocab size.
struct SpecialTokens {
  Token latent_start = tok::latent_start;
  Token latent_end = tok::latent_end;
  Token think_image = tok::think_image;
  Token bos = tok::bos;
  Token eos = tok::eos;
  Token pad = tok::pad;

  bool valid(std::size_t vocab_size) const {
    const std::array<Token, 6> ids = {latent_start, latent_end, think_image, bos, eos, pad};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= vocab_size) return false;
      for (std::size_t j = i + 1; j < ids.size(); ++j)
        if (ids[i] == ids[j]) return false;
    }
    return true;
  }
};

class Vocab {
 public:
  static const Vocab& instance() {
    static const Vocab v;
    return v;
  }

  std::size_t size() const noexcept { return kVocabSize; }

  Token id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw TokenizationError("out-of-vocabulary symbol '" + std::string(word) + "'");
    return it->second;
  }

  bool contains(std::string_view word) const { return index_.contains(std::string(word)); }

  std::string_view word(Token t) const {
    if (t >= kVocabSize) throw TokenizationError("token id " + std::to_string(t) + " outside the vocabulary");
    return kVocabTable[t];
  }

 private:
  Vocab() {
    for (std::size_t i = 0; i < kVocabSize; ++i) index_.emplace(std::string(kVocabTable[i]), i);
  }
  std::unordered_map<std::string, Token> index_;
};

namespace detail {
inline bool is_punct(char c) { return c == '(' || c == ')' || c == ',' || c == ':' || c == '.' || c == '?'; }
inline bool is_punct_token(Token t) { return t >= tok::lparen && t <= tok::question; }
}  // namespace detail

/// Splits text into vocabulary ids. Whitespace separates words; the
/// characters ( ) , : . ? and each decimal digit are always single tokens.
inline Tokens tokenize(std::string_view text) {
  const Vocab& v = Vocab::instance();
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (detail::is_punct(c) || std::isdigit(static_cast<unsigned char>(c))) {
      out.push_back(v.id(text.substr(i, 1)));
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && !detail::is_punct(text[j]) &&
             !std::isdigit(static_cast<unsigned char>(text[j])))
        ++j;
      out.push_back(v.id(text.substr(i, j - i)));
      i = j;
    }
  }
  return out;
}

/// Canonical text: single spaces between tokens, except none before
/// ) , : . ?  none after ( and ,  and none between consecutive digits.
inline std::string detokenize(const Tokens& tokens) {
  const Vocab& v = Vocab::instance();
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token t = tokens[i];
    if (i > 0) {
      const Token prev = tokens[i - 1];
      const bool glue = t == tok::rparen || t == tok::comma || t == tok::colon || t == tok::period ||
                        t == tok::question || prev == tok::lparen || prev == tok::comma ||
                        (is_digit(prev) && is_digit(t));
      if (!glue) out.push_back(' ');
    }
    out += v.word(t);
  }
  return out;
}

/// Decimal digits of n as tokens.
inline Tokens number_tokens(std::size_t n) {
  const std::string s = std::to_string(n);
  Tokens out;
  for (char c : s) out.push_back(tok::digit0 + static_cast<Token>(c - '0'));
  return out;
}

/// "( r , c )"
inline Tokens coord_tokens(std::size_t r, std::size_t c) {
  Tokens out{tok::lparen};
  for (Token t : number_tokens(r)) out.push_back(t);
  out.push_back(tok::comma);
  for (Token t : number_tokens(c)) out.push_back(t);
  out.push_back(tok::rparen);
  return out;
}

inline void append(Tokens& dst, const Tokens& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace latentlab::tasks
