#pragma once

#include <cctype>
#include <map>
#include <string>

#include "dtlab/caption_analysis.hpp"

namespace dtlab::testing {

/// Character-level normalization: lowercase, every non-alphanumeric byte a
/// space, single spaces, padded at both ends.
inline std::string normalize_caption(const std::string& s) {
  std::string out = " ";
  for (unsigned char ch : s) {
    const char c = std::isalnum(ch) || ch >= 0x80 ? static_cast<char>(std::tolower(ch)) : ' ';
    if (c == ' ' && out.back() == ' ') continue;
    out += c;
  }
  if (out.back() != ' ') out += ' ';
  return out;
}

/// All captions against all phrases with plain substring search.
inline std::map<std::string, double> brute_force_elements(const CaptionCorpus& corpus, const ElementLexicon& lex) {
  std::map<std::string, double> out;
  for (const auto& [type, phrases] : lex.phrases) {
    std::size_t hits = 0;
    for (const auto& cap : corpus) {
      const std::string text = normalize_caption(cap.text);
      bool any = false;
      for (const auto& p : phrases) any = any || text.find(normalize_caption(p)) != std::string::npos;
      hits += any;
    }
    out[type] = 100.0 * static_cast<double>(hits) / static_cast<double>(corpus.size());
  }
  return out;
}

/// Words counted by scanning for alphanumeric runs, bucketed by width.
inline std::map<std::size_t, std::size_t> tally_lengths(const CaptionCorpus& corpus, std::size_t width) {
  std::map<std::size_t, std::size_t> tally;
  for (const auto& c : corpus) {
    std::size_t words = 0;
    bool in_word = false;
    for (unsigned char ch : c.text) {
      const bool w = std::isalnum(ch) || ch >= 0x80;
      if (w && !in_word) ++words;
      in_word = w;
    }
    ++tally[words / width];
  }
  return tally;
}

}  // namespace dtlab::testing
