#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dtlab {

/// Lowercases and splits on whitespace and ASCII punctuation; separators are
/// dropped. Idempotent: tokenizing the space-joined tokens gives the same tokens.
std::vector<std::string> tokenize(std::string_view text);

struct Caption {
  std::string source;
  std::string text;
};
using CaptionCorpus = std::vector<Caption>;

class CaptionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Newline-delimited `source<TAB>caption`. Blank lines are skipped; a line
/// without a tab or with an empty caption is an error.
CaptionCorpus read_corpus(const std::string& path);
CaptionCorpus parse_corpus(std::string_view text);

/// The twelve element types, in reporting order.
const std::vector<std::string>& element_types();

struct ElementLexicon {
  /// type -> phrases (lowercase, non-empty, possibly multi-word)
  std::map<std::string, std::vector<std::string>> phrases;

  void add(const std::string& type, const std::string& phrase);
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  /// Canonical types first, then any extra types alphabetically.
  std::vector<std::string> types() const;
};

/// `type<TAB>phrase` per line.
ElementLexicon read_lexicon(const std::string& path);
ElementLexicon parse_lexicon(std::string_view text);

struct LengthHistogram {
  std::size_t bucket_width = 1;
  std::map<std::size_t, std::size_t> counts;  // bucket index -> captions
  std::size_t total = 0;
};

LengthHistogram length_histogram(const CaptionCorpus& corpus, std::size_t bucket_width);

struct MatchOptions {
  /// Strips common English suffixes before matching; off for reproduction runs.
  bool stem = false;
};

/// Percentage of captions with at least one whole-token phrase match, per type
/// present in the lexicon. Case-insensitive.
std::map<std::string, double> match_elements(const CaptionCorpus& corpus, const ElementLexicon& lexicon,
                                             const MatchOptions& options = {});

/// True when `phrase` occurs as a contiguous run of whole tokens in `tokens`.
bool contains_phrase(const std::vector<std::string>& tokens, const std::vector<std::string>& phrase);

struct DensityReport {
  std::vector<std::string> corpora;
  std::vector<std::string> types;
  /// percent[type][corpus index]
  std::map<std::string, std::vector<double>> percent;
  /// Mean over types, per corpus.
  std::vector<double> mean;
};

DensityReport density_report(const std::vector<std::pair<std::string, CaptionCorpus>>& corpora,
                             const ElementLexicon& lexicon, const MatchOptions& options = {});

std::string histogram_csv(const LengthHistogram& h);
std::string density_csv(const DensityReport& r);

}  // namespace dtlab
