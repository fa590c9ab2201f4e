#include "dtlab/caption_analysis.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace dtlab {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u) || std::ispunct(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaptionError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    fn(line, line_no);
  }
}

std::string stem(const std::string& w) {
  auto ends = [&](std::string_view s) { return w.size() > s.size() + 2 && w.ends_with(s); };
  if (ends("ing")) return w.substr(0, w.size() - 3);
  if (ends("ed")) return w.substr(0, w.size() - 2);
  if (ends("es")) return w.substr(0, w.size() - 2);
  if (w.size() > 3 && w.back() == 's' && !w.ends_with("ss")) return w.substr(0, w.size() - 1);
  return w;
}

std::vector<std::string> normalize(std::string_view text, const MatchOptions& opt) {
  auto toks = tokenize(text);
  if (opt.stem) {
    for (auto& t : toks) t = stem(t);
  }
  return toks;
}

}  // namespace

CaptionCorpus parse_corpus(std::string_view text) {
  CaptionCorpus corpus;
  for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw CaptionError(fmt::format("corpus line {}: expected source<TAB>caption", no));
    std::string caption(line.substr(tab + 1));
    if (tokenize(caption).empty()) throw CaptionError(fmt::format("corpus line {}: empty caption", no));
    corpus.push_back({std::string(line.substr(0, tab)), std::move(caption)});
  });
  return corpus;
}

CaptionCorpus read_corpus(const std::string& path) { return parse_corpus(read_file(path)); }

const std::vector<std::string>& element_types() {
  static const std::vector<std::string> types = {"animal/human", "object",   "location", "activity",
                                                 "color",        "spatial",  "attribute", "food",
                                                 "counting",     "material", "shape",     "other"};
  return types;
}

void ElementLexicon::add(const std::string& type, const std::string& phrase) {
  const auto toks = tokenize(phrase);
  if (type.empty() || toks.empty()) throw CaptionError("lexicon entries need a type and a non-empty phrase");
  std::string joined;
  for (const auto& t : toks) joined += (joined.empty() ? "" : " ") + t;
  auto& list = phrases[type];
  if (std::find(list.begin(), list.end(), joined) == list.end()) list.push_back(std::move(joined));
}

std::size_t ElementLexicon::size() const {
  std::size_t n = 0;
  for (const auto& [t, p] : phrases) n += p.size();
  return n;
}

std::vector<std::string> ElementLexicon::types() const {
  std::vector<std::string> out;
  for (const auto& t : element_types()) {
    if (phrases.count(t)) out.push_back(t);
  }
  for (const auto& [t, p] : phrases) {
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

ElementLexicon parse_lexicon(std::string_view text) {
  ElementLexicon lex;
  for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw CaptionError(fmt::format("lexicon line {}: expected type<TAB>phrase", no));
    lex.add(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1)));
  });
  return lex;
}

ElementLexicon read_lexicon(const std::string& path) { return parse_lexicon(read_file(path)); }

LengthHistogram length_histogram(const CaptionCorpus& corpus, std::size_t bucket_width) {
  if (bucket_width == 0) throw CaptionError("bucket width must be at least 1");
  if (corpus.empty()) throw CaptionError("length histogram of an empty corpus");
  LengthHistogram h;
  h.bucket_width = bucket_width;
  for (const auto& c : corpus) ++h.counts[tokenize(c.text).size() / bucket_width];
  h.total = corpus.size();
  return h;
}

bool contains_phrase(const std::vector<std::string>& tokens, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > tokens.size()) return false;
  return std::search(tokens.begin(), tokens.end(), phrase.begin(), phrase.end()) != tokens.end();
}

std::map<std::string, double> match_elements(const CaptionCorpus& corpus, const ElementLexicon& lexicon,
                                             const MatchOptions& opt) {
  if (lexicon.empty()) throw CaptionError("empty lexicon");
  std::map<std::string, std::vector<std::vector<std::string>>> compiled;
  for (const auto& [type, list] : lexicon.phrases) {
    for (const auto& p : list) compiled[type].push_back(normalize(p, opt));
  }
  std::map<std::string, double> out;
  for (const auto& type : lexicon.types()) out[type] = 0.0;
  if (corpus.empty()) return out;
  std::map<std::string, std::size_t> hits;
  for (const auto& c : corpus) {
    const auto toks = normalize(c.text, opt);
    for (const auto& [type, list] : compiled) {
      if (std::any_of(list.begin(), list.end(), [&](const auto& p) { return contains_phrase(toks, p); })) ++hits[type];
    }
  }
  for (auto& [type, pct] : out) pct = 100.0 * static_cast<double>(hits[type]) / static_cast<double>(corpus.size());
  return out;
}

DensityReport density_report(const std::vector<std::pair<std::string, CaptionCorpus>>& corpora,
                             const ElementLexicon& lexicon, const MatchOptions& opt) {
  if (corpora.size() < 2) throw CaptionError("density report needs at least two corpora");
  DensityReport r;
  r.types = lexicon.types();
  for (const auto& t : r.types) r.percent[t].assign(corpora.size(), 0.0);
  r.mean.assign(corpora.size(), 0.0);
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    r.corpora.push_back(corpora[i].first);
    const auto m = match_elements(corpora[i].second, lexicon, opt);
    double sum = 0.0;
    for (const auto& t : r.types) {
      r.percent[t][i] = m.at(t);
      sum += m.at(t);
    }
    r.mean[i] = r.types.empty() ? 0.0 : sum / static_cast<double>(r.types.size());
  }
  return r;
}

std::string histogram_csv(const LengthHistogram& h) {
  std::string out = "bucket_start,bucket_end,count\n";
  for (const auto& [b, n] : h.counts) {
    out += fmt::format("{},{},{}\n", b * h.bucket_width, (b + 1) * h.bucket_width, n);
  }
  return out;
}

std::string density_csv(const DensityReport& r) {
  std::string out = "type";
  for (const auto& c : r.corpora) out += "," + c;
  out += "\n";
  for (const auto& t : r.types) {
    out += t;
    for (double v : r.percent.at(t)) out += fmt::format(",{:.4f}", v);
    out += "\n";
  }
  out += "mean";
  for (double v : r.mean) out += fmt::format(",{:.4f}", v);
  out += "\n";
  return out;
}

}  // namespace dtlab
