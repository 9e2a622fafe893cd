#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/tokenize.hpp"

namespace forge::filters {

enum class case_mode { preserve, lower, upper };

// character classes used by special-character removal; control characters
// are never listable and are always removed when the pass is enabled
enum class char_category { letter, digit, whitespace, punctuation, non_ascii };

struct clean_config {
    case_mode casing = case_mode::preserve;
    bool remove_special_chars = false;
    std::set<char_category> allowed_categories = {char_category::letter, char_category::digit,
                                                  char_category::whitespace,
                                                  char_category::punctuation};
    bool strip_punctuation = false;
    bool remove_stopwords = false;
    std::set<std::string> stopword_list; // lowercase
    bool collapse_whitespace = false;
};

// Applies the enabled passes in a fixed order: case handling, special-char
// removal, punctuation strip, stopword removal (whitespace tokens rejoined
// with single spaces), whitespace collapse. Idempotent for any config.
// Case handling is ASCII-only; non-ASCII codepoints are removed or kept
// whole, never split.
std::string clean_text(std::string_view text, const clean_config& cfg);

struct filter_verdict {
    bool keep = true;
    std::optional<std::string> reason; // present iff keep == false
    std::string filter_name;
    std::map<std::string, std::string> meta;
};

// drop iff any whitespace/punctuation-delimited token, lowercased, is in
// the (lowercase) wordlist; reason names the first matching token
filter_verdict profanity_filter(std::string_view text, const std::set<std::string>& wordlist);

struct quality_config {
    std::size_t min_chars = 1;
    std::size_t max_chars = 100000;
    std::size_t max_whitespace_run = 32;
    double max_nonprintable_ratio = 0.05;
    bool require_terminal_punctuation = true;
};

// Structural checks with a fixed reason precedence: too_short, too_long,
// whitespace_run, nonprintable_ratio, incomplete_sentence. Lengths are in
// codepoints; nonprintable means control characters other than \t \n \r.
filter_verdict quality_filter(std::string_view text, const quality_config& cfg);

// Longest prefix of the token sequence with at most max_tokens tokens,
// taken as the byte prefix through the end of the last kept token. Inputs
// already within budget are returned unchanged.
std::string truncate_by_length(std::string_view text, std::size_t max_tokens,
                               const tokenizer& tok);

// keep iff min_ratio <= tokens(document)/tokens(summary) <= max_ratio;
// reasons: empty_summary, ratio_low, ratio_high
filter_verdict compression_ratio_filter(const corpus::doc_summary_pair& pair, double min_ratio,
                                        double max_ratio, const tokenizer& tok);

// term-count vector hashed into 2^20 buckets (FNV-1a 64-bit over the
// lowercase token bytes); deterministic, all entries non-negative
using sparse_vector = std::map<std::uint32_t, double>;
sparse_vector embed_text(std::string_view text);

// 0 when either vector is zero; in [0,1] for non-negative vectors
double cosine(const sparse_vector& a, const sparse_vector& b);

// keep iff cosine(embed(input), embed(output)) >= threshold; the verdict
// carries the similarity in meta["similarity"]
filter_verdict qa_similarity_filter(const corpus::qa_pair& pair, double threshold);

// lowercase maximal runs delimited by whitespace and ASCII punctuation
std::vector<std::string> word_tokens(std::string_view text);

// one token per line, '#' starts a comment, tokens lowercased
std::set<std::string> load_wordlist(std::istream& in);

} // namespace forge::filters
