#include "forge/filters.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>

#include "forge/error.hpp"

namespace forge::filters {

namespace {

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// byte length of the UTF-8 sequence starting at s[i]; 1 for invalid leads
std::size_t sequence_len(std::string_view s, std::size_t i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) return 1;
    for (std::size_t k = 1; k < len; ++k) {
        if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
    }
    return len;
}

std::size_t codepoint_count(std::string_view s) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.size(); i += sequence_len(s, i)) ++n;
    return n;
}

} // namespace

std::string clean_text(std::string_view text, const clean_config& cfg) {
    std::string cur(text);

    if (cfg.casing != case_mode::preserve) {
        for (char& c : cur) {
            const unsigned char u = static_cast<unsigned char>(c);
            if (u >= 0x80) continue;
            c = static_cast<char>(cfg.casing == case_mode::lower ? std::tolower(u) : std::toupper(u));
        }
    }

    if (cfg.remove_special_chars) {
        std::string kept;
        kept.reserve(cur.size());
        for (std::size_t i = 0; i < cur.size();) {
            const std::size_t len = sequence_len(cur, i);
            const unsigned char c = static_cast<unsigned char>(cur[i]);
            char_category cat;
            if (len > 1) {
                cat = char_category::non_ascii;
            } else if (is_space_byte(c)) {
                cat = char_category::whitespace;
            } else if (std::isalpha(c)) {
                cat = char_category::letter;
            } else if (std::isdigit(c)) {
                cat = char_category::digit;
            } else if (std::ispunct(c)) {
                cat = char_category::punctuation;
            } else {
                // control bytes and stray continuation bytes: drop
                i += len;
                continue;
            }
            if (cfg.allowed_categories.count(cat) > 0) kept.append(cur, i, len);
            i += len;
        }
        cur = std::move(kept);
    }

    if (cfg.strip_punctuation) {
        std::string kept;
        kept.reserve(cur.size());
        for (char c : cur) {
            if (!is_punct_byte(static_cast<unsigned char>(c))) kept.push_back(c);
        }
        cur = std::move(kept);
    }

    if (cfg.remove_stopwords) {
        std::string kept;
        std::size_t i = 0;
        while (i < cur.size()) {
            if (is_space_byte(static_cast<unsigned char>(cur[i]))) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < cur.size() && !is_space_byte(static_cast<unsigned char>(cur[j]))) ++j;
            std::string token = cur.substr(i, j - i);
            if (cfg.stopword_list.count(ascii_lower(token)) == 0) {
                if (!kept.empty()) kept.push_back(' ');
                kept += token;
            }
            i = j;
        }
        cur = std::move(kept);
    }

    if (cfg.collapse_whitespace) {
        std::string kept;
        kept.reserve(cur.size());
        bool in_run = false;
        for (char c : cur) {
            if (is_space_byte(static_cast<unsigned char>(c))) {
                in_run = true;
                continue;
            }
            if (in_run && !kept.empty()) kept.push_back(' ');
            in_run = false;
            kept.push_back(c);
        }
        cur = std::move(kept);
    }

    return cur;
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c) || is_punct_byte(c)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size()) {
            const unsigned char d = static_cast<unsigned char>(text[j]);
            if (is_space_byte(d) || is_punct_byte(d)) break;
            ++j;
        }
        out.push_back(ascii_lower(text.substr(i, j - i)));
        i = j;
    }
    return out;
}

filter_verdict profanity_filter(std::string_view text, const std::set<std::string>& wordlist) {
    filter_verdict v;
    v.filter_name = "profanity";
    for (const auto& token : word_tokens(text)) {
        if (wordlist.count(token) > 0) {
            v.keep = false;
            v.reason = "profanity:" + token;
            return v;
        }
    }
    return v;
}

filter_verdict quality_filter(std::string_view text, const quality_config& cfg) {
    filter_verdict v;
    v.filter_name = "quality";
    auto drop = [&](const char* reason) {
        v.keep = false;
        v.reason = reason;
        return v;
    };

    const std::size_t chars = codepoint_count(text);
    if (chars < cfg.min_chars) return drop("too_short");
    if (chars > cfg.max_chars) return drop("too_long");

    std::size_t run = 0;
    for (char c : text) {
        if (is_space_byte(static_cast<unsigned char>(c))) {
            if (++run > cfg.max_whitespace_run) return drop("whitespace_run");
        } else {
            run = 0;
        }
    }

    if (chars > 0) {
        std::size_t nonprintable = 0;
        for (std::size_t i = 0; i < text.size(); i += sequence_len(text, i)) {
            const unsigned char c = static_cast<unsigned char>(text[i]);
            if (c < 0x80 && (c < 0x20 || c == 0x7F) && c != '\t' && c != '\n' && c != '\r') {
                ++nonprintable;
            }
        }
        if (static_cast<double>(nonprintable) / static_cast<double>(chars) >
            cfg.max_nonprintable_ratio) {
            return drop("nonprintable_ratio");
        }
    }

    if (cfg.require_terminal_punctuation) {
        static const std::string_view terminal = ".!?\"')";
        std::size_t e = text.size();
        while (e > 0 && is_space_byte(static_cast<unsigned char>(text[e - 1]))) --e;
        if (e == 0 || terminal.find(text[e - 1]) == std::string_view::npos) {
            return drop("incomplete_sentence");
        }
    }
    return v;
}

std::string truncate_by_length(std::string_view text, std::size_t max_tokens,
                               const tokenizer& tok) {
    const auto spans = tok.split(text);
    if (spans.size() <= max_tokens) return std::string(text);
    if (max_tokens == 0) return "";
    return std::string(text.substr(0, spans[max_tokens - 1].end));
}

filter_verdict compression_ratio_filter(const corpus::doc_summary_pair& pair, double min_ratio,
                                        double max_ratio, const tokenizer& tok) {
    if (!(min_ratio > 0.0) || !(min_ratio <= max_ratio)) {
        throw error("bad_ratio_bounds", "need 0 < min_ratio <= max_ratio");
    }
    filter_verdict v;
    v.filter_name = "compression_ratio";
    const std::size_t summary_tokens = tok.count(pair.summary);
    if (summary_tokens == 0) {
        v.keep = false;
        v.reason = "empty_summary";
        return v;
    }
    const double ratio =
        static_cast<double>(tok.count(pair.document)) / static_cast<double>(summary_tokens);
    v.meta["ratio"] = std::to_string(ratio);
    if (ratio < min_ratio) {
        v.keep = false;
        v.reason = "ratio_low";
    } else if (ratio > max_ratio) {
        v.keep = false;
        v.reason = "ratio_high";
    }
    return v;
}

sparse_vector embed_text(std::string_view text) {
    sparse_vector vec;
    for (const auto& token : word_tokens(text)) {
        std::uint64_t h = 14695981039346656037ULL;
        for (unsigned char c : token) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        vec[static_cast<std::uint32_t>(h & 0xFFFFF)] += 1.0;
    }
    return vec;
}

double cosine(const sparse_vector& a, const sparse_vector& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [bucket, value] : a) {
        na += value * value;
        auto it = b.find(bucket);
        if (it != b.end()) dot += value * it->second;
    }
    for (const auto& [bucket, value] : b) nb += value * value;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

filter_verdict qa_similarity_filter(const corpus::qa_pair& pair, double threshold) {
    filter_verdict v;
    v.filter_name = "similarity";
    const double sim = cosine(embed_text(pair.input), embed_text(pair.output));
    v.meta["similarity"] = std::to_string(sim);
    if (sim < threshold) {
        v.keep = false;
        v.reason = "low_similarity";
    }
    return v;
}

std::set<std::string> load_wordlist(std::istream& in) {
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::size_t b = 0, e = line.size();
        while (b < e && is_space_byte(static_cast<unsigned char>(line[b]))) ++b;
        while (e > b && is_space_byte(static_cast<unsigned char>(line[e - 1]))) --e;
        if (e > b) out.insert(ascii_lower(std::string_view(line).substr(b, e - b)));
    }
    return out;
}

} // namespace forge::filters
