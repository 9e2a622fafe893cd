#include "forge/tokenize.hpp"

#include <algorithm>
#include <cctype>

#include "forge/error.hpp"

namespace forge {

namespace {

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct_byte(unsigned char c) {
    // ASCII punctuation only; bytes >= 0x80 are word characters.
    return c < 0x80 && (std::ispunct(c) != 0);
}

} // namespace

std::vector<token_span> default_tokenizer::split(std::string_view text) const {
    std::vector<token_span> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
            continue;
        }
        if (is_punct_byte(c)) {
            out.push_back({i, i + 1});
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < n) {
            const unsigned char d = static_cast<unsigned char>(text[j]);
            if (is_space_byte(d) || is_punct_byte(d)) break;
            ++j;
        }
        out.push_back({i, j});
        i = j;
    }
    return out;
}

std::vector<token_span> bytes4_tokenizer::split(std::string_view text) const {
    std::vector<token_span> out;
    out.reserve((text.size() + 3) / 4);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        out.push_back({i, std::min(i + 4, text.size())});
    }
    return out;
}

const tokenizer& default_tokenize() {
    static const default_tokenizer instance;
    return instance;
}

std::vector<token_span> default_tokenize(std::string_view text) {
    return default_tokenize().split(text);
}

std::unique_ptr<tokenizer> make_tokenizer(const std::string& name) {
    if (name == "default") return std::make_unique<default_tokenizer>();
    if (name == "bytes4") return std::make_unique<bytes4_tokenizer>();
    throw error("unknown_tokenizer", "unknown tokenizer name: " + name);
}

} // namespace forge
