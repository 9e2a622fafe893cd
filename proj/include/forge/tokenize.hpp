#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace forge {

// Byte-offset span of one token within the original text.
// The token text is text.substr(begin, end - begin).
struct token_span {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const token_span&) const = default;
};

// Offset-preserving tokenizer interface. Implementations must be stateless
// (usable concurrently) and must produce non-overlapping, ascending spans.
class tokenizer {
public:
    virtual ~tokenizer() = default;

    virtual std::vector<token_span> split(std::string_view text) const = 0;

    virtual std::size_t count(std::string_view text) const { return split(text).size(); }
};

// Default tokenizer: maximal runs of non-whitespace, split further so that
// each ASCII punctuation character is its own token. Bytes >= 0x80 (UTF-8
// continuations and lead bytes) count as word characters, so multibyte
// codepoints are never split.
class default_tokenizer final : public tokenizer {
public:
    std::vector<token_span> split(std::string_view text) const override;
};

// Crude byte-budget fallback: fixed chunks of 4 bytes, count = ceil(len/4).
class bytes4_tokenizer final : public tokenizer {
public:
    std::vector<token_span> split(std::string_view text) const override;
    std::size_t count(std::string_view text) const override { return (text.size() + 3) / 4; }
};

// Shared default instance.
const tokenizer& default_tokenize();

// Convenience form of the default split.
std::vector<token_span> default_tokenize(std::string_view text);

// name: "default" or "bytes4"; throws error("unknown_tokenizer") otherwise.
std::unique_ptr<tokenizer> make_tokenizer(const std::string& name);

} // namespace forge
