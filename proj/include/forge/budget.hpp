#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "forge/corpus.hpp"
#include "forge/prompts.hpp"
#include "forge/tokenize.hpp"

namespace forge::budget {

struct budget_config {
    std::size_t context_tokens = 2048;
    std::string pad_symbol = "<pad>";
    bool pad_to_max = false;
};

struct pad_result {
    std::string text;
    std::size_t pad_count = 0;
};

// Appends (context_tokens - count) pad symbols, space separated, when
// pad_to_max is set and the text is under budget. Texts at or over budget
// come back unchanged. The token-count equality contract assumes the pad
// symbol is a single token under the active tokenizer.
pad_result pad_sequence(std::string_view text, const budget_config& cfg, const tokenizer& tok);

// Removes whole exchanges (human+bot pairs) until the formatted path fits
// the budget: lowest exchange score first (min of the pair's turn scores,
// unscored turns count as 0), earliest on ties. The final exchange is
// never removed; error cannot_fit when it alone exceeds the budget.
corpus::conversation_path truncate_by_score(const corpus::conversation_path& path,
                                            std::size_t budget_tokens,
                                            const prompts::prompt_scheme& scheme,
                                            const tokenizer& tok);

// truncate_by_length to context_tokens, then pad_sequence
std::string fit_to_context(std::string_view text, const budget_config& cfg, const tokenizer& tok);

} // namespace forge::budget
