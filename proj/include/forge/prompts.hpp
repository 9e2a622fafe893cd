#pragma once

#include <span>
#include <string>
#include <string_view>

#include "forge/corpus.hpp"
#include "forge/tokenize.hpp"

namespace forge::prompts {

// Marker configuration for training-text formatting. The terminator ends
// every formatted conversation so the model learns where a response stops.
struct prompt_scheme {
    std::string human_prefix = "<human>: ";
    std::string bot_prefix = "<bot>: ";
    std::string turn_separator = " ";
    std::string terminator = "<human>:";
};

// throws error("bad_scheme") for empty or equal prefixes / empty terminator
void check_scheme(const prompt_scheme& scheme);

// Turn a valid path (alternating, human first, bot last) into training
// text: role prefix + message text per turn, joined by the separator, then
// separator + terminator. Message bodies containing any of the markers are
// refused (ambiguous_markers) rather than escaped.
std::string format_conversation(const corpus::conversation_path& path,
                                const prompt_scheme& scheme = {});

// Inverse of format_conversation on its valid domain.
// Errors: unterminated, unanswered_turn, ambiguous_markers, invalid_format.
corpus::conversation_path parse_formatted(std::string_view text,
                                          const prompt_scheme& scheme = {});

// Build a generation-time context: formatted history exchanges, then the
// new human turn, then the terminator. Whole oldest exchanges are dropped
// first until the token count fits the budget; exchanges are never split.
// history must be complete exchanges (alternating, human first, even count).
// Errors: invalid_path, prompt_too_large.
std::string assemble_context(std::span<const corpus::message> history,
                             const std::string& new_prompt, const prompt_scheme& scheme,
                             std::size_t budget_tokens, const tokenizer& tok);

} // namespace forge::prompts
