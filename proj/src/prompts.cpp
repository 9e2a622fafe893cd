#include "forge/prompts.hpp"

#include <vector>

#include "forge/error.hpp"

namespace forge::prompts {

void check_scheme(const prompt_scheme& scheme) {
    if (scheme.human_prefix.empty() || scheme.bot_prefix.empty()) {
        throw error("bad_scheme", "role prefixes must be non-empty");
    }
    if (scheme.human_prefix == scheme.bot_prefix) {
        throw error("bad_scheme", "human and bot prefixes must differ");
    }
    if (scheme.terminator.empty()) {
        throw error("bad_scheme", "terminator must be non-empty");
    }
}

namespace {

const std::string& prefix_for(const prompt_scheme& scheme, corpus::role who) {
    return who == corpus::role::human ? scheme.human_prefix : scheme.bot_prefix;
}

bool contains_marker(std::string_view body, const prompt_scheme& scheme) {
    return body.find(scheme.human_prefix) != std::string_view::npos ||
           body.find(scheme.bot_prefix) != std::string_view::npos ||
           body.find(scheme.terminator) != std::string_view::npos;
}

} // namespace

std::string format_conversation(const corpus::conversation_path& path,
                                const prompt_scheme& scheme) {
    check_scheme(scheme);
    if (auto violation = corpus::check_path(path)) {
        throw error("invalid_path", "cannot format path: " + *violation);
    }

    std::string out;
    for (std::size_t i = 0; i < path.messages.size(); ++i) {
        const auto& msg = path.messages[i];
        if (contains_marker(msg.text, scheme)) {
            throw error("ambiguous_markers",
                        "message body contains a marker; refusing to format");
        }
        if (i > 0) out += scheme.turn_separator;
        out += prefix_for(scheme, msg.who);
        out += msg.text;
    }
    out += scheme.turn_separator;
    out += scheme.terminator;
    return out;
}

corpus::conversation_path parse_formatted(std::string_view text, const prompt_scheme& scheme) {
    check_scheme(scheme);

    // strip the trailing separator + terminator
    if (text.size() < scheme.terminator.size() ||
        text.substr(text.size() - scheme.terminator.size()) != scheme.terminator) {
        throw error("unterminated", "formatted text must end with the terminator");
    }
    text.remove_suffix(scheme.terminator.size());
    if (text.size() < scheme.turn_separator.size() ||
        text.substr(text.size() - scheme.turn_separator.size()) != scheme.turn_separator) {
        throw error("invalid_format", "separator missing before the terminator");
    }
    text.remove_suffix(scheme.turn_separator.size());

    corpus::conversation_path path;
    const std::size_t sep_len = scheme.turn_separator.size();
    corpus::role expected = corpus::role::human;
    std::size_t pos = 0;
    while (pos < text.size() || path.messages.empty()) {
        const std::string& want = prefix_for(scheme, expected);
        const std::string& other = prefix_for(
            scheme, expected == corpus::role::human ? corpus::role::bot : corpus::role::human);
        if (text.substr(pos, want.size()) != want) {
            // under the format precondition, the only way to land on the
            // wrong prefix is a marker inside a body
            if (text.substr(pos, other.size()) == other) {
                throw error("ambiguous_markers", "role prefixes out of order");
            }
            throw error("invalid_format", "expected a role prefix");
        }
        const std::size_t body_start = pos + want.size();

        // earliest occurrence of either prefix past the body start marks
        // the next turn; it must be preceded by the separator
        std::size_t next = std::string_view::npos;
        const std::size_t h = text.find(scheme.human_prefix, body_start);
        const std::size_t b = text.find(scheme.bot_prefix, body_start);
        next = std::min(h, b);

        std::string body;
        if (next == std::string_view::npos) {
            body = std::string(text.substr(body_start));
            pos = text.size();
        } else {
            if (next < body_start + sep_len) {
                throw error("ambiguous_markers", "prefix found at the start of a message body");
            }
            if (text.substr(next - sep_len, sep_len) != scheme.turn_separator) {
                throw error("invalid_format", "separator missing between turns");
            }
            body = std::string(text.substr(body_start, next - sep_len - body_start));
            pos = next;
        }
        if (body.find(scheme.terminator) != std::string_view::npos) {
            throw error("ambiguous_markers", "terminator found inside a message body");
        }
        path.messages.push_back({expected, std::move(body), std::nullopt});
        expected = expected == corpus::role::human ? corpus::role::bot : corpus::role::human;
        if (next == std::string_view::npos) break;
    }

    if (auto violation = corpus::check_path(path)) {
        if (*violation == "unanswered_turn") throw error("unanswered_turn", "path ends in a human turn");
        throw error("invalid_format", "recovered path invalid: " + *violation);
    }
    return path;
}

std::string assemble_context(std::span<const corpus::message> history,
                             const std::string& new_prompt, const prompt_scheme& scheme,
                             std::size_t budget_tokens, const tokenizer& tok) {
    check_scheme(scheme);
    if (history.size() % 2 != 0) {
        throw error("invalid_path", "history must be complete human/bot exchanges");
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto expected = i % 2 == 0 ? corpus::role::human : corpus::role::bot;
        if (history[i].who != expected) {
            throw error("invalid_path", "history must alternate starting with a human turn");
        }
        if (contains_marker(history[i].text, scheme)) {
            throw error("ambiguous_markers", "history turn contains a marker");
        }
    }
    if (contains_marker(new_prompt, scheme)) {
        throw error("ambiguous_markers", "prompt contains a marker");
    }

    auto render = [&](std::size_t first_turn) {
        std::string out;
        for (std::size_t i = first_turn; i < history.size(); ++i) {
            out += prefix_for(scheme, history[i].who);
            out += history[i].text;
            out += scheme.turn_separator;
        }
        out += scheme.human_prefix;
        out += new_prompt;
        out += scheme.turn_separator;
        out += scheme.terminator;
        return out;
    };

    // drop whole oldest exchanges (two turns at a time) until within budget
    for (std::size_t first = 0; first <= history.size(); first += 2) {
        std::string candidate = render(first);
        if (tok.count(candidate) <= budget_tokens) return candidate;
    }
    throw error("prompt_too_large", "prompt alone exceeds the token budget");
}

} // namespace forge::prompts
