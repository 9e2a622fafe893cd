#include "forge/budget.hpp"

#include <limits>
#include <vector>

#include "forge/error.hpp"
#include "forge/filters.hpp"

namespace forge::budget {

pad_result pad_sequence(std::string_view text, const budget_config& cfg, const tokenizer& tok) {
    pad_result out;
    out.text = std::string(text);
    if (!cfg.pad_to_max) return out;
    const std::size_t have = tok.count(text);
    if (have >= cfg.context_tokens) return out;
    out.pad_count = cfg.context_tokens - have;
    for (std::size_t i = 0; i < out.pad_count; ++i) {
        if (!out.text.empty()) out.text.push_back(' ');
        out.text += cfg.pad_symbol;
    }
    return out;
}

corpus::conversation_path truncate_by_score(const corpus::conversation_path& path,
                                            std::size_t budget_tokens,
                                            const prompts::prompt_scheme& scheme,
                                            const tokenizer& tok) {
    if (auto violation = corpus::check_path(path)) {
        throw error("invalid_path", "truncate_by_score requires a valid path: " + *violation);
    }

    struct exchange {
        corpus::message human;
        corpus::message bot;
        double score;
    };
    std::vector<exchange> exchanges;
    for (std::size_t i = 0; i + 1 < path.messages.size(); i += 2) {
        const auto& h = path.messages[i];
        const auto& b = path.messages[i + 1];
        const double score = std::min(h.turn_score.value_or(0.0), b.turn_score.value_or(0.0));
        exchanges.push_back({h, b, score});
    }

    auto rebuild = [&](const std::vector<exchange>& list) {
        corpus::conversation_path p;
        for (const auto& e : list) {
            p.messages.push_back(e.human);
            p.messages.push_back(e.bot);
        }
        return p;
    };

    while (true) {
        const corpus::conversation_path candidate = rebuild(exchanges);
        if (tok.count(prompts::format_conversation(candidate, scheme)) <= budget_tokens) {
            return candidate;
        }
        if (exchanges.size() <= 1) {
            throw error("cannot_fit", "final exchange alone exceeds the token budget");
        }
        // lowest score first, earliest on ties; the final exchange stays
        std::size_t victim = 0;
        for (std::size_t i = 1; i + 1 < exchanges.size(); ++i) {
            if (exchanges[i].score < exchanges[victim].score) victim = i;
        }
        exchanges.erase(exchanges.begin() + static_cast<std::ptrdiff_t>(victim));
    }
}

std::string fit_to_context(std::string_view text, const budget_config& cfg, const tokenizer& tok) {
    const std::string truncated = filters::truncate_by_length(text, cfg.context_tokens, tok);
    return pad_sequence(truncated, cfg, tok).text;
}

} // namespace forge::budget
