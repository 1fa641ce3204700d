#include "tacit/prompts.hpp"

#include "tacit/error.hpp"

namespace tacit {

std::string_view prompt(std::string_view name) {
    for (const auto& [n, text] : detail::prompt_table()) {
        if (n == name) return text;
    }
    throw not_found("unknown prompt template: " + std::string(name));
}

std::vector<std::string> prompt_names() {
    std::vector<std::string> out;
    for (const auto& [n, _] : detail::prompt_table()) out.emplace_back(n);
    return out;
}

std::string prompt_text(std::string_view name) {
    std::string s(prompt(name));
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace tacit
