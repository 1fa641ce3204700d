#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tacit {

// Prompt templates compiled in from prompts/*.txt, keyed by file stem.
// Throws NotFound for unknown names.
std::string_view prompt(std::string_view name);
std::vector<std::string> prompt_names();

// Template text with the trailing newline of the file removed.
std::string prompt_text(std::string_view name);

namespace detail {
const std::vector<std::pair<std::string_view, std::string_view>>& prompt_table();
}

}  // namespace tacit
