#pragma once

#include <string>
#include <string_view>

namespace curator::text {

// Lowercases (Unicode simple case mapping via the C.UTF-8 ctype facet),
// collapses whitespace runs to one ASCII space and trims both ends.
// Invalid UTF-8 bytes are passed through unchanged.
std::string normalize_title(std::string_view s);

// Contiguous-substring test on normalized forms.
bool title_contains(std::string_view title, std::string_view name);

std::string trim(std::string_view s);

} // namespace curator::text
