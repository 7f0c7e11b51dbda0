#pragma once

#include <string>

namespace gangeal {

std::string base64_encode(const std::string& bytes);
/// Accepts standard padded base64, optionally behind a "data:...;base64," prefix.
/// Throws std::invalid_argument on malformed input.
std::string base64_decode(const std::string& text);

} // namespace gangeal
