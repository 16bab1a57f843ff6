#pragma once

#include <span>
#include <string>
#include <string_view>

namespace upil {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace upil
