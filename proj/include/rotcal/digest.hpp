#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace rotcal {

// SHA-256 of a byte span / file contents, lowercase hex.
std::string sha256_hex(std::span<const unsigned char> data);
std::string sha256_hex(const std::string& text);
std::string sha256_file_hex(const std::string& path);

}  // namespace rotcal
