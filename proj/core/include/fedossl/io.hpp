#pragma once

#include <string>
#include <vector>

namespace fedossl {

// Write content to path via a sibling temp file + rename, so readers never
// observe a half-written artifact.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

// Shortest decimal form that round-trips a 64-bit real (%.17g).
std::string format_double(double v);

// Hexadecimal float literal (%a): exact, bitwise round-trip via strtod.
std::string format_hex(double v);

void ensure_directory(const std::string& path);

bool file_exists(const std::string& path);

std::vector<std::string> split(const std::string& s, char delim);

} // namespace fedossl
