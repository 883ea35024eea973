#pragma once

#include <string>

namespace cbfkit {

// Throws std::runtime_error when the file cannot be read.
std::string read_text_file(const std::string& path);

// Write-temp-then-rename so readers never observe a partial file. Throws
// std::runtime_error on I/O failure.
void write_text_file_atomic(const std::string& path, const std::string& content);

// Shortest decimal that round-trips the double (%.17g trimmed).
std::string format_double(double v);

}  // namespace cbfkit
