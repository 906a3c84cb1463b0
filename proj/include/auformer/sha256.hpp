#pragma once

#include <string>

namespace auf {

// Hex digest of the input bytes.
std::string sha256_hex(const std::string& bytes);

}  // namespace auf
