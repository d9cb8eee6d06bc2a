// SPDX-License-Identifier: Apache-2.0
//
// Deterministic text formatting for artifacts that must be byte-stable
// across runs (metrics CSV, reports).

#pragma once

#include <charconv>
#include <string>

namespace loralab {

/// Shortest round-trip decimal representation.
inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace loralab
