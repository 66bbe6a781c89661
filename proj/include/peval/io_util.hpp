#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include "peval/errors.hpp"

namespace peval {

// Shortest exact decimal form; every CSV writer uses this so artifacts are
// byte-identical across runs and worker counts.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << content;
    if (!out) throw ConfigError("write failed: " + path);
}

} // namespace peval
