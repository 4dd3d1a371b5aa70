#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "digan/errors.hpp"

namespace digan {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open file: " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Writes via a sibling temp file and renames, so readers never observe a
// partially written artifact.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw SchemaError("cannot write file: " + tmp.string());
        out << content;
        if (!out) throw SchemaError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace digan
