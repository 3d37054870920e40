#pragma once

#include <cctype>
#include <string>
#include <vector>

#include "xy/common.hpp"

namespace xy {

// character tokens: blank = 0, 'a'..'z' = 1..26, ' ' = 27
inline constexpr int kCharVocab = 27;

inline int char_to_id(char c) {
    if (c >= 'a' && c <= 'z') return c - 'a' + 1;
    if (c == ' ') return 27;
    XY_CHECK(false, std::string("character outside vocabulary: ") + c);
    return -1;
}

inline char id_to_char(int id) {
    if (id >= 1 && id <= 26) return static_cast<char>('a' + id - 1);
    if (id == 27) return ' ';
    XY_CHECK(false, "token id outside vocabulary: " + std::to_string(id));
    return '?';
}

// lowercase, map anything outside a-z to space, collapse runs, trim
inline std::string normalize_text(const std::string& raw) {
    std::string out;
    bool pending_space = false;
    for (char ch : raw) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (c >= 'a' && c <= 'z') {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        } else {
            pending_space = true;
        }
    }
    return out;
}

inline std::vector<int> text_to_ids(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(char_to_id(c));
    return ids;
}

inline std::string ids_to_text(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(id_to_char(id));
    return out;
}

}  // namespace xy
