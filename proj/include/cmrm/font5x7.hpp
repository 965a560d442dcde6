#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "cmrm/errors.hpp"

namespace cmrm {

// Plate alphabet, and the first 36 ids of the decoder vocabulary.
inline const std::string& plate_alphabet() {
    static const std::string a = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    return a;
}

inline bool in_plate_alphabet(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline std::size_t alphabet_index(char c) {
    if (c >= 'A' && c <= 'Z') {
        return static_cast<std::size_t>(c - 'A');
    }
    if (c >= '0' && c <= '9') {
        return 26u + static_cast<std::size_t>(c - '0');
    }
    throw DataError(std::string("character '") + c + "' is not in the plate alphabet");
}

// Classic 5x7 dot-matrix font, column bytes, bit 0 = top row.
// Order matches plate_alphabet(): A..Z then 0..9.
inline const std::array<std::array<std::uint8_t, 5>, 36>& font5x7() {
    static const std::array<std::array<std::uint8_t, 5>, 36> glyphs = {{
        {0x7E, 0x11, 0x11, 0x11, 0x7E}, // A
        {0x7F, 0x49, 0x49, 0x49, 0x36}, // B
        {0x3E, 0x41, 0x41, 0x41, 0x22}, // C
        {0x7F, 0x41, 0x41, 0x22, 0x1C}, // D
        {0x7F, 0x49, 0x49, 0x49, 0x41}, // E
        {0x7F, 0x09, 0x09, 0x09, 0x01}, // F
        {0x3E, 0x41, 0x49, 0x49, 0x7A}, // G
        {0x7F, 0x08, 0x08, 0x08, 0x7F}, // H
        {0x00, 0x41, 0x7F, 0x41, 0x00}, // I
        {0x20, 0x40, 0x41, 0x3F, 0x01}, // J
        {0x7F, 0x08, 0x14, 0x22, 0x41}, // K
        {0x7F, 0x40, 0x40, 0x40, 0x40}, // L
        {0x7F, 0x02, 0x0C, 0x02, 0x7F}, // M
        {0x7F, 0x04, 0x08, 0x10, 0x7F}, // N
        {0x3E, 0x41, 0x41, 0x41, 0x3E}, // O
        {0x7F, 0x09, 0x09, 0x09, 0x06}, // P
        {0x3E, 0x41, 0x51, 0x21, 0x5E}, // Q
        {0x7F, 0x09, 0x19, 0x29, 0x46}, // R
        {0x46, 0x49, 0x49, 0x49, 0x31}, // S
        {0x01, 0x01, 0x7F, 0x01, 0x01}, // T
        {0x3F, 0x40, 0x40, 0x40, 0x3F}, // U
        {0x1F, 0x20, 0x40, 0x20, 0x1F}, // V
        {0x3F, 0x40, 0x38, 0x40, 0x3F}, // W
        {0x63, 0x14, 0x08, 0x14, 0x63}, // X
        {0x07, 0x08, 0x70, 0x08, 0x07}, // Y
        {0x61, 0x51, 0x49, 0x45, 0x43}, // Z
        {0x3E, 0x51, 0x49, 0x45, 0x3E}, // 0
        {0x00, 0x42, 0x7F, 0x40, 0x00}, // 1
        {0x42, 0x61, 0x51, 0x49, 0x46}, // 2
        {0x21, 0x41, 0x45, 0x4B, 0x31}, // 3
        {0x18, 0x14, 0x12, 0x7F, 0x10}, // 4
        {0x27, 0x45, 0x45, 0x45, 0x39}, // 5
        {0x3C, 0x4A, 0x49, 0x49, 0x30}, // 6
        {0x01, 0x71, 0x09, 0x05, 0x03}, // 7
        {0x36, 0x49, 0x49, 0x49, 0x36}, // 8
        {0x06, 0x49, 0x49, 0x29, 0x1E}, // 9
    }};
    return glyphs;
}

inline bool glyph_pixel(char c, std::size_t row, std::size_t col) {
    const auto& g = font5x7()[alphabet_index(c)];
    return (g[col] >> row) & 1u;
}

} // namespace cmrm
