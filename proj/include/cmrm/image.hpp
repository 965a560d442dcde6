#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cmrm/errors.hpp"

namespace cmrm {

/// Grayscale image, row-major doubles in [0, 1].
struct Image {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<double> px;

    Image() = default;
    Image(std::size_t height, std::size_t width, double fill = 0.0)
        : h(height), w(width), px(height * width, fill) {}

    double& at(std::size_t y, std::size_t x) { return px[y * w + x]; }
    double at(std::size_t y, std::size_t x) const { return px[y * w + x]; }

    void clamp01() {
        for (double& v : px) {
            v = std::clamp(v, 0.0, 1.0);
        }
    }

    double mean() const {
        double s = 0.0;
        for (double v : px) s += v;
        return px.empty() ? 0.0 : s / static_cast<double>(px.size());
    }

    double variance() const {
        const double m = mean();
        double s = 0.0;
        for (double v : px) s += (v - m) * (v - m);
        return px.empty() ? 0.0 : s / static_cast<double>(px.size());
    }
};

inline std::vector<std::uint8_t> quantize_u8(const Image& img) {
    std::vector<std::uint8_t> out(img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        const double v = std::clamp(img.px[i], 0.0, 1.0);
        out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

// Binary PGM (P5, maxval 255). Bit-exact, no codec involved.
inline void write_pgm(const std::filesystem::path& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for writing: " + path.string());
    }
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    const auto bytes = quantize_u8(img);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("short write: " + path.string());
    }
}

inline Image read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for reading: " + path.string());
    }
    std::string magic;
    f >> magic;
    if (magic != "P5") {
        throw IoError("not a P5 PGM: " + path.string());
    }
    // Skip whitespace and # comments between header tokens.
    auto next_int = [&]() -> long {
        int c = f.get();
        while (c == '#' || std::isspace(c)) {
            if (c == '#') {
                while (c != '\n' && c != EOF) c = f.get();
            }
            c = f.get();
        }
        f.unget();
        long v = 0;
        f >> v;
        return v;
    };
    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) {
        throw IoError("unsupported PGM header in " + path.string());
    }
    f.get(); // single whitespace byte before raster
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    std::vector<std::uint8_t> bytes(img.px.size());
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("truncated PGM raster: " + path.string());
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.px[i] = static_cast<double>(bytes[i]) / 255.0;
    }
    return img;
}

} // namespace cmrm
