#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmrm/errors.hpp"
#include "cmrm/font5x7.hpp"
#include "cmrm/image.hpp"
#include "cmrm/rng.hpp"

namespace cmrm {

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

// Fixed geometry for the synthetic plates: K glyph slots left to right, 5x7
// font scaled x2, dark ink on a light background. Shared by the renderer and
// the slot-diff tests.
struct SlotGeometry {
    std::size_t slot_w;    // horizontal extent of one character slot
    std::size_t margin_x;  // left margin before slot 0
    std::size_t glyph_w;   // scaled glyph width
    std::size_t glyph_h;   // scaled glyph height
    std::size_t glyph_y0;  // top of every glyph
    std::size_t glyph_x0(std::size_t slot) const {
        return margin_x + slot * slot_w + (slot_w - glyph_w) / 2;
    }
    std::size_t slot_x0(std::size_t slot) const { return margin_x + slot * slot_w; }
    std::size_t slot_x1(std::size_t slot) const { return margin_x + (slot + 1) * slot_w; }
};

inline SlotGeometry slot_geometry(std::size_t img_h, std::size_t img_w, std::size_t k,
                                  std::size_t scale = 2) {
    SlotGeometry g;
    g.slot_w = img_w * 7 / 8 / k; // use ~7/8 of the width for slots
    g.margin_x = (img_w - g.slot_w * k) / 2;
    g.glyph_w = 5 * scale;
    g.glyph_h = 7 * scale;
    if (g.glyph_w > g.slot_w || g.glyph_h > img_h) {
        throw ConfigError("plate geometry does not fit: image " + std::to_string(img_w) + "x" +
                          std::to_string(img_h) + ", k=" + std::to_string(k));
    }
    g.glyph_y0 = (img_h - g.glyph_h) / 2;
    return g;
}

/// Deterministic clean render: same label, same bytes. Glyphs never leave
/// their slot's bounding box.
inline Image render_plate(const std::string& label, std::size_t img_h = 32,
                          std::size_t img_w = 96, std::size_t k = 7) {
    if (label.size() != k) {
        throw DataError("label '" + label + "' has length " + std::to_string(label.size()) +
                        ", expected " + std::to_string(k));
    }
    for (char c : label) {
        if (!in_plate_alphabet(c)) {
            throw DataError(std::string("label character '") + c + "' is not in the alphabet");
        }
    }
    const std::size_t scale = 2;
    const SlotGeometry g = slot_geometry(img_h, img_w, k, scale);
    Image img(img_h, img_w, 0.85);
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t x0 = g.glyph_x0(s);
        for (std::size_t r = 0; r < 7; ++r) {
            for (std::size_t c = 0; c < 5; ++c) {
                if (!glyph_pixel(label[s], r, c)) {
                    continue;
                }
                for (std::size_t dy = 0; dy < scale; ++dy) {
                    for (std::size_t dx = 0; dx < scale; ++dx) {
                        img.at(g.glyph_y0 + r * scale + dy, x0 + c * scale + dx) = 0.10;
                    }
                }
            }
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// degradation
// ---------------------------------------------------------------------------

/// Parameterized corruption: Gaussian blur, motion blur, defocus, resolution
/// loss, sensor noise, illumination ramp. Zero/one values mean "stage off".
struct DegradationRecipe {
    double gaussian_sigma = 0.0; // [0, 2.5]
    int motion_len = 0;          // odd, {0,3,5,7,9}
    double motion_angle = 0.0;   // degrees, [0, 180)
    int defocus_radius = 0;      // {0,1,2,3}
    int downsample = 1;          // {1,2,4}
    double noise_sigma = 0.0;    // [0, 0.05]
    double illum_slope = 0.0;    // [-0.4, 0.4]

    bool is_identity() const {
        return gaussian_sigma == 0.0 && motion_len == 0 && defocus_radius == 0 &&
               downsample == 1 && noise_sigma == 0.0 && illum_slope == 0.0;
    }

    void validate() const {
        auto fail = [](const std::string& what) { throw DataError("recipe: " + what); };
        if (gaussian_sigma < 0.0 || gaussian_sigma > 2.5) fail("gaussian_sigma out of [0, 2.5]");
        if (motion_len != 0 && (motion_len < 3 || motion_len > 9 || motion_len % 2 == 0))
            fail("motion_len not in {0,3,5,7,9}");
        if (motion_angle < 0.0 || motion_angle >= 180.0) fail("motion_angle out of [0, 180)");
        if (defocus_radius < 0 || defocus_radius > 3) fail("defocus_radius out of {0..3}");
        if (downsample != 1 && downsample != 2 && downsample != 4) fail("downsample not in {1,2,4}");
        if (noise_sigma < 0.0 || noise_sigma > 0.05) fail("noise_sigma out of [0, 0.05]");
        if (illum_slope < -0.4 || illum_slope > 0.4) fail("illum_slope out of [-0.4, 0.4]");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"defocus_radius", defocus_radius},
                              {"downsample", downsample},
                              {"gaussian_sigma", gaussian_sigma},
                              {"illum_slope", illum_slope},
                              {"motion_angle", motion_angle},
                              {"motion_len", motion_len},
                              {"noise_sigma", noise_sigma}};
    }

    static DegradationRecipe from_json(const nlohmann::json& j) {
        DegradationRecipe r;
        r.gaussian_sigma = j.at("gaussian_sigma").get<double>();
        r.motion_len = j.at("motion_len").get<int>();
        r.motion_angle = j.at("motion_angle").get<double>();
        r.defocus_radius = j.at("defocus_radius").get<int>();
        r.downsample = j.at("downsample").get<int>();
        r.noise_sigma = j.at("noise_sigma").get<double>();
        r.illum_slope = j.at("illum_slope").get<double>();
        r.validate();
        return r;
    }
};

namespace detail {

// 2-D convolution with replicate padding. Kernel must sum to 1.
inline Image convolve_replicate(const Image& img, const std::vector<double>& kernel,
                                std::size_t kh, std::size_t kw) {
    Image out(img.h, img.w);
    const long cy = static_cast<long>(kh) / 2;
    const long cx = static_cast<long>(kw) / 2;
    for (long y = 0; y < static_cast<long>(img.h); ++y) {
        for (long x = 0; x < static_cast<long>(img.w); ++x) {
            double acc = 0.0;
            for (long ky = 0; ky < static_cast<long>(kh); ++ky) {
                const long sy = std::clamp(y + ky - cy, 0l, static_cast<long>(img.h) - 1);
                for (long kx = 0; kx < static_cast<long>(kw); ++kx) {
                    const long sx = std::clamp(x + kx - cx, 0l, static_cast<long>(img.w) - 1);
                    acc += kernel[static_cast<std::size_t>(ky) * kw + static_cast<std::size_t>(kx)] *
                           img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                }
            }
            out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
        }
    }
    return out;
}

inline std::vector<double> normalized(std::vector<double> k) {
    double s = 0.0;
    for (double v : k) s += v;
    for (double& v : k) v /= s;
    return k;
}

inline std::vector<double> gaussian_kernel_1d(double sigma) {
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    for (long i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] =
            std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    }
    return normalized(std::move(k));
}

// Line of `len` unit taps through the kernel center at `angle_deg`.
inline std::vector<double> motion_kernel(int len, double angle_deg, std::size_t& kh,
                                         std::size_t& kw) {
    kh = kw = static_cast<std::size_t>(len);
    std::vector<double> k(kh * kw, 0.0);
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double c = (len - 1) / 2.0;
    for (int s = 0; s < len; ++s) {
        const double t = s - c;
        const long x = std::lround(c + t * std::cos(th));
        const long y = std::lround(c + t * std::sin(th));
        const long xi = std::clamp(x, 0l, static_cast<long>(len) - 1);
        const long yi = std::clamp(y, 0l, static_cast<long>(len) - 1);
        k[static_cast<std::size_t>(yi) * kw + static_cast<std::size_t>(xi)] += 1.0;
    }
    return normalized(std::move(k));
}

inline std::vector<double> disk_kernel(int radius, std::size_t& kh, std::size_t& kw) {
    const int n = 2 * radius + 1;
    kh = kw = static_cast<std::size_t>(n);
    std::vector<double> k(kh * kw, 0.0);
    for (int y = -radius; y <= radius; ++y) {
        for (int x = -radius; x <= radius; ++x) {
            if (x * x + y * y <= radius * radius) {
                k[static_cast<std::size_t>(y + radius) * kw + static_cast<std::size_t>(x + radius)] = 1.0;
            }
        }
    }
    return normalized(std::move(k));
}

} // namespace detail

/// Applies the canonical degradation order: gaussian -> motion -> defocus ->
/// resolution -> noise -> illumination, then clamps to [0,1]. Inactive stages
/// are skipped entirely, so the identity recipe returns the input bitwise and
/// the rng is only consumed by the noise stage.
inline Image degrade(const Image& input, const DegradationRecipe& recipe, Rng& rng) {
    recipe.validate();
    Image img = input;

    if (recipe.gaussian_sigma > 0.0) {
        const auto k1 = detail::gaussian_kernel_1d(recipe.gaussian_sigma);
        img = detail::convolve_replicate(img, k1, 1, k1.size()); // horizontal
        img = detail::convolve_replicate(img, k1, k1.size(), 1); // vertical
    }
    if (recipe.motion_len >= 3) {
        std::size_t kh = 0, kw = 0;
        const auto k = detail::motion_kernel(recipe.motion_len, recipe.motion_angle, kh, kw);
        img = detail::convolve_replicate(img, k, kh, kw);
    }
    if (recipe.defocus_radius > 0) {
        std::size_t kh = 0, kw = 0;
        const auto k = detail::disk_kernel(recipe.defocus_radius, kh, kw);
        img = detail::convolve_replicate(img, k, kh, kw);
    }
    if (recipe.downsample > 1) {
        const std::size_t f = static_cast<std::size_t>(recipe.downsample);
        if (img.h % f != 0 || img.w % f != 0) {
            throw DataError("downsample factor does not divide image dims");
        }
        Image small(img.h / f, img.w / f);
        const double inv = 1.0 / static_cast<double>(f * f);
        for (std::size_t y = 0; y < small.h; ++y) {
            for (std::size_t x = 0; x < small.w; ++x) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < f; ++dy) {
                    for (std::size_t dx = 0; dx < f; ++dx) {
                        acc += img.at(y * f + dy, x * f + dx);
                    }
                }
                small.at(y, x) = acc * inv;
            }
        }
        for (std::size_t y = 0; y < img.h; ++y) {
            for (std::size_t x = 0; x < img.w; ++x) {
                img.at(y, x) = small.at(y / f, x / f);
            }
        }
    }
    if (recipe.noise_sigma > 0.0) {
        for (double& v : img.px) {
            v += recipe.noise_sigma * rng.gaussian();
        }
    }
    if (recipe.illum_slope != 0.0) {
        for (std::size_t y = 0; y < img.h; ++y) {
            for (std::size_t x = 0; x < img.w; ++x) {
                const double ramp = static_cast<double>(x) / static_cast<double>(img.w - 1) - 0.5;
                img.at(y, x) += recipe.illum_slope * ramp;
            }
        }
    }
    img.clamp01();
    return img;
}

// ---------------------------------------------------------------------------
// dataset generation and I/O
// ---------------------------------------------------------------------------

struct PlateSample {
    Image image;
    std::string label;
    DegradationRecipe recipe;
    std::uint64_t sample_seed = 0;
};

enum class SplitProfile { Clean, TrainDegraded, EvalHard };

inline std::string profile_name(SplitProfile p) {
    switch (p) {
        case SplitProfile::Clean: return "clean";
        case SplitProfile::TrainDegraded: return "train-degraded";
        case SplitProfile::EvalHard: return "eval-hard";
    }
    throw ConfigError("unknown split profile");
}

inline SplitProfile parse_profile(const std::string& s) {
    if (s == "clean") return SplitProfile::Clean;
    if (s == "train-degraded") return SplitProfile::TrainDegraded;
    if (s == "eval-hard") return SplitProfile::EvalHard;
    throw ConfigError("unknown profile '" + s + "' (clean|train-degraded|eval-hard)");
}

inline std::string random_label(Rng& rng, std::size_t k) {
    const std::string& a = plate_alphabet();
    std::string label(k, '?');
    for (std::size_t i = 0; i < k; ++i) {
        label[i] = a[static_cast<std::size_t>(rng.below(a.size()))];
    }
    return label;
}

namespace detail {

// Fisher-Yates prefix: the first `pick` entries of a shuffled {0..5}.
inline void pick_families(Rng& rng, int pick, bool on[6]) {
    int fam[6] = {0, 1, 2, 3, 4, 5};
    for (int i = 5; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(fam[i], fam[j]);
    }
    for (int i = 0; i < 6; ++i) {
        on[i] = false;
    }
    for (int i = 0; i < pick; ++i) {
        on[fam[i]] = true;
    }
}

} // namespace detail

/// Draws a recipe for the given profile. Both degraded profiles compose 2-3
/// stages; train-degraded draws each active stage over its full range while
/// eval-hard draws from the upper half of its range.
inline DegradationRecipe sample_recipe(SplitProfile profile, Rng& rng) {
    DegradationRecipe r;
    if (profile == SplitProfile::Clean) {
        return r;
    }
    const bool hard = profile == SplitProfile::EvalHard;
    const int pick = 2 + static_cast<int>(rng.below(2));
    bool on[6];
    detail::pick_families(rng, pick, on);
    if (on[0]) r.gaussian_sigma = hard ? rng.uniform(1.25, 2.5) : rng.uniform(0.2, 2.5);
    if (on[1]) {
        if (hard) {
            r.motion_len = (rng.next_double() < 0.5) ? 7 : 9;
        } else {
            static const int lens[] = {3, 5, 7, 9};
            r.motion_len = lens[rng.below(4)];
        }
        r.motion_angle = rng.uniform(0.0, 180.0);
    }
    if (on[2]) r.defocus_radius = hard ? 2 + static_cast<int>(rng.below(2))
                                       : 1 + static_cast<int>(rng.below(3));
    if (on[3]) r.downsample = hard ? ((rng.next_double() < 0.5) ? 2 : 4)
                                   : ((rng.next_double() < 0.5) ? 2 : 4);
    if (on[4]) r.noise_sigma = hard ? rng.uniform(0.025, 0.05) : rng.uniform(0.005, 0.05);
    if (on[5]) {
        const double mag = hard ? rng.uniform(0.2, 0.4) : rng.uniform(0.05, 0.4);
        r.illum_slope = (rng.next_double() < 0.5) ? mag : -mag;
    }
    return r;
}

/// Generates one sample from (seed, index) alone: label, recipe, render,
/// degrade, in that draw order.
inline PlateSample make_sample(std::uint64_t seed, std::uint64_t index, SplitProfile profile,
                               std::size_t img_h = 32, std::size_t img_w = 96, std::size_t k = 7) {
    PlateSample s;
    s.sample_seed = seed ^ index;
    Rng rng(s.sample_seed);
    s.label = random_label(rng, k);
    s.recipe = sample_recipe(profile, rng);
    s.image = degrade(render_plate(s.label, img_h, img_w, k), s.recipe, rng);
    return s;
}

struct DatasetManifest {
    std::uint64_t count = 0;
    std::uint64_t seed = 0;
    std::string profile;
    std::string alphabet;
    std::size_t k = 7;
    int format_version = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{{"alphabet", alphabet}, {"count", count},
                              {"format_version", format_version}, {"k", k},
                              {"profile", profile}, {"seed", seed}};
    }
    static DatasetManifest from_json(const nlohmann::json& j) {
        DatasetManifest m;
        m.count = j.at("count").get<std::uint64_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.profile = j.at("profile").get<std::string>();
        m.alphabet = j.at("alphabet").get<std::string>();
        m.k = j.at("k").get<std::size_t>();
        m.format_version = j.at("format_version").get<int>();
        return m;
    }
};

inline std::string sample_filename(std::uint64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "images/%06llu.pgm", static_cast<unsigned long long>(index));
    return buf;
}

/// Writes images/NNNNNN.pgm + labels.tsv + manifest.json under out_dir.
/// Fully determined by (count, seed, profile): reruns are byte-identical.
inline DatasetManifest make_dataset(std::uint64_t count, std::uint64_t seed, SplitProfile profile,
                                    const std::filesystem::path& out_dir, std::size_t img_h = 32,
                                    std::size_t img_w = 96, std::size_t k = 7) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) {
        throw IoError("cannot create dataset directory " + (out_dir / "images").string() + ": " +
                      ec.message());
    }
    std::ofstream tsv(out_dir / "labels.tsv", std::ios::binary);
    if (!tsv) {
        throw IoError("cannot open " + (out_dir / "labels.tsv").string());
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const PlateSample s = make_sample(seed, i, profile, img_h, img_w, k);
        const std::string name = sample_filename(i);
        write_pgm(out_dir / name, s.image);
        tsv << name << "\t" << s.label << "\t" << s.recipe.to_json().dump() << "\n";
    }
    tsv.close();
    if (!tsv) {
        throw IoError("short write: " + (out_dir / "labels.tsv").string());
    }

    DatasetManifest m;
    m.count = count;
    m.seed = seed;
    m.profile = profile_name(profile);
    m.alphabet = plate_alphabet();
    m.k = k;
    std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
    if (!mf) {
        throw IoError("cannot open " + (out_dir / "manifest.json").string());
    }
    mf << m.to_json().dump(2) << "\n";
    if (!mf) {
        throw IoError("short write: " + (out_dir / "manifest.json").string());
    }
    return m;
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<PlateSample> samples;
};

/// Loads a dataset directory. Any labels.tsv row whose label violates the
/// alphabet or plate length is rejected with its line number.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        std::ifstream mf(dir / "manifest.json");
        if (!mf) {
            throw IoError("cannot open " + (dir / "manifest.json").string());
        }
        nlohmann::json j;
        mf >> j;
        ds.manifest = DatasetManifest::from_json(j);
    }
    std::ifstream tsv(dir / "labels.tsv");
    if (!tsv) {
        throw IoError("cannot open " + (dir / "labels.tsv").string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(tsv, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw DataError("labels.tsv line " + std::to_string(line_no) + ": expected 3 fields");
        }
        PlateSample s;
        const std::string fname = line.substr(0, t1);
        s.label = line.substr(t1 + 1, t2 - t1 - 1);
        if (s.label.size() != ds.manifest.k) {
            throw DataError("labels.tsv line " + std::to_string(line_no) + ": label '" + s.label +
                            "' has length " + std::to_string(s.label.size()) + ", expected " +
                            std::to_string(ds.manifest.k));
        }
        for (char c : s.label) {
            if (!in_plate_alphabet(c)) {
                throw DataError("labels.tsv line " + std::to_string(line_no) + ": character '" +
                                std::string(1, c) + "' not in alphabet");
            }
        }
        s.recipe = DegradationRecipe::from_json(nlohmann::json::parse(line.substr(t2 + 1)));
        s.image = read_pgm(dir / fname);
        s.sample_seed = ds.manifest.seed ^ static_cast<std::uint64_t>(ds.samples.size());
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.size() != ds.manifest.count) {
        throw DataError("dataset " + dir.string() + ": manifest count " +
                        std::to_string(ds.manifest.count) + " != " +
                        std::to_string(ds.samples.size()) + " rows");
    }
    return ds;
}

} // namespace cmrm
