#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "cmrm/plate.hpp"

using namespace cmrm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("cmrm_test_" + tag + "_" +
                                              std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return sa == sb;
}

} // namespace

TEST_CASE("render is deterministic and slot-local", "[plate]") {
    Image a = render_plate("ABC1234");
    Image b = render_plate("ABC1234");
    CHECK(a.px == b.px);

    // Differing in one character: pixels differ only inside that slot's box.
    Image c = render_plate("ABC1Z34");
    const SlotGeometry g = slot_geometry(32, 96, 7);
    for (std::size_t y = 0; y < a.h; ++y) {
        for (std::size_t x = 0; x < a.w; ++x) {
            if (a.at(y, x) != c.at(y, x)) {
                CHECK(x >= g.slot_x0(4));
                CHECK(x < g.slot_x1(4));
            }
        }
    }
}

TEST_CASE("repeated glyphs are identical patches at slot offsets", "[plate]") {
    Image img = render_plate("8888888");
    const SlotGeometry g = slot_geometry(32, 96, 7);
    for (std::size_t s = 1; s < 7; ++s) {
        for (std::size_t y = 0; y < img.h; ++y) {
            for (std::size_t dx = 0; dx < g.slot_w; ++dx) {
                CHECK(img.at(y, g.slot_x0(0) + dx) == img.at(y, g.slot_x0(s) + dx));
            }
        }
    }
}

TEST_CASE("render rejects invalid labels naming the character", "[plate]") {
    CHECK_THROWS_AS(render_plate("ABC12"), DataError);
    try {
        render_plate("ABC12?4");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find('?') != std::string::npos);
    }
}

TEST_CASE("identity recipe returns the input bitwise", "[plate]") {
    Image img = render_plate("QX7PL20");
    Rng rng(5);
    Image out = degrade(img, DegradationRecipe{}, rng);
    CHECK(out.px == img.px);
    CHECK(rng.state() == Rng(5).state()); // inactive stages draw nothing
}

TEST_CASE("normalized kernels preserve constant images", "[plate]") {
    Image flat(32, 96, 0.37);
    DegradationRecipe r;
    r.gaussian_sigma = 2.0;
    r.motion_len = 7;
    r.motion_angle = 30.0;
    r.defocus_radius = 2;
    Rng rng(6);
    Image out = degrade(flat, r, rng);
    for (double v : out.px) {
        CHECK(v == Catch::Approx(0.37).margin(1e-12));
    }
}

TEST_CASE("gaussian blur strictly reduces variance", "[plate]") {
    Image img = render_plate("W8M1HTV");
    DegradationRecipe r;
    r.gaussian_sigma = 2.0;
    Rng rng(7);
    Image out = degrade(img, r, rng);
    CHECK(out.variance() < img.variance());
}

TEST_CASE("recipe JSON round trip re-degrades bitwise", "[plate]") {
    DegradationRecipe r;
    r.gaussian_sigma = 1.234567890123;
    r.motion_len = 5;
    r.motion_angle = 77.125;
    r.defocus_radius = 1;
    r.downsample = 2;
    r.noise_sigma = 0.031415926535;
    r.illum_slope = -0.2718281828;
    const DegradationRecipe r2 = DegradationRecipe::from_json(
        nlohmann::json::parse(r.to_json().dump()));
    Image img = render_plate("K2NQ0RS");
    Rng rng1(9), rng2(9);
    Image a = degrade(img, r, rng1);
    Image b = degrade(img, r2, rng2);
    CHECK(a.px == b.px);
}

TEST_CASE("recipe validation enforces ranges", "[plate]") {
    DegradationRecipe r;
    r.gaussian_sigma = 3.0;
    CHECK_THROWS_AS(r.validate(), DataError);
    r = DegradationRecipe{};
    r.motion_len = 4;
    CHECK_THROWS_AS(r.validate(), DataError);
    r = DegradationRecipe{};
    r.downsample = 3;
    CHECK_THROWS_AS(r.validate(), DataError);
}

TEST_CASE("eval-hard recipes compose at least two degradations", "[plate]") {
    for (std::uint64_t i = 0; i < 200; ++i) {
        Rng rng(1000 + i);
        const DegradationRecipe r = sample_recipe(SplitProfile::EvalHard, rng);
        int active = 0;
        active += r.gaussian_sigma > 0.0;
        active += r.motion_len > 0;
        active += r.defocus_radius > 0;
        active += r.downsample > 1;
        active += r.noise_sigma > 0.0;
        active += r.illum_slope != 0.0;
        CHECK(active >= 2);
        // Upper-half draws only.
        if (r.gaussian_sigma > 0.0) CHECK(r.gaussian_sigma >= 1.25);
        if (r.motion_len > 0) CHECK(r.motion_len >= 7);
        if (r.defocus_radius > 0) CHECK(r.defocus_radius >= 2);
        if (r.noise_sigma > 0.0) CHECK(r.noise_sigma >= 0.025);
        if (r.illum_slope != 0.0) CHECK(std::abs(r.illum_slope) >= 0.2);
        r.validate();
    }
}

TEST_CASE("pgm round trip is quantization-exact", "[plate]") {
    const fs::path dir = temp_dir("pgm");
    fs::create_directories(dir);
    Image img = render_plate("B4CD9EF");
    write_pgm(dir / "x.pgm", img);
    Image back = read_pgm(dir / "x.pgm");
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        CHECK(std::abs(back.px[i] - img.px[i]) <= 0.5 / 255.0 + 1e-12);
    }
    // Re-writing the loaded image reproduces the same bytes.
    write_pgm(dir / "y.pgm", back);
    CHECK(same_bytes(dir / "x.pgm", dir / "y.pgm"));
    fs::remove_all(dir);
}

TEST_CASE("make_dataset with zero samples still writes a valid split", "[plate]") {
    const fs::path dir = temp_dir("empty");
    const DatasetManifest m = make_dataset(0, 3, SplitProfile::Clean, dir);
    CHECK(m.count == 0);
    const Dataset ds = load_dataset(dir);
    CHECK(ds.samples.empty());
    fs::remove_all(dir);
}

TEST_CASE("make_dataset reruns are byte-identical", "[plate]") {
    const fs::path da = temp_dir("det_a");
    const fs::path db = temp_dir("det_b");
    make_dataset(24, 77, SplitProfile::TrainDegraded, da);
    make_dataset(24, 77, SplitProfile::TrainDegraded, db);
    CHECK(same_bytes(da / "labels.tsv", db / "labels.tsv"));
    CHECK(same_bytes(da / "manifest.json", db / "manifest.json"));
    for (int i = 0; i < 24; ++i) {
        CHECK(same_bytes(da / sample_filename(i), db / sample_filename(i)));
    }
    fs::remove_all(da);
    fs::remove_all(db);
}

TEST_CASE("loader rejects bad labels with the line number", "[plate]") {
    const fs::path dir = temp_dir("badlabel");
    make_dataset(3, 5, SplitProfile::Clean, dir);
    {
        std::ifstream in(dir / "labels.tsv");
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const std::size_t tab = all.find('\t');
        all[tab + 3] = '?'; // corrupt a label character on line 1
        std::ofstream out(dir / "labels.tsv", std::ios::binary);
        out << all;
    }
    try {
        load_dataset(dir);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("labels are uniform per position", "[plate]") {
    // Same draw path as make_sample: the label is the first thing a sample
    // stream produces. 3-sigma binomial bound per (position, character),
    // verified for the frozen seed below.
    const std::uint64_t seed = 424242;
    const std::size_t n = 10000, k = 7;
    std::vector<std::vector<int>> counts(k, std::vector<int>(36, 0));
    for (std::uint64_t i = 0; i < n; ++i) {
        Rng rng(seed ^ i);
        const std::string label = random_label(rng, k);
        for (std::size_t p = 0; p < k; ++p) {
            counts[p][alphabet_index(label[p])]++;
        }
    }
    const double expect = static_cast<double>(n) / 36.0;
    const double sigma = std::sqrt(static_cast<double>(n) * (1.0 / 36.0) * (35.0 / 36.0));
    for (std::size_t p = 0; p < k; ++p) {
        for (int c = 0; c < 36; ++c) {
            CHECK(std::abs(counts[p][c] - expect) <= 3.0 * sigma);
        }
    }
}

TEST_CASE("degrade is pure given image, recipe and rng state", "[plate]") {
    const PlateSample s1 = make_sample(99, 17, SplitProfile::EvalHard);
    const PlateSample s2 = make_sample(99, 17, SplitProfile::EvalHard);
    CHECK(s1.label == s2.label);
    CHECK(s1.image.px == s2.image.px);
    CHECK(s1.sample_seed == (99ull ^ 17ull));
}
