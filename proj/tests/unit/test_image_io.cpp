#include <doctest.h>

#include <stdexcept>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "camscope/errors.hpp"
#include "camscope/image_io.hpp"
#include "camscope/render.hpp"
#include "camscope/tensor.hpp"

using namespace camscope;
using render::RgbImage;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string error_text(const std::filesystem::path& path) {
    try {
        render::read_pgm_ppm(path.string());
    } catch (const IoError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("color images round-trip through the writer and reader") {
    const auto path = temp_file("camscope_io_roundtrip.ppm");
    RgbImage img(3, 2);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(17 * i);
    render::write_ppm(img, path.string());

    const Tensor t = render::read_pgm_ppm(path.string());
    REQUIRE(t.shape == std::vector<int>{1, 3, 2, 3});
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 3; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double expect = img.px(x, y)[c] / 255.0;
                CHECK(t.at4(0, c, y, x) == expect);
            }
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("the writer emits the exact documented header") {
    const auto path = temp_file("camscope_io_header.ppm");
    RgbImage img(2, 3);
    img.data.assign(18, 200);
    render::write_ppm(img, path.string());
    const std::string bytes = read_bytes(path);
    const std::string header = "P6\n2 3\n255\n";
    REQUIRE(bytes.size() == header.size() + 18);
    CHECK(bytes.substr(0, header.size()) == header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) {
        CHECK(static_cast<std::uint8_t>(bytes[i]) == 200);
    }
    std::filesystem::remove(path);
}

TEST_CASE("writing the same pixels twice produces identical bytes") {
    const auto p1 = temp_file("camscope_io_det1.ppm");
    const auto p2 = temp_file("camscope_io_det2.ppm");
    RgbImage img(4, 4);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(i * 7 % 256);
    render::write_ppm(img, p1.string());
    render::write_ppm(img, p2.string());
    CHECK(read_bytes(p1) == read_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("a one-pixel grayscale file reads as a full-intensity scalar") {
    const auto path = temp_file("camscope_io_white.pgm");
    write_bytes(path, std::string("P5\n1 1\n255\n") + '\xff');
    const Tensor t = render::read_pgm_ppm(path.string());
    CHECK(t.shape == std::vector<int>{1, 1, 1, 1});
    CHECK(t.data[0] == 1.0);
    std::filesystem::remove(path);
}

TEST_CASE("grayscale payload bytes land row-major at value/255") {
    const auto path = temp_file("camscope_io_gray.pgm");
    write_bytes(path, std::string("P5\n3 2\n255\n") + std::string({0, 51, 102, (char)153, (char)204, (char)255}));
    const Tensor t = render::read_pgm_ppm(path.string());
    REQUIRE(t.shape == std::vector<int>{1, 1, 2, 3});
    CHECK(t.at4(0, 0, 0, 0) == 0.0);
    CHECK(t.at4(0, 0, 0, 1) == 51.0 / 255.0);
    CHECK(t.at4(0, 0, 1, 2) == 1.0);
    std::filesystem::remove(path);
}

TEST_CASE("malformed files fail with the reason and byte offset") {
    const auto path = temp_file("camscope_io_malformed.pgm");

    SUBCASE("bad magic") {
        write_bytes(path, std::string("P7\n1 1\n255\n") + '\x00');
        const std::string msg = error_text(path);
        CHECK(msg.find("bad magic") != std::string::npos);
        CHECK(msg.find("at byte") != std::string::npos);
    }
    SUBCASE("unsupported maxval") {
        write_bytes(path, std::string("P5\n1 1\n127\n") + '\x00');
        const std::string msg = error_text(path);
        CHECK(msg.find("maxval 127") != std::string::npos);
    }
    SUBCASE("non-numeric width") {
        write_bytes(path, "P5\nab 1\n255\n");
        const std::string msg = error_text(path);
        CHECK(msg.find("expected width") != std::string::npos);
    }
    SUBCASE("short payload") {
        write_bytes(path, std::string("P5\n2 2\n255\n") + std::string(3, '\x10'));
        const std::string msg = error_text(path);
        CHECK(msg.find("truncated") != std::string::npos);
        CHECK(msg.find("3 bytes") != std::string::npos);
    }
    SUBCASE("trailing junk") {
        write_bytes(path, std::string("P5\n2 2\n255\n") + std::string(5, '\x10'));
        const std::string msg = error_text(path);
        CHECK(msg.find("trailing data") != std::string::npos);
    }
    SUBCASE("zero extent") {
        write_bytes(path, "P5\n0 2\n255\n");
        CHECK(error_text(path).find(">= 1") != std::string::npos);
    }
    SUBCASE("missing file") {
        std::filesystem::remove(path);
        CHECK_THROWS_AS(render::read_pgm_ppm(path.string()), IoError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("label files expose raw class ids, not intensities") {
    const auto path = temp_file("camscope_io_labels.pgm");
    write_bytes(path, std::string("P5\n2 2\n255\n") + std::string({0, 1, 2, (char)255}));
    const LabelMap labels = render::read_label_pgm(path.string());
    CHECK(labels.at(0, 0) == 0);
    CHECK(labels.at(0, 1) == 1);
    CHECK(labels.at(1, 0) == 2);
    CHECK(labels.at(1, 1) == 255);

    RgbImage rgb(1, 1);
    const auto color_path = temp_file("camscope_io_labels.ppm");
    render::write_ppm(rgb, color_path.string());
    CHECK_THROWS_AS(render::read_label_pgm(color_path.string()), IoError);
    std::filesystem::remove(path);
    std::filesystem::remove(color_path);
}
