#include "camscope/image_io.hpp"

#include <fstream>
#include <sstream>

#include "camscope/errors.hpp"

namespace camscope::render {

namespace {

bool is_pnm_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

class HeaderParser {
public:
    HeaderParser(const std::string& path, const std::string& bytes) : path_(path), bytes_(bytes) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError("malformed image '" + path_ + "': " + what + " at byte " + std::to_string(pos_));
    }

    char take() {
        if (pos_ >= bytes_.size()) fail("unexpected end of header");
        return bytes_[pos_++];
    }

    void skip_ws() {
        if (pos_ >= bytes_.size() || !is_pnm_ws(bytes_[pos_])) fail("expected whitespace");
        while (pos_ < bytes_.size() && is_pnm_ws(bytes_[pos_])) ++pos_;
    }

    int number(const char* what) {
        skip_ws();
        if (pos_ >= bytes_.size() || bytes_[pos_] < '0' || bytes_[pos_] > '9') {
            fail(std::string("expected ") + what);
        }
        long v = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000'000L) fail(std::string(what) + " out of range");
            ++pos_;
        }
        return static_cast<int>(v);
    }

    std::size_t pos() const { return pos_; }

private:
    const std::string& path_;
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

Tensor read_pgm_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();

    HeaderParser p(path, bytes);
    const char m0 = p.take();
    const char m1 = p.take();
    if (m0 != 'P' || (m1 != '5' && m1 != '6')) p.fail("bad magic (expected P5 or P6)");
    const int channels = m1 == '5' ? 1 : 3;
    const int w = p.number("width");
    const int h = p.number("height");
    if (w < 1 || h < 1) p.fail("extents must be >= 1");
    const int maxval = p.number("maxval");
    if (maxval != 255) p.fail("maxval " + std::to_string(maxval) + " unsupported (must be 255)");
    const char sep = p.take();
    if (!is_pnm_ws(sep)) p.fail("expected single whitespace after maxval");

    const std::size_t expected = static_cast<std::size_t>(channels) * w * h;
    const std::size_t have = bytes.size() - p.pos();
    if (have < expected) {
        throw IoError("truncated image '" + path + "': payload has " + std::to_string(have) +
                      " bytes, header promises " + std::to_string(expected));
    }
    if (have > expected) {
        throw IoError("trailing data in '" + path + "': " + std::to_string(have - expected) +
                      " bytes past the payload");
    }

    Tensor out({1, channels, h, w});
    const unsigned char* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + p.pos();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                const unsigned char v = payload[(static_cast<std::size_t>(y) * w + x) * channels + c];
                out.at4(0, c, y, x) = static_cast<double>(v) / 255.0;
            }
        }
    }
    return out;
}

LabelMap read_label_pgm(const std::string& path) {
    const Tensor t = read_pgm_ppm(path);
    if (t.shape[1] != 1) {
        throw IoError("label map '" + path + "' must be grayscale P5, got a P6 color image");
    }
    const int H = t.shape[2], W = t.shape[3];
    LabelMap out(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            out.at(y, x) = static_cast<int>(t.at4(0, 0, y, x) * 255.0 + 0.5);
        }
    }
    return out;
}

void write_ppm(const RgbImage& img, const std::string& path) {
    if (img.width < 1 || img.height < 1) {
        throw IoError("write_ppm: empty image for '" + path + "'");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    out.close();
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace camscope::render
