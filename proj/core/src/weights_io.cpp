#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "camscope/errors.hpp"
#include "camscope/unet.hpp"

namespace camscope::unet {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'M', 'S', 'C', 'O', 'P', 'E'};
constexpr std::uint16_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void close() {
        out_.close();
        if (!out_) throw IoError("write to '" + path_ + "' failed");
    }

private:
    template <typename T>
    void le(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(buf, sizeof(T));
    }
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open '" + path + "' for reading");
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) {
            throw IoError("truncated file '" + path_ + "' at byte " +
                          std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())));
        }
        offset_ += n;
    }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    const std::string& path() const { return path_; }

private:
    template <typename T>
    T le() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[i]) << (8 * i));
        return v;
    }
    std::string path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

std::uint32_t checked_u32(int v, const char* what) {
    if (v < 0) throw std::invalid_argument(std::string(what) + " is negative");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_weights(const UNet& model, const std::string& path) {
    const UNetConfig& c = model.config();
    Writer w(path);
    w.bytes(kMagic, sizeof(kMagic));
    w.u16(kVersion);
    w.u32(checked_u32(c.depth, "depth"));
    w.u32(checked_u32(c.in_channels, "in_channels"));
    w.u32(checked_u32(c.num_classes, "num_classes"));
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(c.channels.size()));
    for (int ch : c.channels) w.u32(checked_u32(ch, "channel width"));
    w.u32(static_cast<std::uint32_t>(model.params().size()));
    for (const auto& [name, tensor] : model.params()) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(tensor.rank()));
        for (int e : tensor.shape) w.u32(checked_u32(e, "extent"));
        for (double v : tensor.data) w.f64(v);
    }
    w.close();
}

UNet load_weights(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("bad magic in '" + path + "'");
    }
    const std::uint16_t version = r.u16();
    if (version != kVersion) {
        throw IoError("unsupported weight file version " + std::to_string(version) + " in '" + path +
                      "' (expected " + std::to_string(kVersion) + ")");
    }
    UNetConfig config;
    config.depth = static_cast<int>(r.u32());
    config.in_channels = static_cast<int>(r.u32());
    config.num_classes = static_cast<int>(r.u32());
    config.seed = r.u64();
    const std::uint32_t nch = r.u32();
    config.channels.clear();
    for (std::uint32_t i = 0; i < nch; ++i) config.channels.push_back(static_cast<int>(r.u32()));

    UNet model(config);
    const std::uint32_t param_count = r.u32();
    if (param_count != model.params().size()) {
        throw std::invalid_argument("weight file '" + path + "' holds " + std::to_string(param_count) +
                                    " parameters, stored config requires " +
                                    std::to_string(model.params().size()));
    }
    for (std::uint32_t p = 0; p < param_count; ++p) {
        const std::uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        const std::uint32_t rank = r.u32();
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32()));
        auto it = model.params().find(name);
        if (it == model.params().end()) {
            throw std::invalid_argument("weight file '" + path + "' names unknown parameter '" + name + "'");
        }
        if (shape != it->second.shape) {
            throw std::invalid_argument("parameter '" + name + "' in '" + path + "' has shape " +
                                        shape_str(shape) + ", stored config requires " +
                                        shape_str(it->second.shape));
        }
        for (double& v : it->second.data) {
            v = r.f64();
            if (!std::isfinite(v)) {
                throw std::invalid_argument("parameter '" + name + "' in '" + path +
                                            "' contains a non-finite value");
            }
        }
    }
    return model;
}

}  // namespace camscope::unet
