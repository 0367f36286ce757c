#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace rpl::io {

/// Little-endian byte sink. Reals are written as IEEE-754 binary64.
class Writer {
public:
    void bytes(std::string_view b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    void f64s(std::span<const double> v) {
        for (double x : v) f64(x);
    }

    const std::vector<char>& buffer() const { return buf_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw Error("short write to " + path.string());
    }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}

    static Reader open(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ParseError("cannot open " + path.string());
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(data));
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string out(buf_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() { return bytes(u32()); }

    void f64s(std::span<double> out) {
        for (auto& x : out) x = f64();
    }

    bool at_end() const { return pos_ == buf_.size(); }

    /// Reads and checks a 4-byte magic plus the format version.
    std::uint32_t header(std::string_view magic, std::uint32_t max_version) {
        if (bytes(magic.size()) != magic) throw ParseError("bad magic, expected " + std::string(magic));
        const auto v = u32();
        if (v == 0 || v > max_version) throw ParseError("unsupported format version " + std::to_string(v));
        return v;
    }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw ParseError("unexpected end of binary file");
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

} // namespace rpl::io
