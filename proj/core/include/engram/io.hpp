#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "engram/errors.hpp"

namespace engram {

// Little-endian binary writer over an in-memory buffer. All artifact files
// are produced through this so byte layout never depends on host quirks.
class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }

    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void magic(std::string_view m) {
        buf_.insert(buf_.end(), m.begin(), m.end());
    }

    // Length-prefixed UTF-8 string.
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void bytes(std::span<const std::uint8_t> b) {
        buf_.insert(buf_.end(), b.begin(), b.end());
    }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    template <typename T>
    void put_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader. Truncation anywhere raises FormatError
// so corrupt artifacts fail loudly instead of yielding garbage.
class BinaryReader {
public:
    explicit BinaryReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return take<std::uint8_t>(); }
    std::uint16_t u16() { return take<std::uint16_t>(); }
    std::uint32_t u32() { return take<std::uint32_t>(); }
    std::uint64_t u64() { return take<std::uint64_t>(); }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void expect_magic(std::string_view m) {
        if (remaining() < m.size())
            throw FormatError("truncated file: missing magic '" + std::string(m) + "'");
        for (char c : m) {
            if (static_cast<char>(data_[pos_++]) != c)
                throw FormatError("bad magic: expected '" + std::string(m) + "'");
        }
    }

    std::string str() {
        std::uint32_t n = u32();
        if (remaining() < n) throw FormatError("truncated string field");
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::span<const std::uint8_t> bytes(std::size_t n) {
        if (remaining() < n) throw FormatError("truncated byte field");
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    template <typename T>
    T take() {
        if (remaining() < sizeof(T)) throw FormatError("truncated file");
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace engram
