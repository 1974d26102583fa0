#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stt/common.hpp"

namespace stt {

/// Little-endian binary writer over an in-memory buffer. The buffer is
/// written to disk in one go so partially written files never appear on
/// success paths.
class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        buf_.push_back(static_cast<unsigned char>(v & 0xff));
        buf_.push_back(static_cast<unsigned char>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
    }
    void str_raw(const std::string& s) { raw(s.data(), s.size()); }

    const std::vector<unsigned char>& bytes() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open for writing: " + path);
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw io_error("write failed: " + path);
    }

private:
    std::vector<unsigned char> buf_;
};

/// Little-endian binary reader. Throws format_error with the byte offset on
/// truncation so corrupt files are reported precisely.
class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> data, std::string origin)
        : data_(std::move(data)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("cannot open: " + path);
        std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(data), path);
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw format_error(origin_ + ": truncated at offset " + std::to_string(pos_) +
                               " (need " + std::to_string(n) + " more bytes)");
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }
    /// Checks a 4-byte magic, reporting offset 0 on mismatch.
    void expect_magic(const char magic[4]) {
        std::string got = str(4);
        if (got != std::string(magic, 4))
            throw format_error(origin_ + ": bad magic at offset 0, expected \"" + std::string(magic, 4) +
                               "\" got \"" + got + "\"");
    }

private:
    std::vector<unsigned char> data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace stt
