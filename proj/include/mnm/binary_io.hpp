#ifndef MNM_BINARY_IO_HPP
#define MNM_BINARY_IO_HPP

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

#include "mnm/errors.hpp"

namespace mnm::io {

/// Little-endian byte sink backed by a growable buffer.
class Writer {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void f64s(std::span<const double> vs)
    {
        for (double v : vs)
            f64(v);
    }

    const std::vector<char>& buffer() const noexcept { return buf_; }

    void save(const std::filesystem::path& path) const
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open '" + path.string() + "' for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out)
            throw IoError("write failed for '" + path.string() + "'");
    }

private:
    std::vector<char> buf_;
};

/// Bounds-checked little-endian reader; every overrun is a FormatError.
class Reader {
public:
    explicit Reader(std::vector<char> data, std::string source)
        : data_(std::move(data)), source_(std::move(source))
    {
    }

    static Reader from_file(const std::filesystem::path& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw IoError("cannot open '" + path.string() + "' for reading");
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(data), path.string());
    }

    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    void f64s(std::span<double> out)
    {
        need(out.size() * 8);
        for (double& v : out)
            v = f64();
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    const std::string& source() const noexcept { return source_; }

    void expect_end() const
    {
        if (remaining() != 0)
            throw FormatError(source_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n)
            throw FormatError(source_ + ": truncated (needed " + std::to_string(n) +
                              " bytes at offset " + std::to_string(pos_) + ")");
    }

    std::vector<char> data_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace mnm::io

#endif
