#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ditmos/nn/model.hpp"

namespace ditmos::nn {

/// Model file layout, all integers little-endian:
///
///   "DTMS" | u32 version | u32 layer_count | u32 in_channels | u32 in_length
///   layer_count x { u32 kind, u32 out_channels, u32 kernel_width,
///                   u32 pool_width, u32 side_channels }
///   f32 parameter blobs in declaration order (weight then bias per layer)
inline constexpr std::array<char, 4> kModelMagic{'D', 'T', 'M', 'S'};
inline constexpr std::uint32_t kFormatVersion = 1;

/// Little-endian primitive writer over a byte buffer.
class ByteWriter {
public:
    void u32(std::uint32_t v);
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v);
    void f32(float v);
    void bytes(const void* data, std::size_t n);
    void magic(const std::array<char, 4>& m) { bytes(m.data(), m.size()); }

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : ByteReader(buf.data(), buf.size()) {}

    std::uint32_t u32();
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::uint64_t u64();
    float f32();
    void bytes(void* out, std::size_t n);
    /// Throws unless the next four bytes equal `m`.
    void expect_magic(const std::array<char, 4>& m, const char* what);

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return size_ - pos_; }
    const std::uint8_t* cursor() const noexcept { return data_ + pos_; }
    void skip(std::size_t n);

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

void write_model(ByteWriter& out, const Model& model);
Model read_model(ByteReader& in);

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);
std::size_t serialized_size(const Model& model);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace ditmos::nn
