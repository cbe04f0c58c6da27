#include "ditmos/nn/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ditmos::nn {

void ByteWriter::u32(std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v)
{
    u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::bytes(const void* data, std::size_t n)
{
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
}

void ByteReader::bytes(void* out, std::size_t n)
{
    if (remaining() < n) {
        throw std::runtime_error("truncated input: needed " + std::to_string(n) + " bytes at offset " +
                                 std::to_string(pos_));
    }
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
}

void ByteReader::skip(std::size_t n)
{
    if (remaining() < n) throw std::runtime_error("truncated input while skipping");
    pos_ += n;
}

std::uint32_t ByteReader::u32()
{
    std::uint8_t b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t ByteReader::u64()
{
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | hi << 32;
}

float ByteReader::f32()
{
    return std::bit_cast<float>(u32());
}

void ByteReader::expect_magic(const std::array<char, 4>& m, const char* what)
{
    std::array<char, 4> got{};
    bytes(got.data(), 4);
    if (got != m) throw std::runtime_error(std::string("not a ") + what + " file (bad magic)");
}

void write_model(ByteWriter& out, const Model& model)
{
    const ModelSpec& spec = model.spec();
    out.magic(kModelMagic);
    out.u32(kFormatVersion);
    out.u32(static_cast<std::uint32_t>(spec.layers.size()));
    out.u32(static_cast<std::uint32_t>(spec.in_channels));
    out.u32(static_cast<std::uint32_t>(spec.in_length));
    for (const LayerSpec& l : spec.layers) {
        out.u32(static_cast<std::uint32_t>(l.kind));
        out.u32(static_cast<std::uint32_t>(l.out_channels));
        out.u32(static_cast<std::uint32_t>(l.kernel_width));
        out.u32(static_cast<std::uint32_t>(l.pool_width));
        out.u32(static_cast<std::uint32_t>(l.side_channels));
    }
    for (const Tensor& p : model.parameters()) {
        for (Scalar v : p.data()) out.f32(static_cast<float>(v));
    }
}

Model read_model(ByteReader& in)
{
    in.expect_magic(kModelMagic, "DTMS model");
    const std::uint32_t version = in.u32();
    if (version != kFormatVersion) throw std::runtime_error("unsupported model format version " + std::to_string(version));
    const std::uint32_t count = in.u32();
    ModelSpec spec;
    spec.in_channels = in.u32();
    spec.in_length = in.u32();
    if (count > in.remaining() / 20) throw std::runtime_error("model layer count exceeds file size");
    for (std::uint32_t i = 0; i < count; ++i) {
        LayerSpec l;
        const std::uint32_t kind = in.u32();
        if (kind > static_cast<std::uint32_t>(LayerKind::ConcatChannels)) {
            throw std::runtime_error("unknown layer kind " + std::to_string(kind) + " in model file");
        }
        l.kind = static_cast<LayerKind>(kind);
        l.out_channels = in.u32();
        l.kernel_width = in.u32();
        l.pool_width = in.u32();
        l.side_channels = in.u32();
        spec.layers.push_back(l);
    }
    Model model(std::move(spec));
    for (Tensor& p : model.parameters()) {
        for (auto& v : p.data()) v = static_cast<Scalar>(in.f32());
    }
    return model;
}

std::vector<std::uint8_t> serialize_model(const Model& model)
{
    ByteWriter w;
    write_model(w, model);
    return w.take();
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes)
{
    ByteReader r(bytes);
    Model m = read_model(r);
    if (r.remaining() != 0) throw std::runtime_error("trailing bytes after model payload");
    return m;
}

std::size_t serialized_size(const Model& model)
{
    return 4 + 4 * 4 + 20 * model.spec().layers.size() + 4 * model.parameter_count();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

void save_model(const std::filesystem::path& path, const Model& model)
{
    write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path)
{
    return deserialize_model(read_file(path));
}

}  // namespace ditmos::nn
