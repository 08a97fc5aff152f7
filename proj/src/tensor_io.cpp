#include "wsl/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace wsl {

namespace {
constexpr char kMagic[4] = {'W', 'S', 'T', '1'};
}

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>((bits >> s) & 0xff));
}

void ByteReader::need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
}

std::uint8_t ByteReader::u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
}

std::uint16_t ByteReader::u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

double ByteReader::f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
}

std::string ByteReader::text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
}

void encode_tensor(const Tensor& t, std::vector<std::uint8_t>& out) {
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ShapeError("WST1: rank exceeds 255");
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) {
        if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("WST1: dim exceeds u32");
        append_u32(out, static_cast<std::uint32_t>(d));
    }
    out.reserve(out.size() + 8 * t.size());
    for (double v : t.data()) append_f64(out, v);
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    std::vector<std::uint8_t> out;
    encode_tensor(t, out);
    return out;
}

Tensor decode_tensor(ByteReader& in, bool exact_end) {
    const std::size_t start = in.offset();
    if (in.remaining() < 4 || in.text(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad magic", start);
    const std::size_t rank = in.u8("rank");
    Dims dims(rank);
    for (auto& d : dims) {
        d = in.u32("dims");
        if (d == 0) throw FormatError("zero dimension", in.offset() - 4);
    }
    const std::size_t n = dims_product(dims);
    const std::size_t payload_at = in.offset();
    if (exact_end && in.remaining() != 8 * n)
        throw FormatError("payload length: dims " + dims_string(dims) + " need " + std::to_string(n) +
                              " values, file holds " + std::to_string(in.remaining()) + " bytes",
                          payload_at);
    if (in.remaining() < 8 * n) throw FormatError("truncated payload", payload_at);
    std::vector<double> data(n);
    for (auto& v : data) v = in.f64("payload");
    return Tensor(std::move(dims), std::move(data));
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    return decode_tensor(in, true);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) { write_file_bytes(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

} // namespace wsl
