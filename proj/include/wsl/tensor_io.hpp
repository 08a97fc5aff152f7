#pragma once

// WST1 tensor files:
//   bytes 0-3   ASCII "WST1"
//   byte  4     rank (u8)
//   then        rank x u32 little-endian dims
//   then        product(dims) x IEEE-754 binary64 little-endian, row-major

#include "wsl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace wsl {

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_f64(std::vector<std::uint8_t>& out, double v);

// Bounds-checked little-endian reader; every failure is a FormatError
// carrying the byte offset.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint8_t u8(const char* what);
    std::uint16_t u16(const char* what);
    std::uint32_t u32(const char* what);
    double f64(const char* what);
    std::string text(std::size_t n, const char* what);
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const;
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void encode_tensor(const Tensor& t, std::vector<std::uint8_t>& out);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);

// Reads one record. With exact_end, trailing bytes after the payload (or a
// short payload) are a "payload length" error; otherwise a short payload is
// "truncated payload".
Tensor decode_tensor(ByteReader& in, bool exact_end);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace wsl
