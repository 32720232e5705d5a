#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

using ByteBuffer = std::vector<std::uint8_t>;

namespace io {

// ---- little-endian primitives -------------------------------------------

inline void put_u32(ByteBuffer& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(ByteBuffer& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f32(ByteBuffer& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(ByteBuffer& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }

// Sequential reader over a byte buffer; every read is bounds-checked so a
// truncated file fails loudly instead of yielding garbage.
class Reader {
  public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit Reader(const ByteBuffer& b) : Reader(b.data(), b.size()) {}

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

    const std::uint8_t* take(std::size_t n) {
        if (remaining() < n) throw DataError("file truncated: unexpected end of data");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const std::uint8_t* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

  private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

// Standard CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < size; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// ---- MTNS1 tensor blobs ---------------------------------------------------
//
// Layout: magic "MTNS1", precision byte (4 = f32, 8 = f64), rank as u32,
// one u32 extent per dimension, then the scalars little-endian in
// row-major order.

inline constexpr char kTensorMagic[5] = {'M', 'T', 'N', 'S', '1'};

template <typename T>
void append_tensor(ByteBuffer& b, const Tensor<T>& t) {
    b.insert(b.end(), kTensorMagic, kTensorMagic + 5);
    b.push_back(static_cast<std::uint8_t>(sizeof(T)));
    put_u32(b, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(b, static_cast<std::uint32_t>(e));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if constexpr (std::is_same_v<T, float>) put_f32(b, t[i]);
        else put_f64(b, t[i]);
    }
}

template <typename T>
Tensor<T> read_tensor(Reader& r) {
    const std::uint8_t* magic = r.take(5);
    if (std::memcmp(magic, kTensorMagic, 5) != 0)
        throw DataError("bad tensor magic: not an MTNS1 block");
    std::uint8_t prec = r.u8();
    if (prec != sizeof(T))
        throw DataError("tensor precision mismatch: file has " + std::to_string(int(prec)) +
                        "-byte scalars, expected " + std::to_string(sizeof(T)));
    std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = r.u32();
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if constexpr (std::is_same_v<T, float>) t[i] = r.f32();
        else t[i] = r.f64();
    }
    return t;
}

// ---- whole-file helpers ----------------------------------------------------

inline void write_file(const std::string& path, const ByteBuffer& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + path);
}

inline ByteBuffer read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    f.seekg(0, std::ios::end);
    std::streamsize n = f.tellg();
    f.seekg(0, std::ios::beg);
    ByteBuffer bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw DataError("read failed: " + path);
    return bytes;
}

inline std::string read_file_text(const std::string& path) {
    ByteBuffer b = read_file(path);
    return std::string(b.begin(), b.end());
}

inline void write_file_text(const std::string& path, const std::string& text) {
    write_file(path, ByteBuffer(text.begin(), text.end()));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    ByteBuffer b;
    append_tensor(b, t);
    write_file(path, b);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    ByteBuffer b = read_file(path);
    Reader r(b);
    Tensor<T> t = read_tensor<T>(r);
    if (r.remaining() != 0) throw DataError("trailing bytes after tensor: " + path);
    return t;
}

}  // namespace io
}  // namespace mcnn
