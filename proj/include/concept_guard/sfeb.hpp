#pragma once

// SFEB tensor container.
//
//   offset  size          field
//   0       4             magic "SFEB"
//   4       4             version, u32 LE (= 1)
//   8       1             dtype, u8 (0 = f32 LE)
//   9       1             ndim, u8 (2 or 3)
//   10      4*ndim        dims, u32 LE each
//   ...     4*prod(dims)  payload, row-major f32 LE
//   ...     optional      token table: u32 count, then per token
//                         { u32 byteLength, UTF-8 bytes, u8 valid (0/1) }
//   end-4   4             CRC32 (IEEE) of every preceding byte, u32 LE
//
// The token table is present iff bytes remain between the payload and the
// trailer. Payload floats are kept as read so write(read(f)) == f.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "concept_guard/error.hpp"
#include "concept_guard/linalg.hpp"
#include "concept_guard/spectral.hpp"
#include "concept_guard/token_filter.hpp"

namespace concept_guard::sfeb {

inline constexpr std::uint8_t kMagic[4] = {0x53, 0x46, 0x45, 0x42};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct TokenEntry {
    std::string label;
    bool valid = true;
    friend bool operator==(const TokenEntry&, const TokenEntry&) = default;
};

struct Container {
    std::vector<std::uint32_t> dims;
    std::vector<float> payload;
    std::optional<std::vector<TokenEntry>> tokens;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

struct Header {
    std::uint32_t version = 0;
    std::uint8_t dtype = 0;
    std::vector<std::uint32_t> dims;
    std::uint32_t storedCrc = 0;
    std::uint32_t computedCrc = 0;
    bool crcOk() const noexcept { return storedCrc == computedCrc; }
};

inline std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large buffers.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = ::crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

using concept_guard::detail::fail;
using concept_guard::detail::require;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
    return v;
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> body) : body_(body) {}
    std::size_t remaining() const { return body_.size() - pos_; }
    void need(std::size_t n) const {
        if (remaining() < n) fail(ErrorCode::CorruptFile, "container truncated");
    }
    std::uint8_t u8() {
        need(1);
        return body_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        const auto v = get_u32(body_, pos_);
        pos_ += 4;
        return v;
    }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = body_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> body_;
    std::size_t pos_ = 0;
};

// Checks magic and trailer and returns the CRC-covered body.
inline std::span<const std::uint8_t> checked_body(std::span<const std::uint8_t> bytes, Header& header) {
    if (bytes.size() < 4) fail(ErrorCode::CorruptFile, "container shorter than its magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::FormatError, "bad magic (expected SFEB)");
    if (bytes.size() < 4 + 4 + 1 + 1 + 4) fail(ErrorCode::CorruptFile, "container truncated");
    const auto body = bytes.first(bytes.size() - 4);
    header.storedCrc = get_u32(bytes, bytes.size() - 4);
    header.computedCrc = crc32_ieee(body);
    return body;
}

inline void parse_header(Reader& r, Header& header) {
    r.bytes(4);
    header.version = r.u32();
    if (header.version != kVersion)
        fail(ErrorCode::UnsupportedVersion, "container version " + std::to_string(header.version) + " is not supported");
    header.dtype = r.u8();
    if (header.dtype != kDtypeF32) fail(ErrorCode::FormatError, "unknown dtype " + std::to_string(header.dtype));
    const std::uint8_t ndim = r.u8();
    if (ndim != 2 && ndim != 3) fail(ErrorCode::FormatError, "ndim must be 2 or 3");
    header.dims.clear();
    for (std::uint8_t i = 0; i < ndim; ++i) header.dims.push_back(r.u32());
}

inline std::size_t checked_elements(const std::vector<std::uint32_t>& dims) {
    // Keep byte counts far below what a size_t (or a file) can address.
    constexpr std::size_t kMaxElements = std::size_t{1} << 40;
    std::size_t n = 1;
    for (auto d : dims) {
        require(d >= 1, ErrorCode::InvalidDimensions, "zero-length dimension");
        if (n > kMaxElements / d) fail(ErrorCode::InvalidDimensions, "dimensions overflow addressable size");
        n *= d;
    }
    return n;
}

}  // namespace detail

/// Header fields and CRC status without validating the payload.
inline Header inspect(std::span<const std::uint8_t> bytes) {
    Header header;
    const auto body = detail::checked_body(bytes, header);
    detail::Reader r(body);
    detail::parse_header(r, header);
    return header;
}

inline Container decode(std::span<const std::uint8_t> bytes) {
    Header header;
    const auto body = detail::checked_body(bytes, header);
    if (!header.crcOk()) detail::fail(ErrorCode::CorruptFile, "CRC mismatch");
    detail::Reader r(body);
    detail::parse_header(r, header);

    Container c;
    c.dims = header.dims;
    const std::size_t n = detail::checked_elements(c.dims);
    const auto raw = r.bytes(n * 4);
    c.payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.payload[i] = std::bit_cast<float>(detail::get_u32(raw, 4 * i));

    if (r.remaining() > 0) {
        const std::uint32_t count = r.u32();
        std::vector<TokenEntry> tokens;
        tokens.reserve(std::min<std::size_t>(count, r.remaining()));
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = r.u32();
            const auto text = r.bytes(len);
            const std::uint8_t flag = r.u8();
            if (flag > 1) detail::fail(ErrorCode::FormatError, "token valid flag must be 0 or 1");
            tokens.push_back({std::string(text.begin(), text.end()), flag == 1});
        }
        if (r.remaining() != 0) detail::fail(ErrorCode::FormatError, "trailing bytes after token table");
        c.tokens = std::move(tokens);
    }
    return c;
}

inline std::vector<std::uint8_t> encode(const Container& c) {
    concept_guard::detail::require(c.dims.size() == 2 || c.dims.size() == 3, ErrorCode::InvalidDimensions,
                                   "ndim must be 2 or 3");
    const std::size_t n = detail::checked_elements(c.dims);
    concept_guard::detail::require(c.payload.size() == n, ErrorCode::InvalidDimensions, "payload length != prod(dims)");

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    out.reserve(14 + 4 * c.dims.size() + 4 * n);
    detail::put_u32(out, kVersion);
    out.push_back(kDtypeF32);
    out.push_back(static_cast<std::uint8_t>(c.dims.size()));
    for (auto d : c.dims) detail::put_u32(out, d);
    for (float f : c.payload) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    if (c.tokens) {
        detail::put_u32(out, static_cast<std::uint32_t>(c.tokens->size()));
        for (const auto& t : *c.tokens) {
            detail::put_u32(out, static_cast<std::uint32_t>(t.label.size()));
            out.insert(out.end(), t.label.begin(), t.label.end());
            out.push_back(t.valid ? 1 : 0);
        }
    }
    detail::put_u32(out, crc32_ieee(out));
    return out;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) concept_guard::detail::fail(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) concept_guard::detail::fail(ErrorCode::IoError, "read failed for " + path.string());
    return bytes;
}

/// Writes through a sibling temporary and renames it into place, so `path`
/// either keeps its old content or receives the complete new content.
inline void write_bytes_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) concept_guard::detail::fail(ErrorCode::IoError, "cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            concept_guard::detail::fail(ErrorCode::IoError, "write failed for " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        concept_guard::detail::fail(ErrorCode::IoError, "cannot rename into " + path.string());
    }
}

inline Container read_container(const std::filesystem::path& path) { return decode(read_bytes(path)); }

inline void write_container(const Container& c, const std::filesystem::path& path) {
    write_bytes_atomic(path, encode(c));
}

// ---------------------------------------------------------------------------
// Conversions between containers and in-memory types. Payloads widen to
// double exactly; narrowing back rounds to nearest f32.

inline std::vector<float> narrow(std::span<const double> values) {
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<float>(values[i]);
        concept_guard::detail::require(std::isfinite(out[i]), ErrorCode::NonFiniteInput, "value not representable as f32");
    }
    return out;
}

inline DenseMatrix to_matrix(const Container& c) {
    concept_guard::detail::require(c.dims.size() == 2, ErrorCode::InvalidDimensions, "expected a 2-D container");
    return DenseMatrix(c.dims[0], c.dims[1], Vector(c.payload.begin(), c.payload.end()));
}

inline Container from_matrix(const DenseMatrix& m, std::optional<std::vector<TokenEntry>> tokens = std::nullopt) {
    if (tokens)
        concept_guard::detail::require(tokens->size() == m.rows(), ErrorCode::InvalidDimensions, "one token per row");
    return Container{{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, narrow(m.data()),
                     std::move(tokens)};
}

inline PromptEmbedding to_prompt(const Container& c) {
    DenseMatrix e = to_matrix(c);
    std::vector<std::string> labels;
    std::vector<bool> valid;
    if (c.tokens) {
        concept_guard::detail::require(c.tokens->size() == e.rows(), ErrorCode::SchemaError,
                                       "token table length != prompt rows");
        for (const auto& t : *c.tokens) {
            labels.push_back(t.label);
            valid.push_back(t.valid);
        }
    }
    return PromptEmbedding(std::move(e), std::move(labels), std::move(valid));
}

inline std::optional<std::vector<TokenEntry>> token_table(const PromptEmbedding& p) {
    std::vector<TokenEntry> t;
    for (std::size_t i = 0; i < p.size(); ++i) t.push_back({p.tokens[i], static_cast<bool>(p.valid[i])});
    return t;
}

inline LatentGrid to_latent(const Container& c) {
    concept_guard::detail::require(c.dims.size() == 3, ErrorCode::InvalidDimensions, "expected a 3-D [C,H,W] container");
    return LatentGrid(c.dims[0], c.dims[1], c.dims[2], std::vector<double>(c.payload.begin(), c.payload.end()));
}

inline Container from_latent(const LatentGrid& g) {
    return Container{{static_cast<std::uint32_t>(g.channels), static_cast<std::uint32_t>(g.height),
                      static_cast<std::uint32_t>(g.width)},
                     narrow(g.data),
                     std::nullopt};
}

}  // namespace concept_guard::sfeb
