#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pfc/density.hpp"
#include "pfc/perspective.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff size = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw DataError("cannot read file: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("cannot write file: " + path);
}

struct ByteWriter {
  std::vector<std::uint8_t> bytes;
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes(b) {}

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("truncated file");
  }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                      static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

/// CRC-64/XZ (reflected poly 0xC96C5795D7870F42, init/xorout all-ones).
inline std::uint64_t crc64(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint64_t, 256> t{};
    for (std::uint64_t i = 0; i < 256; ++i) {
      std::uint64_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? (c >> 1) ^ 0xC96C5795D7870F42ULL : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint64_t crc = ~0ULL;
  for (std::size_t i = 0; i < n; ++i)
    crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// F32M: grayscale float32 map.
// magic "F32M" | u32 version=1 | u32 h | u32 w | h*w little-endian f32.

inline void write_f32m(const std::string& path, const Grid2& g) {
  detail::ByteWriter w;
  w.raw("F32M", 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(g.h));
  w.u32(static_cast<std::uint32_t>(g.w));
  for (float v : g.data) w.f32(v);
  detail::write_file_bytes(path, w.bytes);
}

inline Grid2 read_f32m(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "F32M", 4) != 0)
    throw FormatError("f32m: bad magic");
  r.pos = 4;
  if (r.u32() != 1) throw FormatError("f32m: unsupported version");
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  if (h < 1 || w < 1) throw FormatError("f32m: bad dimensions");
  const std::size_t want = 16 + std::size_t{4} * h * w;
  if (bytes.size() != want) throw FormatError("f32m: length mismatch");
  Grid2 g(h, w);
  for (auto& v : g.data) {
    v = r.f32();
    if (std::isnan(v)) throw DataError("f32m: NaN in map payload");
  }
  return g;
}

// ---------------------------------------------------------------------------
// Annotation CSV: header "x,y", one head per line.

inline void write_annotations_csv(const std::string& path,
                                  const HeadAnnotations& heads) {
  std::ostringstream os;
  os << "x,y\n";
  char buf[80];
  for (const auto& p : heads.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", p[0], p[1]);
    os << buf;
  }
  const std::string s = os.str();
  detail::write_file_bytes(path, {s.begin(), s.end()});
}

inline HeadAnnotations read_annotations_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open file: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "x,y")
    throw FormatError("annotations csv: expected header 'x,y'");
  HeadAnnotations heads;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    float x, y;
    if (std::sscanf(line.c_str(), "%f,%f", &x, &y) != 2)
      throw FormatError("annotations csv: bad row: " + line);
    heads.points.push_back({x, y});
  }
  return heads;
}

// ---------------------------------------------------------------------------
// Labeled-heights CSV for perspective fitting: header "y_h,h_px".

inline void write_labeled_heights_csv(const std::string& path,
                                      const std::vector<LabeledHeight>& rows) {
  std::ostringstream os;
  os << "y_h,h_px\n";
  char buf[80];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", r.y_h, r.h_px);
    os << buf;
  }
  const std::string s = os.str();
  detail::write_file_bytes(path, {s.begin(), s.end()});
}

inline std::vector<LabeledHeight> read_labeled_heights_csv(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open file: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "y_h,h_px")
    throw FormatError("labeled-heights csv: expected header 'y_h,h_px'");
  std::vector<LabeledHeight> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    LabeledHeight r;
    if (std::sscanf(line.c_str(), "%f,%f", &r.y_h, &r.h_px) != 2)
      throw FormatError("labeled-heights csv: bad row: " + line);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, 8-bit) for RGB images. Tensor values are [0,1] floats.

inline void write_ppm(const std::string& path, const Tensor4& img) {
  if (img.n != 1 || img.c != 3) throw ShapeError("ppm: need a 1x3xHxW tensor");
  std::ostringstream head;
  head << "P6\n" << img.w << " " << img.h << "\n255\n";
  const std::string hs = head.str();
  std::vector<std::uint8_t> bytes(hs.begin(), hs.end());
  bytes.reserve(bytes.size() + static_cast<std::size_t>(img.h * img.w * 3));
  for (std::int64_t i = 0; i < img.h; ++i) {
    for (std::int64_t j = 0; j < img.w; ++j) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const float v = std::min(std::max(img.at(0, c, i, j), 0.0f), 1.0f);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
    }
  }
  detail::write_file_bytes(path, bytes);
}

inline Tensor4 read_ppm(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  std::size_t pos = 0;
  const auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]))
      tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  if (next_token() != "P6") throw FormatError("ppm: bad magic");
  std::int64_t w, h, maxval;
  try {
    w = std::stoll(next_token());
    h = std::stoll(next_token());
    maxval = std::stoll(next_token());
  } catch (const std::exception&) {
    throw FormatError("ppm: malformed header");
  }
  if (w < 1 || h < 1 || maxval != 255) throw FormatError("ppm: bad header");
  ++pos;  // single whitespace after maxval
  if (pos + static_cast<std::size_t>(w * h * 3) > bytes.size())
    throw FormatError("ppm: truncated payload");
  Tensor4 img(1, 3, h, w);
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      for (std::int64_t c = 0; c < 3; ++c)
        img.at(0, c, i, j) =
            static_cast<float>(bytes[pos + ((i * w + j) * 3 + c)]) / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// Checkpoint container: named float tensors.
// magic "PFDC" | u32 version=1 | u32 entry count | entries | u64 CRC-64/XZ
// entry: u16 name length | name | u8 rank | rank * u32 dims | f32 payload.

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<NamedTensor> entries;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
  const NamedTensor& require(const std::string& name) const {
    const NamedTensor* e = find(name);
    if (!e) throw DataError("checkpoint: missing entry " + name);
    return *e;
  }
  void add(const std::string& name, std::vector<std::uint32_t> dims,
           std::vector<float> values) {
    std::uint64_t count = 1;
    for (auto d : dims) count *= d;
    if (count != values.size())
      throw ShapeError("checkpoint: dims do not match payload for " + name);
    entries.push_back({name, std::move(dims), std::move(values)});
  }
  void add_scalar(const std::string& name, float v) {
    add(name, {1}, {v});
  }
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw("PFDC", 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.u32(d);
    for (float v : e.values) w.f32(v);
  }
  w.u64(detail::crc64(w.bytes.data(), w.bytes.size()));
  detail::write_file_bytes(path, w.bytes);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 12 + 8) throw FormatError("checkpoint: truncated file");
  if (std::memcmp(bytes.data(), "PFDC", 4) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::uint64_t stored_crc =
      [&] {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
          v |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i])
               << (8 * i);
        return v;
      }();
  if (detail::crc64(bytes.data(), bytes.size() - 8) != stored_crc)
    throw DataError("checkpoint: CRC mismatch");

  detail::ByteReader r(bytes);
  r.pos = 4;
  if (r.u32() != 1) throw FormatError("checkpoint: unsupported version");
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  ck.entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    NamedTensor t;
    const std::uint16_t name_len = r.u16();
    r.need(name_len);
    t.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos),
                  name_len);
    r.pos += name_len;
    const std::uint8_t rank = r.u8();
    std::uint64_t numel = 1;
    t.dims.resize(rank);
    for (auto& d : t.dims) {
      d = r.u32();
      numel *= d;
    }
    t.values.resize(numel);
    for (auto& v : t.values) v = r.f32();
    ck.entries.push_back(std::move(t));
  }
  if (r.pos != bytes.size() - 8)
    throw FormatError("checkpoint: trailing bytes");
  return ck;
}

}  // namespace pfc
