#include "dru/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "dru/errors.hpp"

namespace dru {
namespace {

const unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

int color_type_channels(int color_type) {
  switch (color_type) {
    case 0: return 1;  // gray
    case 2: return 3;  // rgb
    case 4: return 2;  // gray + alpha
    case 6: return 4;  // rgba
    default: return 0;
  }
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 4) {
    throw UsageError("write_png: only 1-channel (mask) and 4-channel (slice) images are written");
  }
  if (img.w < 1 || img.h < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.w * img.h * img.channels)) {
    throw UsageError("write_png: pixel buffer does not match dimensions");
  }

  // filter byte 0 per scanline
  const std::size_t stride = static_cast<std::size_t>(img.w) * img.channels;
  std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.h));
  for (std::int64_t y = 0; y < img.h; ++y) {
    raw[(stride + 1) * y] = 0;
    std::memcpy(raw.data() + (stride + 1) * y + 1, img.pixels.data() + stride * y, stride);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw DataError("write_png: zlib compression failed");
  }
  comp.resize(comp_len);

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.w));
  put_be32(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 6);            // gray / rgba
  ihdr.push_back(0);                                    // compression
  ihdr.push_back(0);                                    // filter method
  ihdr.push_back(0);                                    // no interlace

  std::vector<std::uint8_t> file(kSig, kSig + 8);
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", comp);
  append_chunk(file, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_png: cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!os) throw DataError("write_png: write failed for '" + path + "'");
}

PngImage read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_png: cannot open '" + path + "'");
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSig, 8) != 0) {
    throw FormatError("read_png: '" + path + "' is not a PNG file");
  }

  PngImage img;
  int bit_depth = 0, color_type = -1, interlace = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<std::uint8_t> idat;

  std::size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = get_be32(file.data() + pos);
    if (pos + 12 + len > file.size()) {
      throw FormatError("read_png: '" + path + "' truncated chunk");
    }
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const std::uint8_t* payload = file.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError("read_png: bad IHDR length");
      img.w = get_be32(payload);
      img.h = get_be32(payload + 4);
      bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    // ancillary chunks are skipped
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) {
    throw FormatError("read_png: '" + path + "' missing required chunks");
  }
  if (bit_depth != 8) {
    throw FormatError("read_png: '" + path + "' has bit depth " + std::to_string(bit_depth) +
                      ", only 8-bit images are supported");
  }
  if (color_type == 3) {
    throw FormatError("read_png: '" + path + "' is palette-based, which is not supported");
  }
  img.channels = color_type_channels(color_type);
  if (img.channels == 0) {
    throw FormatError("read_png: '" + path + "' has unknown color type " +
                      std::to_string(color_type));
  }
  if (interlace != 0) {
    throw FormatError("read_png: '" + path + "' is interlaced, which is not supported");
  }
  if (img.w < 1 || img.h < 1) throw FormatError("read_png: bad dimensions");

  const std::size_t stride = static_cast<std::size_t>(img.w) * img.channels;
  const std::size_t raw_len = (stride + 1) * static_cast<std::size_t>(img.h);
  std::vector<std::uint8_t> raw(raw_len);
  uLongf dest_len = static_cast<uLongf>(raw_len);
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw_len) {
    throw FormatError("read_png: '" + path + "' has corrupt image data");
  }

  // undo scanline filters
  img.pixels.resize(stride * static_cast<std::size_t>(img.h));
  const int bpp = img.channels;  // bytes per pixel at 8-bit depth
  for (std::int64_t y = 0; y < img.h; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    const std::uint8_t* src = raw.data() + (stride + 1) * y + 1;
    std::uint8_t* dst = img.pixels.data() + stride * y;
    const std::uint8_t* up = y > 0 ? img.pixels.data() + stride * (y - 1) : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<std::size_t>(bpp)) ? up[x - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = src[x]; break;
        case 1: v = src[x] + a; break;
        case 2: v = src[x] + b; break;
        case 3: v = src[x] + (a + b) / 2; break;
        case 4: v = src[x] + paeth(a, b, c); break;
        default:
          throw FormatError("read_png: '" + path + "' uses unknown filter type " +
                            std::to_string(filter));
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

}  // namespace dru
