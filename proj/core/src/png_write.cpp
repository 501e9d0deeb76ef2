#include "s4l/png_write.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

#include "s4l/errors.hpp"

namespace s4l {

namespace {

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& data) {
  put_u32be(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, static_cast<uInt>(4 + data.size()));
  put_u32be(out, crc);
}

}  // namespace

void write_png_rgb8(const std::string& path, int64_t width, int64_t height,
                    const uint8_t* rgb) {
  if (width <= 0 || height <= 0)
    raise(ErrorKind::Render, "png dimensions must be positive");

  // raw scanlines, each prefixed with filter byte 0
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (1 + width * 3));
  for (int64_t y = 0; y < height; ++y) {
    uint8_t* row = raw.data() + y * (1 + width * 3);
    row[0] = 0;
    std::memcpy(row + 1, rgb + y * width * 3, static_cast<size_t>(width) * 3);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), Z_DEFAULT_COMPRESSION) != Z_OK)
    raise(ErrorKind::Render, "zlib compression failed");
  compressed.resize(bound);

  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(width));
  put_u32be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace

  std::vector<uint8_t> file = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  put_chunk(file, "IHDR", ihdr);
  put_chunk(file, "IDAT", compressed);
  put_chunk(file, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorKind::Io, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(file.data()),
          static_cast<std::streamsize>(file.size()));
  if (!f) raise(ErrorKind::Io, "short write on " + path);
}

}  // namespace s4l
