#pragma once

#include <cstdint>
#include <string>

namespace s4l {

// Minimal truecolor PNG writer (8-bit RGB, zlib-compressed).
void write_png_rgb8(const std::string& path, int64_t width, int64_t height,
                    const uint8_t* rgb);

}  // namespace s4l
