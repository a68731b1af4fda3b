#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssk/raster.hpp"

namespace ssk {

// 8-bit PNG, gray or RGB. 1-channel sketches are exported with ink mapped
// to black on white; reading inverts the mapping back, so ink stays 1.
std::vector<std::uint8_t> encode_png(const RasterImage& img);
RasterImage decode_png(const std::uint8_t* data, std::size_t len);

void write_png(const RasterImage& img, const std::string& path);
RasterImage read_png(const std::string& path);

}  // namespace ssk
