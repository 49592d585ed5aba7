#pragma once

#include <string>

#include "sadl/image.hpp"

namespace sadl {

// Binary PPM (P6), maxval 255, rows top to bottom. Values are quantized
// with round(v * 255) on write and mapped back as byte / 255 on read.
void write_ppm(const ImageRGB& img, const std::string& path);
ImageRGB read_ppm(const std::string& path);

// Binary PGM (P5), maxval 255. Foreground stored as 255, background as 0.
// Reading thresholds at >= 128; strict mode rejects bytes other than 0/255.
void write_pgm(const Mask& mask, const std::string& path);
Mask read_pgm(const std::string& path, bool strict = false);

// Grayscale PGM of arbitrary [0,1] data with min-max scaling to [0,255].
void write_pgm_gray(const Grid& values, const std::string& path);

}  // namespace sadl
