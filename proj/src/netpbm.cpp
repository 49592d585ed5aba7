#include "sadl/netpbm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace sadl {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) continue;
    tok.push_back(static_cast<char>(c));
    while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#')
      tok.push_back(static_cast<char>(in.get()));
    return tok;
  }
  return tok;
}

struct PnmHeader {
  int w = 0, h = 0, maxval = 0;
};

PnmHeader read_header(std::istream& in, const char* magic,
                      const std::string& path) {
  std::string m = next_token(in);
  if (m != magic)
    throw IoError(path + ": expected " + magic + " header, got '" + m + "'");
  PnmHeader hd;
  try {
    hd.w = std::stoi(next_token(in));
    hd.h = std::stoi(next_token(in));
    hd.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError(path + ": malformed " + magic + " header");
  }
  if (hd.w <= 0 || hd.h <= 0)
    throw IoError(path + ": invalid dimensions in header");
  if (hd.maxval != 255)
    throw IoError(path + ": unsupported maxval " + std::to_string(hd.maxval));
  in.get();  // single whitespace byte before the raster
  return hd;
}

void read_raster(std::istream& in, std::vector<std::uint8_t>& bytes,
                 const std::string& path) {
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw IoError(path + ": truncated raster data");
}

std::uint8_t quantize(double v) {
  double q = std::lround(v * 255.0);
  if (q < 0) q = 0;
  if (q > 255) q = 255;
  return static_cast<std::uint8_t>(q);
}

}  // namespace

void write_ppm(const ImageRGB& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * 3);
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c)
      for (int k = 0; k < 3; ++k)
        row[static_cast<std::size_t>(c) * 3 + static_cast<std::size_t>(k)] =
            quantize(img.at(k, r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

ImageRGB read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  PnmHeader hd = read_header(in, "P6", path);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(hd.w) * hd.h * 3);
  read_raster(in, bytes, path);
  ImageRGB img(hd.h, hd.w);
  std::size_t i = 0;
  for (int r = 0; r < hd.h; ++r)
    for (int c = 0; c < hd.w; ++c)
      for (int k = 0; k < 3; ++k) img.at(k, r, c) = bytes[i++] / 255.0;
  return img;
}

void write_pgm(const Mask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.w));
  for (int r = 0; r < mask.h; ++r) {
    for (int c = 0; c < mask.w; ++c)
      row[static_cast<std::size_t>(c)] = mask.at(r, c) ? 255 : 0;
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

Mask read_pgm(const std::string& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  PnmHeader hd = read_header(in, "P5", path);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(hd.w) * hd.h);
  read_raster(in, bytes, path);
  Mask mask(hd.h, hd.w);
  std::size_t i = 0;
  for (int r = 0; r < hd.h; ++r)
    for (int c = 0; c < hd.w; ++c) {
      std::uint8_t b = bytes[i++];
      if (strict && b != 0 && b != 255)
        throw IoError(path + ": non-binary pixel value " + std::to_string(b));
      mask.at(r, c) = b >= 128 ? 1 : 0;
    }
  return mask;
}

void write_pgm_gray(const Grid& values, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int h = static_cast<int>(values.rows());
  const int w = static_cast<int>(values.cols());
  double lo = values.minCoeff(), hi = values.maxCoeff();
  double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c)
      row[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(
          std::lround((values(r, c) - lo) * scale));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace sadl
