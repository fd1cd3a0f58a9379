#ifndef ADEVAL_IMAGE_IO_HPP_
#define ADEVAL_IMAGE_IO_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace adeval::image {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, width * height
};

// Decodes a PNG file to 8-bit grayscale (color inputs are converted).
// Throws std::runtime_error with the file path on decode failure.
GrayImage read_gray_png(const std::string& path);

// Writes an 8-bit grayscale PNG. Throws std::runtime_error on failure.
void write_gray_png(const std::string& path, const GrayImage& img);

}  // namespace adeval::image

#endif  // ADEVAL_IMAGE_IO_HPP_
