#include "adadiff/png.hpp"

#include "adadiff/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace adadiff {

namespace {

void write_gray(const std::filesystem::path& path, int64_t rows, int64_t cols, const std::vector<unsigned char>& px) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) {
    throw DataError("cannot write " + path.string());
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t i = 0; i < rows; ++i) {
    png_write_row(png, const_cast<png_bytep>(px.data() + i * cols));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace

double display_window(const MagnitudeImage& image) {
  if (image.data.empty()) {
    return 1.0;
  }
  std::vector<double> sorted(image.data);
  const auto k = static_cast<size_t>(std::floor(0.99 * static_cast<double>(sorted.size() - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double hi = sorted[k];
  return hi > 0.0 ? hi : 1.0;
}

void write_magnitude_png(const std::filesystem::path& path, const MagnitudeImage& image) {
  const double hi = display_window(image);
  std::vector<unsigned char> px(image.data.size());
  for (size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp(image.data[i] / hi, 0.0, 1.0);
    px[i] = static_cast<unsigned char>(std::lround(255.0 * v));
  }
  write_gray(path, image.rows, image.cols, px);
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& pattern) {
  if (pattern.dim() != 2) {
    throw ContractError("write_mask_png: expected an (H, W) pattern");
  }
  auto p = pattern.to(torch::kUInt8).contiguous();
  std::vector<unsigned char> px(p.data_ptr<uint8_t>(), p.data_ptr<uint8_t>() + p.numel());
  for (auto& v : px) {
    v = v ? 255 : 0;
  }
  write_gray(path, p.size(0), p.size(1), px);
}

} // namespace adadiff
