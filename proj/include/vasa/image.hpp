#pragma once

// 8-bit RGB images, PNG codec (libpng) and data-URI helpers.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vasa/error.hpp"
#include "vasa/mask.hpp"

namespace vasa {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class Image {
 public:
  Image(int width, int height, Rgb fill = {}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw Error(Errc::InvalidArgument, "image dimensions must be positive");
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  /// Stable identifier used by fixture backends and traces (usually the file stem).
  std::string id;

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  Rgb& at(int row, int col) { return pixels_[offset(row, col)]; }
  const Rgb& at(int row, int col) const { return pixels_[offset(row, col)]; }

  std::span<const Rgb> pixels() const noexcept { return pixels_; }

  bool matches(const RasterMask& m) const noexcept {
    return m.width() == width_ && m.height() == height_;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.pixels_ == b.pixels_;
  }

 private:
  std::size_t offset(int row, int col) const {
    if (row < 0 || row >= height_ || col < 0 || col >= width_) {
      throw Error(Errc::InvalidArgument, "pixel outside image");
    }
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
  }

  int width_;
  int height_;
  std::vector<Rgb> pixels_;
};

/// An image with a burned-in label, as shown to the VLM.
struct CaptionedImage {
  std::string caption;
  Image image;
};

inline void require_image_shape(const Image& img, const RasterMask& m, std::string_view what) {
  if (!img.matches(m)) {
    throw Error(Errc::DimensionMismatch,
                std::string(what) + ": image " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()) + " vs mask " + std::to_string(m.width()) + "x" +
                    std::to_string(m.height()));
  }
}

namespace detail {

struct PngWriteBuffer {
  std::vector<std::uint8_t> bytes;
};

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->bytes.insert(buf->bytes.end(), data, data + length);
}

inline void png_flush_noop(png_structp) {}

struct PngReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

inline void png_read_from_span(png_structp png, png_bytep out, png_size_t length) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->data.size()) png_error(png, "truncated PNG stream");
  std::copy_n(cur->data.data() + cur->pos, length, out);
  cur->pos += length;
}

[[noreturn]] inline void png_throw(png_structp, png_const_charp msg) {
  throw Error(Errc::IoFailure, std::string("libpng: ") + msg);
}

inline void png_warn_silent(png_structp, png_const_charp) {}

// Encodes rows of 1 (gray) or 3 (RGB) channels.
inline std::vector<std::uint8_t> encode_png_rows(int width, int height, int channels,
                                                 std::span<const std::uint8_t> data) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn_silent);
  if (png == nullptr) throw Error(Errc::IoFailure, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  PngWriteBuffer buf;
  try {
    if (info == nullptr) throw Error(Errc::IoFailure, "png_create_info_struct failed");
    png_set_write_fn(png, &buf, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    for (int r = 0; r < height; ++r) {
      png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(r) * stride));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return std::move(buf.bytes);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> raw;
  raw.reserve(img.pixels().size() * 3);
  for (const auto& p : img.pixels()) {
    raw.push_back(p.r);
    raw.push_back(p.g);
    raw.push_back(p.b);
  }
  return detail::encode_png_rows(img.width(), img.height(), 3, raw);
}

/// Binary mask as an 8-bit grayscale PNG with values 0 and 255.
inline std::vector<std::uint8_t> encode_mask_png(const RasterMask& m) {
  std::vector<std::uint8_t> raw(m.pixel_count());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = m.test_index(i) ? 255 : 0;
  return detail::encode_png_rows(m.width(), m.height(), 1, raw);
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(Errc::IoFailure, "not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw,
                                           detail::png_warn_silent);
  if (png == nullptr) throw Error(Errc::IoFailure, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::PngReadCursor cursor{bytes, 0};
  try {
    if (info == nullptr) throw Error(Errc::IoFailure, "png_create_info_struct failed");
    png_set_read_fn(png, &cursor, detail::png_read_from_span);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(stride * static_cast<std::size_t>(height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int r = 0; r < height; ++r) rows[r] = raw.data() + static_cast<std::size_t>(r) * stride;
    png_read_image(png, rows.data());
    Image img(width, height);
    for (int r = 0; r < height; ++r) {
      const png_bytep row = rows[r];
      for (int c = 0; c < width; ++c) {
        img.at(r, c) = Rgb{row[3 * c], row[3 * c + 1], row[3 * c + 2]};
      }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

/// Reads a PNG and tags it with the file stem as its id.
inline Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingImage, path.string());
  Image img = decode_png(read_file_bytes(path));
  img.id = path.stem().string();
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

inline void write_mask_png(const std::filesystem::path& path, const RasterMask& m) {
  write_file_bytes(path, encode_mask_png(m));
}

/// Width and height from the IHDR chunk, without decoding pixel data.
inline std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingImage, path.string());
  std::array<unsigned char, 24> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  if (in.gcount() != 24 || png_sig_cmp(head.data(), 0, 8) != 0) {
    throw Error(Errc::IoFailure, path.string() + " is not a PNG file");
  }
  auto be32 = [&](std::size_t at) {
    return static_cast<int>((std::uint32_t{head[at]} << 24) | (std::uint32_t{head[at + 1]} << 16) |
                            (std::uint32_t{head[at + 2]} << 8) | std::uint32_t{head[at + 3]});
  };
  return {be32(16), be32(20)};
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{data[i]} << 16) | (std::uint32_t{data[i + 1]} << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < data.size()) {
    std::uint32_t v = std::uint32_t{data[i]} << 16;
    if (i + 1 < data.size()) v |= std::uint32_t{data[i + 1]} << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += (i + 1 < data.size()) ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string png_data_uri(const Image& img) {
  return "data:image/png;base64," + base64_encode(encode_png(img));
}

/// Area-averaging downscale so the longest side is at most max_side.
/// Images already within bounds are returned unchanged.
inline Image downscale_to_fit(const Image& src, int max_side) {
  const int longest = std::max(src.width(), src.height());
  if (max_side <= 0 || longest <= max_side) return src;
  const double scale = static_cast<double>(max_side) / longest;
  const int w = std::max(1, static_cast<int>(std::lround(src.width() * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(src.height() * scale)));
  Image out(w, h);
  out.id = src.id;
  for (int r = 0; r < h; ++r) {
    const int r0 = static_cast<int>(static_cast<long long>(r) * src.height() / h);
    const int r1 = std::max(r0 + 1, static_cast<int>(static_cast<long long>(r + 1) * src.height() / h));
    for (int c = 0; c < w; ++c) {
      const int c0 = static_cast<int>(static_cast<long long>(c) * src.width() / w);
      const int c1 = std::max(c0 + 1, static_cast<int>(static_cast<long long>(c + 1) * src.width() / w));
      std::uint64_t sr = 0, sg = 0, sb = 0;
      for (int y = r0; y < r1; ++y) {
        for (int x = c0; x < c1; ++x) {
          const auto& p = src.at(y, x);
          sr += p.r;
          sg += p.g;
          sb += p.b;
        }
      }
      const std::uint64_t n = static_cast<std::uint64_t>(r1 - r0) * static_cast<std::uint64_t>(c1 - c0);
      out.at(r, c) = Rgb{static_cast<std::uint8_t>((sr + n / 2) / n), static_cast<std::uint8_t>((sg + n / 2) / n),
                         static_cast<std::uint8_t>((sb + n / 2) / n)};
    }
  }
  return out;
}

}  // namespace vasa
