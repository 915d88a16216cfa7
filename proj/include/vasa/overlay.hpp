#pragma once

// Candidate and working-mask overlays for VLM inspection and debugging.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vasa/candidate.hpp"
#include "vasa/error.hpp"
#include "vasa/image.hpp"
#include "vasa/mask.hpp"

namespace vasa {

struct OverlayStyle {
  Rgb fill_color{31, 119, 180};
  double fill_alpha = 0.45;
  Rgb outline_color{31, 119, 180};
  int outline_width = 1;
  std::string caption;

  void validate() const {
    if (!(fill_alpha >= 0.0 && fill_alpha <= 1.0)) throw Error(Errc::InvalidArgument, "fill_alpha must be in [0,1]");
    if (outline_width < 1) throw Error(Errc::InvalidArgument, "outline_width must be >= 1");
  }
};

inline constexpr std::array<Rgb, 8> kCandidatePalette{{
    {31, 119, 180},
    {255, 127, 14},
    {44, 160, 44},
    {214, 39, 40},
    {148, 103, 189},
    {140, 86, 75},
    {227, 119, 194},
    {23, 190, 207},
}};

inline constexpr Rgb kWorkingColor{255, 215, 0};

inline Rgb palette_color(int candidate_id) {
  const auto n = static_cast<int>(kCandidatePalette.size());
  return kCandidatePalette[static_cast<std::size_t>(((candidate_id - 1) % n + n) % n)];
}

namespace detail {

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
struct Glyph {
  char ch;
  std::array<std::uint8_t, 7> rows;
};

inline constexpr std::array<Glyph, 42> kFont{{
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'#', {0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
}};

inline const Glyph* find_glyph(char ch) {
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const auto& g : kFont) {
    if (g.ch == ch) return &g;
  }
  return nullptr;
}

inline constexpr int kCaptionScale = 2;
inline constexpr int kCaptionPad = 2;

}  // namespace detail

/// Pixel rectangle covered by a caption box anchored at the top-left corner,
/// clipped to the image. Zero-sized when the caption is empty.
struct CaptionBox {
  int width = 0;
  int height = 0;

  bool contains(int row, int col) const noexcept { return row < height && col < width; }
};

inline CaptionBox caption_box(std::string_view caption, int image_width, int image_height) {
  if (caption.empty()) return {};
  const int s = detail::kCaptionScale;
  const int text_w = static_cast<int>(caption.size()) * 6 * s - s;
  const int w = text_w + 2 * detail::kCaptionPad;
  const int h = 7 * s + 2 * detail::kCaptionPad;
  return CaptionBox{std::min(w, image_width), std::min(h, image_height)};
}

namespace detail {

inline void draw_caption(Image& img, std::string_view caption, Rgb text_color) {
  const CaptionBox box = caption_box(caption, img.width(), img.height());
  for (int r = 0; r < box.height; ++r) {
    for (int c = 0; c < box.width; ++c) img.at(r, c) = Rgb{0, 0, 0};
  }
  const int s = kCaptionScale;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    const Glyph* g = find_glyph(caption[i]);
    if (g == nullptr) g = find_glyph('#');
    const int x0 = kCaptionPad + static_cast<int>(i) * 6 * s;
    for (int gy = 0; gy < 7; ++gy) {
      for (int gx = 0; gx < 5; ++gx) {
        if (((g->rows[gy] >> (4 - gx)) & 1U) == 0) continue;
        for (int dy = 0; dy < s; ++dy) {
          for (int dx = 0; dx < s; ++dx) {
            const int r = kCaptionPad + gy * s + dy;
            const int c = x0 + gx * s + dx;
            if (box.contains(r, c)) img.at(r, c) = text_color;
          }
        }
      }
    }
  }
}

inline std::uint8_t blend_channel(std::uint8_t base, std::uint8_t fill, double alpha) {
  const double v = base + (static_cast<double>(fill) - base) * alpha;
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

}  // namespace detail

/// Pixels outside the mask within Chebyshev distance `width` of it.
inline RasterMask outline_ring(const RasterMask& mask, int width) {
  const int w = mask.width();
  const int h = mask.height();
  // Separable square dilation: rows first, then columns.
  std::vector<std::uint8_t> horiz(mask.pixel_count(), 0);
  for (int r = 0; r < h; ++r) {
    int last = -1000000;
    for (int c = 0; c < w; ++c) {
      if (mask.get(r, c)) last = c;
      if (c - last <= width) horiz[static_cast<std::size_t>(r) * w + c] = 1;
    }
    last = 1000000;
    for (int c = w - 1; c >= 0; --c) {
      if (mask.get(r, c)) last = c;
      if (last - c <= width) horiz[static_cast<std::size_t>(r) * w + c] = 1;
    }
  }
  RasterMask ring(w, h);
  for (int c = 0; c < w; ++c) {
    int last = -1000000;
    std::vector<std::uint8_t> col(static_cast<std::size_t>(h), 0);
    for (int r = 0; r < h; ++r) {
      if (horiz[static_cast<std::size_t>(r) * w + c]) last = r;
      if (r - last <= width) col[r] = 1;
    }
    last = 1000000;
    for (int r = h - 1; r >= 0; --r) {
      if (horiz[static_cast<std::size_t>(r) * w + c]) last = r;
      if (last - r <= width) col[r] = 1;
    }
    for (int r = 0; r < h; ++r) {
      if (col[r] && !mask.get(r, c)) ring.set(r, c);
    }
  }
  return ring;
}

/// Alpha-composites the fill over masked pixels, draws the outline ring and
/// burns the caption into the top-left corner. Output size equals input size.
inline Image render_overlay(const Image& image, const RasterMask& mask, const OverlayStyle& style) {
  require_image_shape(image, mask, "render_overlay");
  style.validate();
  Image out = image;
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      if (!mask.get(r, c)) continue;
      const Rgb& p = image.at(r, c);
      out.at(r, c) = Rgb{detail::blend_channel(p.r, style.fill_color.r, style.fill_alpha),
                         detail::blend_channel(p.g, style.fill_color.g, style.fill_alpha),
                         detail::blend_channel(p.b, style.fill_color.b, style.fill_alpha)};
    }
  }
  if (!mask.empty()) {
    const RasterMask ring = outline_ring(mask, style.outline_width);
    for (int r = 0; r < image.height(); ++r) {
      for (int c = 0; c < image.width(); ++c) {
        if (ring.get(r, c)) out.at(r, c) = style.outline_color;
      }
    }
  }
  if (!style.caption.empty()) detail::draw_caption(out, style.caption, style.fill_color);
  return out;
}

inline std::string candidate_caption(int id) { return "cand " + std::to_string(id); }

/// Working-mask overlay first, then one overlay per candidate in id order.
inline std::vector<CaptionedImage> examine_each_mask(const Image& image, std::span<const CandidateMask> candidates,
                                                     const RasterMask& working, const OverlayStyle& base = {}) {
  require_image_shape(image, working, "examine_each_mask");
  std::vector<const CandidateMask*> ordered;
  for (const auto& c : candidates) {
    require_image_shape(image, c.mask, "examine_each_mask");
    ordered.push_back(&c);
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto* a, const auto* b) { return a->candidate_id < b->candidate_id; });

  std::vector<CaptionedImage> out;
  out.reserve(ordered.size() + 1);
  OverlayStyle style = base;
  style.fill_color = kWorkingColor;
  style.outline_color = kWorkingColor;
  style.caption = "working";
  out.push_back({style.caption, render_overlay(image, working, style)});
  for (const auto* c : ordered) {
    style = base;
    style.fill_color = palette_color(c->candidate_id);
    style.outline_color = style.fill_color;
    style.caption = candidate_caption(c->candidate_id);
    out.push_back({style.caption, render_overlay(image, c->mask, style)});
  }
  return out;
}

/// Tiles overlays row-major into one image (grid transport mode).
inline CaptionedImage compose_grid(std::span<const CaptionedImage> tiles, int gap = 4) {
  if (tiles.empty()) throw Error(Errc::EmptyInput, "compose_grid needs at least one tile");
  int cell_w = 0;
  int cell_h = 0;
  for (const auto& t : tiles) {
    cell_w = std::max(cell_w, t.image.width());
    cell_h = std::max(cell_h, t.image.height());
  }
  const int n = static_cast<int>(tiles.size());
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  Image grid(cols * cell_w + (cols - 1) * gap, rows * cell_h + (rows - 1) * gap, Rgb{255, 255, 255});
  std::string caption;
  for (int i = 0; i < n; ++i) {
    const auto& t = tiles[static_cast<std::size_t>(i)];
    const int r0 = (i / cols) * (cell_h + gap);
    const int c0 = (i % cols) * (cell_w + gap);
    for (int r = 0; r < t.image.height(); ++r) {
      for (int c = 0; c < t.image.width(); ++c) grid.at(r0 + r, c0 + c) = t.image.at(r, c);
    }
    if (!caption.empty()) caption += ", ";
    caption += t.caption;
  }
  return {"grid: " + caption, std::move(grid)};
}

}  // namespace vasa
