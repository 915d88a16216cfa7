#pragma once

// Binary raster masks and the Boolean edit engine behind update_working_mask.
//
// Bits are packed row-major into 64-bit words (pixel index r * width + c).
// Bits past width * height in the last word are always zero, which keeps
// word-wise equality, popcount and complement exact.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vasa/error.hpp"

namespace vasa {

class RasterMask {
 public:
  RasterMask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw Error(Errc::InvalidArgument, "mask dimensions must be positive, got " +
                                             std::to_string(width) + "x" + std::to_string(height));
    }
    words_.assign((pixel_count() + 63) / 64, 0);
  }

  static RasterMask full(int width, int height) {
    RasterMask m(width, height);
    std::fill(m.words_.begin(), m.words_.end(), ~std::uint64_t{0});
    m.clear_tail();
    return m;
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  bool same_shape(const RasterMask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool get(int row, int col) const { return test_index(index(row, col)); }

  void set(int row, int col, bool value = true) {
    const std::size_t i = index(row, col);
    const std::uint64_t bit = std::uint64_t{1} << (i % 64);
    if (value) {
      words_[i / 64] |= bit;
    } else {
      words_[i / 64] &= ~bit;
    }
  }

  bool test_index(std::size_t i) const noexcept { return (words_[i / 64] >> (i % 64)) & 1U; }

  std::span<const std::uint64_t> words() const noexcept { return words_; }

  std::size_t area() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  bool empty() const noexcept {
    return std::all_of(words_.begin(), words_.end(), [](auto w) { return w == 0; });
  }

  friend bool operator==(const RasterMask&, const RasterMask&) = default;

 private:
  template <class Op>
  friend RasterMask combine(const RasterMask& a, const RasterMask& b, Op op, std::string_view what);
  friend RasterMask complement(const RasterMask& m);

  std::size_t index(int row, int col) const {
    if (row < 0 || row >= height_ || col < 0 || col >= width_) {
      throw Error(Errc::InvalidArgument, "pixel (" + std::to_string(row) + "," +
                                             std::to_string(col) + ") outside mask");
    }
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  void clear_tail() noexcept {
    const std::size_t tail = pixel_count() % 64;
    if (tail != 0) words_.back() &= (std::uint64_t{1} << tail) - 1;
  }

  int width_;
  int height_;
  std::vector<std::uint64_t> words_;
};

inline void require_same_shape(const RasterMask& a, const RasterMask& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw Error(Errc::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a.width()) + "x" +
                    std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                    std::to_string(b.height()));
  }
}

template <class Op>
RasterMask combine(const RasterMask& a, const RasterMask& b, Op op, std::string_view what) {
  require_same_shape(a, b, what);
  RasterMask out(a.width(), a.height());
  for (std::size_t i = 0; i < out.words_.size(); ++i) out.words_[i] = op(a.words_[i], b.words_[i]);
  out.clear_tail();
  return out;
}

inline RasterMask unite(const RasterMask& a, const RasterMask& b) {
  return combine(a, b, [](auto x, auto y) { return x | y; }, "union");
}

inline RasterMask intersect(const RasterMask& a, const RasterMask& b) {
  return combine(a, b, [](auto x, auto y) { return x & y; }, "intersect");
}

inline RasterMask subtract(const RasterMask& a, const RasterMask& b) {
  return combine(a, b, [](auto x, auto y) { return x & ~y; }, "subtract");
}

inline RasterMask complement(const RasterMask& m) {
  RasterMask out(m.width(), m.height());
  for (std::size_t i = 0; i < out.words_.size(); ++i) out.words_[i] = ~m.words_[i];
  out.clear_tail();
  return out;
}

inline std::size_t area(const RasterMask& m) noexcept { return m.area(); }

/// |a ∩ b| without materializing the intersection.
inline std::size_t intersection_area(const RasterMask& a, const RasterMask& b) {
  require_same_shape(a, b, "intersection_area");
  std::size_t n = 0;
  auto wa = a.words();
  auto wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) n += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
  return n;
}

inline bool is_subset(const RasterMask& a, const RasterMask& b) {
  return intersection_area(a, b) == a.area();
}

inline RasterMask merge_all(std::span<const RasterMask> masks) {
  if (masks.empty()) throw Error(Errc::EmptyInput, "merge_all needs at least one mask");
  RasterMask out = masks.front();
  for (const auto& m : masks.subspan(1)) out = unite(out, m);
  return out;
}

enum class EditOp { Add, Remove, Replace };

constexpr std::string_view to_string(EditOp op) {
  switch (op) {
    case EditOp::Add: return "add";
    case EditOp::Remove: return "remove";
    case EditOp::Replace: return "replace";
  }
  return "add";
}

inline std::optional<EditOp> parse_edit_op(std::string_view text) {
  if (text == "add") return EditOp::Add;
  if (text == "remove") return EditOp::Remove;
  if (text == "replace") return EditOp::Replace;
  return std::nullopt;
}

/// Applies one working-mask edit. Multi-mask selections are unioned first.
/// The input mask is never modified; a new value is returned.
inline RasterMask apply_edit(const RasterMask& working, EditOp op,
                             std::span<const RasterMask> selected) {
  if (selected.empty()) throw Error(Errc::EmptyInput, "apply_edit needs at least one selected mask");
  RasterMask merged = merge_all(selected);
  require_same_shape(working, merged, "apply_edit");
  switch (op) {
    case EditOp::Add: return unite(working, merged);
    case EditOp::Remove: return subtract(working, merged);
    case EditOp::Replace: return merged;
  }
  return merged;
}

/// FNV-1a over dimensions and packed bits; used as a compact trace fingerprint.
inline std::uint64_t digest(const RasterMask& m) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFFU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(m.width()));
  mix(static_cast<std::uint64_t>(m.height()));
  for (auto w : m.words()) mix(w);
  return h;
}

}  // namespace vasa
