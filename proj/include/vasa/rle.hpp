#pragma once

// Uncompressed COCO-style run-length encoding.
//
// Pixels are scanned column-major (index = c * height + r). Runs alternate
// background/foreground starting with background, so a mask whose first
// scanned pixel is set starts with a zero count.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/error.hpp"
#include "vasa/mask.hpp"

namespace vasa {

struct Rle {
  int width = 0;
  int height = 0;
  std::vector<std::uint64_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

inline Rle rle_encode(const RasterMask& m) {
  Rle r{m.width(), m.height(), {}};
  bool current = false;
  std::uint64_t run = 0;
  for (int c = 0; c < m.width(); ++c) {
    for (int row = 0; row < m.height(); ++row) {
      const bool v = m.get(row, c);
      if (v != current) {
        r.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

/// Checks the structural invariants without decoding.
inline void validate_rle(const Rle& r, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(Errc::MalformedRle, "non-positive RLE size");
  if (r.width != width || r.height != height) {
    throw Error(Errc::MalformedRle, "RLE size " + std::to_string(r.width) + "x" +
                                        std::to_string(r.height) + " does not match expected " +
                                        std::to_string(width) + "x" + std::to_string(height));
  }
  const std::uint64_t total = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    if (i > 0 && r.counts[i] == 0) {
      throw Error(Errc::MalformedRle, "zero-length run at position " + std::to_string(i));
    }
    if (r.counts[i] > total - sum) {
      throw Error(Errc::MalformedRle, "run lengths exceed " + std::to_string(total) + " pixels");
    }
    sum += r.counts[i];
  }
  if (sum != total) {
    throw Error(Errc::MalformedRle, "run lengths sum to " + std::to_string(sum) + ", expected " +
                                        std::to_string(total));
  }
}

inline RasterMask rle_decode(const Rle& r, int width, int height) {
  validate_rle(r, width, height);
  RasterMask m(width, height);
  std::uint64_t pos = 0;
  bool value = false;
  const auto h = static_cast<std::uint64_t>(height);
  for (auto run : r.counts) {
    if (value) {
      for (std::uint64_t i = pos; i < pos + run; ++i) {
        m.set(static_cast<int>(i % h), static_cast<int>(i / h));
      }
    }
    pos += run;
    value = !value;
  }
  return m;
}

inline RasterMask rle_decode(const Rle& r) { return rle_decode(r, r.width, r.height); }

/// {"size":[height,width],"counts":[...]}
inline nlohmann::json rle_to_json(const Rle& r) {
  return nlohmann::json{{"size", {r.height, r.width}}, {"counts", r.counts}};
}

inline Rle rle_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts")) {
    throw Error(Errc::MalformedRle, "RLE object needs \"size\" and \"counts\"");
  }
  const auto& size = j.at("size");
  const auto& counts = j.at("counts");
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() ||
      !size[1].is_number_integer()) {
    throw Error(Errc::MalformedRle, "\"size\" must be [height, width]");
  }
  if (!counts.is_array()) {
    throw Error(Errc::MalformedRle, "\"counts\" must be an integer array (compressed RLE unsupported)");
  }
  Rle r;
  r.height = size[0].get<int>();
  r.width = size[1].get<int>();
  r.counts.reserve(counts.size());
  for (const auto& c : counts) {
    if (!c.is_number_integer() || c.get<std::int64_t>() < 0) {
      throw Error(Errc::MalformedRle, "run lengths must be non-negative integers");
    }
    r.counts.push_back(c.get<std::uint64_t>());
  }
  return r;
}

}  // namespace vasa
