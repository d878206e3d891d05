#pragma once

#include <cstdint>
#include <vector>

#include "fseg/errors.hpp"

namespace fseg {

// Interleaved 8-bit raster, row-major, channel-fastest.
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h, int w, int c, uint8_t fill = 0)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  uint8_t& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return data.empty(); }
};

// Per-pixel class ids with a reserved unlabeled value. Classes occupy
// 0..253; 255 marks pixels without ground truth, so label maps round-trip
// through 8-bit grayscale PNG unchanged.
struct LabelMap {
  static constexpr uint8_t kUnlabeled = 255;
  static constexpr int kMaxClasses = 254;

  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;

  LabelMap() = default;
  LabelMap(int h, int w, uint8_t fill = kUnlabeled)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }

  size_t pixel_count() const { return values.size(); }

  bool fully_labeled() const {
    for (uint8_t v : values)
      if (v == kUnlabeled) return false;
    return true;
  }
};

}  // namespace fseg
