#pragma once

#include <string>

#include "fseg/image.hpp"

namespace fseg {

// 8-bit PNG readers/writers backed by libpng. Writers use fixed encoder
// settings and emit no ancillary chunks, so identical pixels give identical
// bytes.
ImageU8 read_png(const std::string& path);            // gray (1ch) or RGB (3ch)
void write_png(const std::string& path, const ImageU8& image);

LabelMap read_label_png(const std::string& path);     // must be single-channel
void write_label_png(const std::string& path, const LabelMap& labels);

}  // namespace fseg
