#pragma once

#include "mnistgen/image.hpp"

namespace mnistgen::imgops {

// Bilinear resampling with half-pixel-centre alignment:
//   src = (dst + 0.5) * (in / out) - 0.5, clamped to the valid range,
// results rounded to nearest.
Image resize_bilinear(const Image& src, int out_w, int out_h);

// Rows/cols [floor((H-h)/2), floor((H-h)/2)+h).
Image center_crop(const Image& src, int out_w, int out_h);

// round((R+G+B)/3)
Image gray_mean(const Image& rgb);
// round(0.299R + 0.587G + 0.114B), evaluated in integer arithmetic.
Image gray_weighted(const Image& rgb);

// Luminance in [0,1] as doubles (unrounded weighted sum / 255).
std::vector<double> luminance(const Image& img);

}  // namespace mnistgen::imgops
