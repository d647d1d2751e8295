#pragma once

#include <filesystem>
#include <span>

namespace evf {

// 8-bit grayscale PNG; values clamped from [0,1]
void write_png_gray(const std::filesystem::path& p, std::span<const float> intensity, int h, int w);

}  // namespace evf
