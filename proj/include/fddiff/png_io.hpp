// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "fddiff/image.hpp"

namespace fddiff {

/// Any PNG (paletted, gray, 16-bit, alpha) decoded to 8-bit RGB, then /255.
/// Throws DataError on unreadable or malformed files.
Image read_png(const std::filesystem::path& path);

/// 8-bit RGB; values clamped to [0,1], scaled by 255 and rounded half away
/// from zero. Expects 3 channels.
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace fddiff
