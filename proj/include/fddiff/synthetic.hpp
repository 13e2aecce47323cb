// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "fddiff/image.hpp"
#include "fddiff/rng.hpp"

namespace fddiff {

/// One RGB image in [0,1]: a smooth two-colour gradient, a few axis-aligned
/// rectangles and a sinusoidal texture over part of the frame.
Image synthetic_image(int size, Rng& rng);

/// Item i depends only on (seed, i).
std::vector<Image> synthetic_dataset(int count, int size, std::uint64_t seed);

}  // namespace fddiff
