// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <set>

#include "fddiff/errors.hpp"
#include "fddiff/wpt.hpp"
#include "helpers.hpp"

using namespace fddiff;
using fddiff::test::max_diff;
using fddiff::test::random_image;

namespace {

Image from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  Image img(1, int(rows.size()), int(rows.begin()->size()));
  int y = 0;
  for (const auto& r : rows) {
    int x = 0;
    for (float v : r) img.at(0, y, x++) = v;
    ++y;
  }
  return img;
}

// Sign changes of the basis function along one axis, counted on the
// synthesized impulse response of a single band.
int sign_changes(const std::vector<float>& line) {
  int n = 0;
  for (std::size_t i = 1; i < line.size(); ++i)
    if ((line[i] > 0) != (line[i - 1] > 0)) ++n;
  return n;
}

Image band_basis(int stage, int index) {
  CoeffStack c;
  c.stage = stage;
  c.channels = 1;
  c.base_height = c.base_width = 1;
  for (const auto& key : subband_order(stage)) c.bands.push_back({key, Image(1, 1, 1, 0.0f)});
  c.bands[std::size_t(index)].plane.data[0] = 1.0f;
  return restore(c, stage);
}

}  // namespace

TEST_SUITE("wpt") {
  TEST_CASE("analysis of the 2x2 example") {
    const CoeffStack c = analyze_once(from_rows({{1, 2}, {3, 4}}));
    REQUIRE(c.present_bands() == 4);
    CHECK(c.key_of(0) == SubbandKey{0, 0, 1});
    CHECK(c.key_of(1) == SubbandKey{0, 1, 1});
    CHECK(c.key_of(2) == SubbandKey{1, 0, 1});
    CHECK(c.key_of(3) == SubbandKey{1, 1, 1});
    CHECK(c.bands[0].plane.data[0] == doctest::Approx(2.5));
    CHECK(c.bands[1].plane.data[0] == doctest::Approx(-0.5));
    CHECK(c.bands[2].plane.data[0] == doctest::Approx(-1.0));
    CHECK(c.bands[3].plane.data[0] == doctest::Approx(0.0));
  }

  TEST_CASE("synthesis inverts the 2x2 example") {
    CoeffStack c;
    c.stage = 1;
    c.channels = 1;
    c.base_height = c.base_width = 1;
    const float vals[4] = {2.5f, -0.5f, -1.0f, 0.0f};
    const auto keys = subband_order(1);
    for (int i = 0; i < 4; ++i) c.bands.push_back({keys[std::size_t(i)], Image(1, 1, 1, vals[i])});
    const Image img = synthesize_once(c);
    CHECK(max_diff(img, from_rows({{1, 2}, {3, 4}})) == 0.0);
  }

  TEST_CASE("lowpass-only quartet synthesizes a constant block") {
    CoeffStack c;
    c.stage = 1;
    c.channels = 1;
    c.base_height = c.base_width = 1;
    for (const auto& k : subband_order(1)) c.bands.push_back({k, Image(1, 1, 1, k.row_sequency + k.col_sequency ? 0.f : 0.7f)});
    CHECK(max_diff(synthesize_once(c), Image(1, 2, 2, 0.7f)) == 0.0);
  }

  TEST_CASE("constant image has only the lowpass band") {
    for (int p = 1; p <= 3; ++p) {
      const CoeffStack c = decompose(Image(3, 16, 16, 0.3f), p);
      for (int i = 0; i < c.present_bands(); ++i)
        for (float v : c.bands[std::size_t(i)].plane.data) CHECK(v == doctest::Approx(i == 0 ? 0.3 : 0.0));
    }
  }

  TEST_CASE("single-stage round trips") {
    const Image x = random_image(3, 10, 6, 1);
    CHECK(max_diff(synthesize_once(analyze_once(x)), x) <= 1e-6);
    const CoeffStack c = analyze_once(x);
    const CoeffStack c2 = analyze_once(synthesize_once(c));
    for (int i = 0; i < 4; ++i) CHECK(max_diff(c.bands[std::size_t(i)].plane, c2.bands[std::size_t(i)].plane) <= 1e-6);
  }

  TEST_CASE("decompose shapes") {
    const CoeffStack c = decompose(random_image(3, 8, 8, 2), 2);
    CHECK(c.present_bands() == 16);
    CHECK(c.base_height == 2);
    CHECK(c.base_width == 2);
    int planes = 0;
    for (const auto& b : c.bands) {
      CHECK(b.plane.channels == 3);
      CHECK(b.plane.height == 2);
      CHECK(b.plane.width == 2);
      planes += b.plane.channels;
    }
    CHECK(planes == 48);
  }

  TEST_CASE("column-alternating image lands in the (0,1) band") {
    Image x(1, 4, 4);
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) x.at(0, y, xx) = xx % 2 ? -1.0f : 1.0f;
    const CoeffStack c = decompose(x, 1);
    for (const auto& b : c.bands) {
      const bool target = b.key == SubbandKey{0, 1, 1};
      for (float v : b.plane.data) CHECK(v == doctest::Approx(target ? 1.0 : 0.0));
    }
  }

  TEST_CASE("band 1 is the block average") {
    const Image x = random_image(3, 16, 24, 3);
    for (int p = 1; p <= 3; ++p)
      CHECK(max_diff(decompose(x, p).bands[0].plane, fddiff::test::pool_reference(x, 1 << p)) <= 1e-6);
  }

  TEST_CASE("sequency of each band matches the sign changes of its basis function") {
    for (int stage = 1; stage <= 3; ++stage) {
      const auto keys = subband_order(stage);
      const int n = 1 << stage;
      for (int i = 0; i < int(keys.size()); ++i) {
        const Image basis = band_basis(stage, i);
        std::vector<float> down(static_cast<std::size_t>(n)), across(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
          down[std::size_t(k)] = basis.at(0, k, 0);
          across[std::size_t(k)] = basis.at(0, 0, k);
        }
        CHECK(sign_changes(down) == keys[std::size_t(i)].row_sequency);
        CHECK(sign_changes(across) == keys[std::size_t(i)].col_sequency);
        // Separable ±1 basis: every entry has unit magnitude.
        for (float v : basis.data) CHECK(std::abs(v) == 1.0f);
      }
    }
  }

  TEST_CASE("gray code maps sequency to filter path and back") {
    for (int s = 0; s < 64; ++s) {
      CHECK(path_to_sequency(sequency_to_path(s)) == s);
      CHECK(sequency_to_path(s) == (s ^ (s >> 1)));
    }
  }

  TEST_CASE("ordering is a strict total order with a unique zero band") {
    for (int stage = 0; stage <= 3; ++stage) {
      const auto keys = subband_order(stage);
      CHECK(keys.size() == std::size_t(1) << (2 * stage));
      CHECK(keys[0] == SubbandKey{0, 0, stage});
      std::set<std::pair<int, int>> seen;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        seen.insert({keys[i].row_sequency, keys[i].col_sequency});
        if (i > 0) {
          CHECK(frequency_less(keys[i - 1], keys[i]));
          CHECK_FALSE(frequency_less(keys[i], keys[i - 1]));
          CHECK((keys[i].row_sequency | keys[i].col_sequency) != 0);
        }
      }
      CHECK(seen.size() == keys.size());
    }
  }

  TEST_CASE("the first 4^k bands form the stage-k subtree") {
    for (int p = 1; p <= 4; ++p) {
      const auto keys = subband_order(p);
      for (int k = 0; k <= p; ++k)
        for (int i = 0; i < (1 << (2 * k)); ++i) {
          CHECK(keys[std::size_t(i)].row_sequency < (1 << k));
          CHECK(keys[std::size_t(i)].col_sequency < (1 << k));
        }
    }
  }

  TEST_CASE("lowpass_select") {
    const Image x = random_image(3, 8, 8, 4);
    const CoeffStack c = decompose(x, 2);
    const CoeffStack one = lowpass_select(c, 1);
    REQUIRE(one.present_bands() == 1);
    CHECK(one.key_of(0) == SubbandKey{0, 0, 2});
    const CoeffStack four = lowpass_select(c, 4);
    REQUIRE(four.present_bands() == 4);
    std::set<std::pair<int, int>> got;
    for (const auto& b : four.bands) got.insert({b.key.row_sequency, b.key.col_sequency});
    CHECK(got == std::set<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(max_diff(restore(lowpass_select(c, 16), 2), x) <= 1e-5);
    CHECK_THROWS_AS(lowpass_select(c, 0), ArgumentError);
    CHECK_THROWS_AS(lowpass_select(c, 17), ArgumentError);
  }

  TEST_CASE("restore examples") {
    const Image x = random_image(3, 8, 12, 5);
    const CoeffStack c1 = decompose(x, 1);
    const Image band1 = c1.bands[0].plane;
    CHECK(max_diff(restore(lowpass_select(c1, 1), 1), upsample_nearest(band1, 2)) == 0.0);
    CHECK(max_diff(restore(lowpass_select(c1, 1), 0), fddiff::test::pool_reference(x, 2)) <= 1e-6);
    CHECK_THROWS_AS(restore(lowpass_select(decompose(x, 2), 5), 1), ArgumentError);
    CHECK_THROWS_AS(restore(c1, 4), ArgumentError);
  }

  TEST_CASE("zero-detail synthesis equals nearest upsampling bitwise") {
    const Image x = random_image(2, 8, 8, 6);
    for (int p = 1; p <= 3; ++p) {
      const CoeffStack c = lowpass_select(decompose(x, p), 1);
      const Image up = restore(c, p);
      CHECK(max_diff(up, upsample_nearest(c.bands[0].plane, 1 << p)) == 0.0);
    }
  }

  TEST_CASE("linearity") {
    const Image a = random_image(3, 16, 16, 7), b = random_image(3, 16, 16, 8);
    Image mix(3, 16, 16);
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = 0.3f * a.data[i] - 1.7f * b.data[i];
    for (int p = 1; p <= 3; ++p) {
      const CoeffStack ca = decompose(a, p), cb = decompose(b, p), cm = decompose(mix, p);
      for (std::size_t k = 0; k < cm.bands.size(); ++k)
        for (std::size_t i = 0; i < cm.bands[k].plane.size(); ++i)
          CHECK(std::abs(cm.bands[k].plane.data[i] -
                         (0.3 * ca.bands[k].plane.data[i] - 1.7 * cb.bands[k].plane.data[i])) <= 1e-6);
    }
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(analyze_once(Image(1, 3, 4)), DimensionError);
    CHECK_THROWS_AS(decompose(Image(1, 12, 12), 3), DimensionError);
    CoeffStack bad = analyze_once(Image(1, 2, 2));
    bad.bands.pop_back();
    CHECK_THROWS_AS(synthesize_once(bad), StructureError);
  }

  TEST_CASE("stage_for_band_count is ceil(log4 m)") {
    CHECK(stage_for_band_count(1) == 0);
    CHECK(stage_for_band_count(2) == 1);
    CHECK(stage_for_band_count(4) == 1);
    CHECK(stage_for_band_count(5) == 2);
    CHECK(stage_for_band_count(16) == 2);
    CHECK(stage_for_band_count(17) == 3);
    CHECK(stage_for_band_count(64) == 3);
  }
}
