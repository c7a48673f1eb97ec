#pragma once

// The eight flip/rotation symmetries of a raster.
//
// Index i in 1..8 encodes T_i = R^k ∘ F^f with k = (i-1) % 4 quarter turns
// counter-clockwise and f = (i-1) / 4 horizontal flips (F applied first).
// T_1 is the identity, T_2..T_4 are pure rotations, T_5..T_8 involve a flip
// and are their own inverses.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pseudosr/errors.hpp"

namespace pseudosr {

class DihedralIndex {
 public:
  static constexpr int kCount = 8;

  constexpr explicit DihedralIndex(int i) : i_(i) {
    if (i < 1 || i > kCount) throw ConfigError("dihedral index must be in 1..8, got " + std::to_string(i));
  }

  static constexpr DihedralIndex identity() { return DihedralIndex(1); }
  static constexpr DihedralIndex from_parts(int quarter_turns, bool flip) {
    return DihedralIndex(((quarter_turns % 4) + 4) % 4 + (flip ? 4 : 0) + 1);
  }
  static constexpr std::array<DihedralIndex, kCount> all() {
    return {DihedralIndex(1), DihedralIndex(2), DihedralIndex(3), DihedralIndex(4),
            DihedralIndex(5), DihedralIndex(6), DihedralIndex(7), DihedralIndex(8)};
  }

  constexpr int value() const noexcept { return i_; }
  constexpr int quarter_turns() const noexcept { return (i_ - 1) % 4; }
  constexpr bool flips() const noexcept { return i_ > 4; }
  constexpr bool swaps_axes() const noexcept { return quarter_turns() % 2 == 1; }

  constexpr DihedralIndex inverse() const {
    if (flips()) return *this;
    return from_parts(4 - quarter_turns(), false);
  }

  /// Group product: (a * b)(img) == a(b(img)).
  friend constexpr DihedralIndex compose(DihedralIndex a, DihedralIndex b) {
    // R^ka F^fa R^kb F^fb = R^(ka + (fa ? -kb : kb)) F^(fa xor fb)
    const int k = a.quarter_turns() + (a.flips() ? -b.quarter_turns() : b.quarter_turns());
    return from_parts(k, a.flips() != b.flips());
  }

  friend constexpr bool operator==(DihedralIndex, DihedralIndex) = default;

  /// Output (height, width) for an input of (h, w).
  constexpr std::pair<int, int> output_extent(int h, int w) const noexcept {
    return swaps_axes() ? std::pair{w, h} : std::pair{h, w};
  }

  /// For every output pixel (row-major), the row-major index of the input pixel it copies.
  std::vector<std::size_t> source_indices(int h, int w) const {
    const auto [oh, ow] = output_extent(h, w);
    std::vector<std::size_t> idx(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        auto [sr, sc] = source_coord(r, c, h, w);
        idx[static_cast<std::size_t>(r) * ow + c] = static_cast<std::size_t>(sr) * w + sc;
      }
    return idx;
  }

  /// Input coordinate that lands on output coordinate (r, c), for an (h, w) input.
  constexpr std::pair<int, int> source_coord(int r, int c, int h, int w) const noexcept {
    // Undo the rotations one quarter turn at a time, then undo the flip.
    // A counter-clockwise quarter turn maps an (H, W) raster to (W, H) with
    // out(r, c) = in(c, W - 1 - r).
    int rows = output_extent(h, w).first;
    int cols = output_extent(h, w).second;
    for (int t = 0; t < quarter_turns(); ++t) {
      // (r, c) lives in a (rows, cols) raster produced from a (cols, rows) one.
      const int pr = c;
      const int pc = rows - 1 - r;
      r = pr;
      c = pc;
      std::swap(rows, cols);
    }
    if (flips()) c = cols - 1 - c;
    return {r, c};
  }

 private:
  int i_;
};

}  // namespace pseudosr
