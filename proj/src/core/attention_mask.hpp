#pragma once

#include <cstdint>
#include <vector>

#include "error.hpp"

namespace pprl {

// S x S visibility matrix: row = attending position, column = attended
// position. In decoder mode index 0 is the start-of-sequence slot.
struct AttentionMask {
  std::size_t size = 0;
  std::vector<std::uint8_t> visible;  // row-major

  AttentionMask() = default;
  explicit AttentionMask(std::size_t s) : size(s), visible(s * s, 0) {}

  bool at(std::size_t row, std::size_t col) const {
    return visible[row * size + col] != 0;
  }
  void set(std::size_t row, std::size_t col, bool v) {
    visible[row * size + col] = v ? 1 : 0;
  }

  static AttentionMask all_visible(std::size_t s) {
    AttentionMask m(s);
    for (auto& v : m.visible) v = 1;
    return m;
  }
};

}  // namespace pprl
