#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "restok/real.hpp"

RESTOK_BEGIN_NAMESPACE

// Dense boolean matrix; true means the row token may attend the column token.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(int rows, int cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(static_cast<std::size_t>(rows) * cols, fill ? 1 : 0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool operator()(int r, int c) const { return bits_[index(r, c)] != 0; }
  void set(int r, int c, bool v) { bits_[index(r, c)] = v ? 1 : 0; }
  int row_count(int r) const;

  // Rows [begin, begin+count) as a new matrix.
  BoolMatrix row_slice(int begin, int count) const;
  BoolMatrix block(int row_begin, int row_count, int col_begin, int col_count) const;
  bool operator==(const BoolMatrix& o) const = default;

 private:
  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols_ + c; }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Rotary position ids (t, y, x) per token.
using PositionTriple = std::array<int, 3>;
using PositionTriples = std::vector<PositionTriple>;

RESTOK_END_NAMESPACE
