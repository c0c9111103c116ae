#include "restok/mask.hpp"

RESTOK_BEGIN_NAMESPACE

int BoolMatrix::row_count(int r) const {
  int n = 0;
  for (int c = 0; c < cols_; ++c) n += bits_[index(r, c)];
  return n;
}

BoolMatrix BoolMatrix::row_slice(int begin, int count) const {
  BoolMatrix out(count, cols_);
  for (int r = 0; r < count; ++r) {
    for (int c = 0; c < cols_; ++c) out.set(r, c, (*this)(begin + r, c));
  }
  return out;
}

BoolMatrix BoolMatrix::block(int row_begin, int nrows, int col_begin, int ncols) const {
  BoolMatrix out(nrows, ncols);
  for (int r = 0; r < nrows; ++r) {
    for (int c = 0; c < ncols; ++c) out.set(r, c, (*this)(row_begin + r, col_begin + c));
  }
  return out;
}

RESTOK_END_NAMESPACE
