#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace gen {

using Vec = std::vector<double>;

// Dense row-major matrix. Rows are the unit of sparse access (embedding
// tables are indexed by entity/relation id).
struct Mat {
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : data(r * c, 0.0), rows(r), cols(c) {}

  double* row(std::size_t r) {
    assert(r < rows);
    return data.data() + r * cols;
  }
  const double* row(std::size_t r) const {
    assert(r < rows);
    return data.data() + r * cols;
  }
  double& at(std::size_t r, std::size_t c) {
    assert(r < rows && c < cols);
    return data[r * cols + c];
  }
  double at(std::size_t r, std::size_t c) const {
    assert(r < rows && c < cols);
    return data[r * cols + c];
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void zero(Vec& v) { std::fill(v.begin(), v.end(), 0.0); }

}  // namespace gen
