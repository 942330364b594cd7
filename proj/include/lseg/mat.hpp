#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace lseg {

// Shape mismatches are programming errors and are reported eagerly.
class shape_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A kernel produced or was fed a non-finite value.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of 64-bit floats. Column vectors are n x 1.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0);

  static Mat vec(std::initializer_list<double> xs);
  static Mat colvec(const std::vector<double>& xs);
  static Mat identity(int n);

  int size() const { return rows * cols; }
  bool is_vector() const { return cols == 1; }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  double& operator[](int i) { return a[static_cast<size_t>(i)]; }
  double operator[](int i) const { return a[static_cast<size_t>(i)]; }
  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  bool all_finite() const;
};

void require_vector(const Mat& m, int dim, const char* what);
void require_same_shape(const Mat& x, const Mat& y, const char* what);

Mat matvec(const Mat& w, const Mat& x);  // (m x n)(n x 1) -> (m x 1)
Mat add(const Mat& x, const Mat& y);
Mat sub(const Mat& x, const Mat& y);
Mat hadamard(const Mat& x, const Mat& y);
Mat scale(const Mat& x, double k);
double dot(const Mat& x, const Mat& y);
double squared_norm(const Mat& x);
double mean_of(const Mat& x);

// Stacks column vectors top to bottom.
Mat concat_rows(const std::vector<const Mat*>& parts);
// Row r of a T x F matrix as an F x 1 column vector.
Mat row_of(const Mat& m, int r);
// Cosine similarity; 0 when either vector has near-zero norm.
double cosine_similarity(const Mat& x, const Mat& y);

}  // namespace lseg
