#include "lseg/mat.hpp"

#include <cmath>

namespace lseg {

Mat::Mat(int r, int c, double fill) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw shape_error("Mat: negative dimensions");
  a.assign(static_cast<size_t>(r) * static_cast<size_t>(c), fill);
}

Mat Mat::vec(std::initializer_list<double> xs) {
  Mat m(static_cast<int>(xs.size()), 1);
  int i = 0;
  for (double x : xs) m[i++] = x;
  return m;
}

Mat Mat::colvec(const std::vector<double>& xs) {
  Mat m(static_cast<int>(xs.size()), 1);
  for (int i = 0; i < m.rows; ++i) m[i] = xs[static_cast<size_t>(i)];
  return m;
}

Mat Mat::identity(int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

bool Mat::all_finite() const {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

void require_vector(const Mat& m, int dim, const char* what) {
  if (!m.is_vector() || m.rows != dim)
    throw shape_error(std::string(what) + ": expected " + std::to_string(dim) +
                      "-vector, got " + std::to_string(m.rows) + "x" +
                      std::to_string(m.cols));
}

void require_same_shape(const Mat& x, const Mat& y, const char* what) {
  if (!x.same_shape(y))
    throw shape_error(std::string(what) + ": shape mismatch " +
                      std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                      " vs " + std::to_string(y.rows) + "x" +
                      std::to_string(y.cols));
}

Mat matvec(const Mat& w, const Mat& x) {
  if (!x.is_vector() || w.cols != x.rows)
    throw shape_error("matvec: " + std::to_string(w.rows) + "x" +
                      std::to_string(w.cols) + " times " +
                      std::to_string(x.rows) + "x" + std::to_string(x.cols));
  Mat y(w.rows, 1);
  for (int r = 0; r < w.rows; ++r) {
    double s = 0.0;
    const double* wr = w.a.data() + static_cast<size_t>(r) * w.cols;
    for (int c = 0; c < w.cols; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
  return y;
}

Mat add(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "add");
  Mat z = x;
  for (int i = 0; i < z.size(); ++i) z[i] += y[i];
  return z;
}

Mat sub(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "sub");
  Mat z = x;
  for (int i = 0; i < z.size(); ++i) z[i] -= y[i];
  return z;
}

Mat hadamard(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "hadamard");
  Mat z = x;
  for (int i = 0; i < z.size(); ++i) z[i] *= y[i];
  return z;
}

Mat scale(const Mat& x, double k) {
  Mat z = x;
  for (int i = 0; i < z.size(); ++i) z[i] *= k;
  return z;
}

double dot(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "dot");
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double squared_norm(const Mat& x) { return dot(x, x); }

double mean_of(const Mat& x) {
  if (x.size() == 0) return 0.0;
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x[i];
  return s / x.size();
}

Mat concat_rows(const std::vector<const Mat*>& parts) {
  int total = 0;
  for (const Mat* p : parts) {
    if (!p->is_vector()) throw shape_error("concat_rows: parts must be column vectors");
    total += p->rows;
  }
  Mat out(total, 1);
  int off = 0;
  for (const Mat* p : parts) {
    for (int i = 0; i < p->rows; ++i) out[off + i] = (*p)[i];
    off += p->rows;
  }
  return out;
}

Mat row_of(const Mat& m, int r) {
  if (r < 0 || r >= m.rows) throw shape_error("row_of: row out of range");
  Mat out(m.cols, 1);
  for (int c = 0; c < m.cols; ++c) out[c] = m.at(r, c);
  return out;
}

double cosine_similarity(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "cosine_similarity");
  double nx = std::sqrt(squared_norm(x));
  double ny = std::sqrt(squared_norm(y));
  if (nx < 1e-12 || ny < 1e-12) return 0.0;
  return dot(x, y) / (nx * ny);
}

}  // namespace lseg
