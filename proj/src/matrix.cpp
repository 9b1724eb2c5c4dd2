#include "plaindet/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace plaindet {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error::shape("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b.row(p);
      for (int j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error::shape("matmul_nt: inner dimensions differ");
  Matrix c(a.rows(), b.rows());
  const int k = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ar[p] * br[p];
      cr[j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error::shape("matmul_tn: inner dimensions differ");
  Matrix c(a.cols(), b.cols());
  for (int p = 0; p < a.rows(); ++p) {
    const double* ar = a.row(p);
    const double* br = b.row(p);
    for (int i = 0; i < a.cols(); ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* cr = c.row(i);
      for (int j = 0; j < b.cols(); ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

double dot_rows(const Matrix& a, int i, const Matrix& b, int j) {
  double s = 0.0;
  const double* ar = a.row(i);
  const double* br = b.row(j);
  for (int p = 0; p < a.cols(); ++p) s += ar[p] * br[p];
  return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error::shape("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace plaindet
