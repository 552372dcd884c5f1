#include "flexbody/pca.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace flexbody {

PcaResult pca2(const std::vector<Vec>& points) {
  if (points.size() < 2) throw std::invalid_argument("pca2: need at least 2 points");
  const int d = int(points[0].size());
  const int n = int(points.size());
  Mat x(n, d);
  for (int i = 0; i < n; ++i) x.row(i) = points[i].transpose();

  Vec mean = x.colwise().mean();
  Mat centered = x.rowwise() - mean.transpose();
  Mat cov = centered.transpose() * centered / double(n);

  PcaResult out;
  if (centered.cwiseAbs().maxCoeff() < 1e-12) {
    out.degenerate = true;
    out.components = Mat::Identity(d, d);
    out.eigenvalues = Vec::Zero(d);
    out.projected = Mat::Zero(n, d);
    return out;
  }

  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  out.components = Mat(d, d);
  out.eigenvalues = Vec(d);
  // SelfAdjointEigenSolver orders ascending; flip to descending.
  for (int c = 0; c < d; ++c) {
    out.eigenvalues[c] = eig.eigenvalues()[d - 1 - c];
    Vec comp = eig.eigenvectors().col(d - 1 - c);
    int imax = 0;
    comp.cwiseAbs().maxCoeff(&imax);
    if (comp[imax] < 0) comp = -comp;
    out.components.col(c) = comp;
  }
  out.projected = centered * out.components;
  return out;
}

}  // namespace flexbody
