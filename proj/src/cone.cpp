#include "bilevel/cone.hpp"

#include <cmath>

namespace bilevel {

bool PolyhedralCone::contains(const VectorXd& d, double tol) const {
  if (d.size() != dim) return false;
  const double scale = tol * (1.0 + d.norm());
  if (E.rows() > 0 && (E * d).lpNorm<Eigen::Infinity>() > scale) return false;
  if (I.rows() > 0 && (I * d).maxCoeff() > scale) return false;
  return true;
}

MatrixXd null_space_basis(const MatrixXd& A, double tol, int dim_if_empty) {
  if (A.rows() == 0) {
    const int d = A.cols() > 0 ? static_cast<int>(A.cols()) : dim_if_empty;
    return MatrixXd::Identity(d, d);
  }
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = tol * std::max(1.0, sv.size() > 0 ? sv[0] : 0.0);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) ++rank;
  const int k = static_cast<int>(A.cols()) - rank;
  return svd.matrixV().rightCols(k);
}

VectorXd project_onto_cone(const PolyhedralCone& cone, const VectorXd& v, int sweeps) {
  const int nI = static_cast<int>(cone.I.rows());
  const bool hasE = cone.E.rows() > 0;
  // Precompute the orthogonal projector onto {E d = 0}.
  MatrixXd PE;
  if (hasE) {
    MatrixXd B = null_space_basis(cone.E, 1e-12, cone.dim);
    PE = B * B.transpose();
  }
  VectorXd x = v;
  VectorXd pE = VectorXd::Zero(cone.dim);
  MatrixXd pI = MatrixXd::Zero(nI, cone.dim);  // Dykstra corrections per halfspace
  for (int s = 0; s < sweeps; ++s) {
    if (hasE) {
      const VectorXd y = x + pE;
      const VectorXd px = PE * y;
      pE = y - px;
      x = px;
    }
    for (int i = 0; i < nI; ++i) {
      const VectorXd y = x + pI.row(i).transpose();
      const VectorXd a = cone.I.row(i).transpose();
      const double an2 = a.squaredNorm();
      VectorXd px = y;
      if (an2 > 0) {
        const double viol = a.dot(y);
        if (viol > 0) px = y - (viol / an2) * a;
      }
      pI.row(i) = (y - px).transpose();
      x = px;
    }
  }
  return x;
}

std::vector<VectorXd> sample_cone_directions(const PolyhedralCone& cone, int count,
                                             Rng& rng, double tol) {
  std::vector<VectorXd> out;
  auto push_unique = [&](const VectorXd& d) {
    for (const auto& w : out)
      if ((w - d).lpNorm<Eigen::Infinity>() <= 1e-6) return;
    out.push_back(d);
  };
  if (cone.dim == 1) {
    VectorXd d(1);
    for (double s : {1.0, -1.0}) {
      d[0] = s;
      if (cone.contains(d, tol)) push_unique(d);
    }
    return out;
  }
  // Lineality space vectors are members by construction.
  MatrixXd rows(cone.E.rows() + cone.I.rows(), cone.dim);
  if (cone.E.rows() > 0) rows.topRows(cone.E.rows()) = cone.E;
  if (cone.I.rows() > 0) rows.bottomRows(cone.I.rows()) = cone.I;
  MatrixXd L = null_space_basis(rows, 1e-12, cone.dim);
  for (int j = 0; j < L.cols() && static_cast<int>(out.size()) < count; ++j) {
    push_unique(L.col(j));
    push_unique(-L.col(j));
  }
  std::normal_distribution<double> N(0.0, 1.0);
  const int max_tries = 30 * count + 100;
  for (int t = 0; t < max_tries && static_cast<int>(out.size()) < count; ++t) {
    VectorXd d(cone.dim);
    for (int i = 0; i < cone.dim; ++i) d[i] = N(rng);
    d = project_onto_cone(cone, d);
    const double nrm = d.norm();
    if (nrm < 1e-8) continue;
    d /= nrm;
    if (cone.contains(d, tol)) push_unique(d);
  }
  return out;
}

}  // namespace bilevel
