#pragma once

#include <vector>

#include "bilevel/common.hpp"

namespace bilevel {

// Polyhedral cone {d : E d = 0, I d <= 0}. Either block may be empty.
struct PolyhedralCone {
  MatrixXd E;
  MatrixXd I;
  int dim = 0;

  static PolyhedralCone all(int dim) {
    PolyhedralCone c;
    c.dim = dim;
    c.E.resize(0, dim);
    c.I.resize(0, dim);
    return c;
  }

  bool is_subspace() const { return I.rows() == 0; }

  // Scale-aware membership: residuals measured against tol * (1 + |d|).
  bool contains(const VectorXd& d, double tol) const;
};

// Orthonormal basis of the null space of A (columns of the result). For a
// rowless A returns the identity. Rank decisions use tol relative to the
// largest singular value.
MatrixXd null_space_basis(const MatrixXd& A, double tol, int dim_if_empty);

// Euclidean projection onto the cone via Dykstra's alternating scheme over
// the equality subspace and each halfspace. Approximate but tight for the
// small cones that occur here.
VectorXd project_onto_cone(const PolyhedralCone& cone, const VectorXd& v,
                           int sweeps = 80);

// Unit directions inside the cone: exact {+1,-1} filtering in dimension one,
// otherwise lineality-space vectors plus projected random samples. May return
// fewer than `count` (possibly none, when the cone is {0}).
std::vector<VectorXd> sample_cone_directions(const PolyhedralCone& cone, int count,
                                             Rng& rng, double tol);

}  // namespace bilevel
