#pragma once

#include "glap/curvature.hpp"
#include "glap/likelihood.hpp"
#include "glap/net.hpp"

#include <vector>

namespace glap {

// Piecewise-linear path through weight space.
struct PathSpec {
  std::vector<ParamVector> waypoints;
  std::size_t subdivisions = 1;  // per segment

  void validate() const;
};

// Length of the path under the pullback (pseudo-)metric J^T H J, by the
// midpoint rule on every subdivision.
double pullback_length(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik, const PathSpec& path);

// Scales the incoming weights and bias of one ReLU unit by alpha and its
// outgoing weights by 1/alpha. layer_index counts hidden layers from 0.
struct ReparamAction {
  std::size_t layer_index = 0;
  std::size_t unit_index = 0;
  double alpha = 1.0;
};

ParamVector apply_reparam(const NetworkSpec& spec, const ParamVector& w, const ReparamAction& action);

// Diagonal of the Jacobian of w -> apply_reparam(w).
Vector reparam_jacobian_diagonal(const NetworkSpec& spec, const ReparamAction& action);

// d/d alpha of apply_reparam at alpha = 1.
ParamVector reparam_tangent(const NetworkSpec& spec, const ParamVector& w, const ReparamAction& action);

struct TransformReport {
  double max_abs_error = 0.0;
};

// Compares GGN(w) with Dg^T GGN(g(w)) Dg entrywise.
TransformReport check_ggn_transform(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik,
                                    const ParamVector& w, const ReparamAction& action,
                                    const DenseBudget& budget = {});

// ||(I - P_ker) v|| / ||v|| for the reparameterization tangent v, with the
// kernel projector taken from a dense eigendecomposition of the GGN.
double kernel_alignment(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik, const ParamVector& w,
                        const ReparamAction& action, double rank_tol = 1e-10, const DenseBudget& budget = {});

// Same ratio for an arbitrary direction v.
double image_fraction(const CurvatureOperator& op, const ParamVector& v, double rank_tol = 1e-10,
                      const DenseBudget& budget = {});

}  // namespace glap
