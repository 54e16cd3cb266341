#include "glap/geometry.hpp"

#include <cmath>

namespace glap {

namespace {

struct UnitSlices {
  std::vector<Eigen::Index> incoming;
  std::vector<Eigen::Index> outgoing;
};

UnitSlices unit_slices(const Network& net, const ReparamAction& action) {
  const auto& spec = net.spec();
  if (action.layer_index >= spec.hidden.size()) {
    throw DimensionError("reparameterization layer " + std::to_string(action.layer_index) +
                         " is not a hidden layer");
  }
  if (action.unit_index >= spec.hidden[action.layer_index]) {
    throw DimensionError("unit " + std::to_string(action.unit_index) + " does not exist in hidden layer " +
                         std::to_string(action.layer_index));
  }
  if (spec.activation != Activation::relu) throw Error("scaling reparameterization needs relu activations");

  const auto& in = net.layout()[action.layer_index];
  const auto& out = net.layout()[action.layer_index + 1];
  UnitSlices s;
  for (std::size_t c = 0; c < in.cols; ++c) {
    s.incoming.push_back(static_cast<Eigen::Index>(in.weight_offset + action.unit_index * in.cols + c));
  }
  if (in.has_bias) s.incoming.push_back(static_cast<Eigen::Index>(in.bias_offset + action.unit_index));
  for (std::size_t r = 0; r < out.rows; ++r) {
    s.outgoing.push_back(static_cast<Eigen::Index>(out.weight_offset + r * out.cols + action.unit_index));
  }
  return s;
}

}  // namespace

void PathSpec::validate() const {
  if (waypoints.size() < 2) throw DimensionError("path needs at least two waypoints");
  if (subdivisions == 0) throw DimensionError("path needs at least one subdivision per segment");
  for (const auto& p : waypoints) {
    if (p.size() != waypoints.front().size()) throw DimensionError("path waypoints differ in dimension");
  }
}

double pullback_length(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik, const PathSpec& path) {
  path.validate();
  const Network net(spec);
  const double inv_sub = 1.0 / static_cast<double>(path.subdivisions);
  double length = 0.0;
  ForwardTrace trace;
  for (std::size_t seg = 0; seg + 1 < path.waypoints.size(); ++seg) {
    const ParamVector& a = path.waypoints[seg];
    const ParamVector step = (path.waypoints[seg + 1] - a) * inv_sub;
    if (step.squaredNorm() == 0.0) continue;
    for (std::size_t k = 0; k < path.subdivisions; ++k) {
      const ParamVector mid = a + (static_cast<double>(k) + 0.5) * step;
      const Matrix preds = net.forward_batch(mid, data.inputs, &trace);
      const Matrix jv = net.jvp_batch(mid, trace, step);
      double sq = 0.0;
      for (Eigen::Index n = 0; n < jv.rows(); ++n) {
        const Vector u = jv.row(n).transpose();
        sq += u.dot(apply_output_hessian(lik, preds.row(n).transpose(), u));
      }
      length += std::sqrt(std::max(sq, 0.0));
    }
  }
  return length;
}

ParamVector apply_reparam(const NetworkSpec& spec, const ParamVector& w, const ReparamAction& action) {
  if (!(action.alpha > 0.0)) throw Error("reparameterization alpha must be positive");
  const Network net(spec);
  if (static_cast<std::size_t>(w.size()) != net.param_count()) throw DimensionError("weights do not match network");
  const auto s = unit_slices(net, action);
  ParamVector out = w;
  for (auto i : s.incoming) out[i] *= action.alpha;
  for (auto i : s.outgoing) out[i] /= action.alpha;
  return out;
}

Vector reparam_jacobian_diagonal(const NetworkSpec& spec, const ReparamAction& action) {
  if (!(action.alpha > 0.0)) throw Error("reparameterization alpha must be positive");
  const Network net(spec);
  const auto s = unit_slices(net, action);
  Vector diag = Vector::Ones(static_cast<Eigen::Index>(net.param_count()));
  for (auto i : s.incoming) diag[i] = action.alpha;
  for (auto i : s.outgoing) diag[i] = 1.0 / action.alpha;
  return diag;
}

ParamVector reparam_tangent(const NetworkSpec& spec, const ParamVector& w, const ReparamAction& action) {
  const Network net(spec);
  if (static_cast<std::size_t>(w.size()) != net.param_count()) throw DimensionError("weights do not match network");
  const auto s = unit_slices(net, action);
  ParamVector v = ParamVector::Zero(w.size());
  for (auto i : s.incoming) v[i] = w[i];
  for (auto i : s.outgoing) v[i] = -w[i];
  return v;
}

TransformReport check_ggn_transform(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik,
                                    const ParamVector& w, const ReparamAction& action, const DenseBudget& budget) {
  const ParamVector moved = apply_reparam(spec, w, action);
  const Vector dg = reparam_jacobian_diagonal(spec, action);
  const Matrix g_w = CurvatureOperator(spec, w, data, lik).dense(budget);
  const Matrix g_moved = CurvatureOperator(spec, moved, data, lik).dense(budget);
  const Matrix pulled = dg.asDiagonal() * g_moved * dg.asDiagonal();
  TransformReport r;
  r.max_abs_error = (g_w - pulled).cwiseAbs().maxCoeff();
  return r;
}

double image_fraction(const CurvatureOperator& op, const ParamVector& v, double rank_tol, const DenseBudget& budget) {
  const double norm = v.norm();
  if (norm == 0.0) throw Error("direction is zero");
  const LowRankEigen eig = exact_eigenpairs(op, rank_tol, budget);
  if (eig.rank() == 0) return 0.0;
  return (eig.basis.transpose() * v).norm() / norm;
}

double kernel_alignment(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik, const ParamVector& w,
                        const ReparamAction& action, double rank_tol, const DenseBudget& budget) {
  const ParamVector v = reparam_tangent(spec, w, action);
  if (v.norm() == 0.0) throw Error("reparameterization tangent is zero");
  return image_fraction(CurvatureOperator(spec, w, data, lik), v, rank_tol, budget);
}

}  // namespace glap
