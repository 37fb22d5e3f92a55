#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "signkit/common.hpp"

namespace signkit {

using RowMatrixX3d = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Named joint index sets. Every joint belongs to exactly one set.
struct JointPartition {
  std::vector<int> root;
  std::vector<int> body;
  std::vector<int> jaw;
  std::vector<int> left_eye;
  std::vector<int> right_eye;
  std::vector<int> left_hand;
  std::vector<int> right_hand;

  static constexpr std::array<const char*, 7> kNames = {
      "root", "body", "jaw", "left_eye", "right_eye", "left_hand", "right_hand"};

  std::vector<int>& set(std::size_t i) {
    std::vector<int>* sets[] = {&root, &body, &jaw, &left_eye, &right_eye, &left_hand, &right_hand};
    return *sets[i];
  }
  const std::vector<int>& set(std::size_t i) const {
    return const_cast<JointPartition*>(this)->set(i);
  }
};

struct ModelDims {
  int n_vertices = 10475;
  int n_joints = 54;
  int n_shape = 10;
  int n_expr = 10;
  int n_body_latent = 32;
  int n_hand_latent = 12;
  JointPartition partition;

  // Entries of the per-frame parameter vector, translation excluded.
  int feature_size() const { return n_shape + 3 + 2 * n_hand_latent + 3 + 6 + n_expr + n_body_latent; }

  bool is_full_scale_layout() const {
    return n_shape == 10 && n_expr == 10 && n_body_latent == 32 && n_hand_latent == 12;
  }
};

// Offsets into the packed parameter vector. The first feature_size() entries follow the
// canonical feature order; translation is appended last.
struct ParamOffsets {
  int shape, global_orient, lhand, rhand, jaw, leye, reye, expression, body, translation, total;

  explicit ParamOffsets(const ModelDims& d) {
    shape = 0;
    global_orient = shape + d.n_shape;
    lhand = global_orient + 3;
    rhand = lhand + d.n_hand_latent;
    jaw = rhand + d.n_hand_latent;
    leye = jaw + 3;
    reye = leye + 3;
    expression = reye + 3;
    body = expression + d.n_expr;
    translation = body + d.n_body_latent;
    total = translation + 3;
  }
};

struct Params {
  Eigen::VectorXd shape;
  Eigen::Vector3d global_orient = Eigen::Vector3d::Zero();
  Eigen::VectorXd lhand_latent;
  Eigen::VectorXd rhand_latent;
  Eigen::Vector3d jaw = Eigen::Vector3d::Zero();
  Eigen::Vector3d leye = Eigen::Vector3d::Zero();
  Eigen::Vector3d reye = Eigen::Vector3d::Zero();
  Eigen::VectorXd expression;
  Eigen::VectorXd body_latent;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Params zeros(const ModelDims& d) {
    Params p;
    p.shape = Eigen::VectorXd::Zero(d.n_shape);
    p.lhand_latent = Eigen::VectorXd::Zero(d.n_hand_latent);
    p.rhand_latent = Eigen::VectorXd::Zero(d.n_hand_latent);
    p.expression = Eigen::VectorXd::Zero(d.n_expr);
    p.body_latent = Eigen::VectorXd::Zero(d.n_body_latent);
    return p;
  }

  void check(const ModelDims& d) const {
    require(shape.size() == d.n_shape && expression.size() == d.n_expr &&
                lhand_latent.size() == d.n_hand_latent && rhand_latent.size() == d.n_hand_latent &&
                body_latent.size() == d.n_body_latent,
            ErrorCode::DimensionMismatch, "params do not match model dims");
  }
};

inline Eigen::VectorXd pack_params(const ModelDims& d, const Params& p) {
  p.check(d);
  const ParamOffsets o(d);
  Eigen::VectorXd x(o.total);
  x.segment(o.shape, d.n_shape) = p.shape;
  x.segment<3>(o.global_orient) = p.global_orient;
  x.segment(o.lhand, d.n_hand_latent) = p.lhand_latent;
  x.segment(o.rhand, d.n_hand_latent) = p.rhand_latent;
  x.segment<3>(o.jaw) = p.jaw;
  x.segment<3>(o.leye) = p.leye;
  x.segment<3>(o.reye) = p.reye;
  x.segment(o.expression, d.n_expr) = p.expression;
  x.segment(o.body, d.n_body_latent) = p.body_latent;
  x.segment<3>(o.translation) = p.translation;
  return x;
}

inline Params unpack_params(const ModelDims& d, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const ParamOffsets o(d);
  require(x.size() == o.total, ErrorCode::DimensionMismatch, "packed parameter vector has wrong length");
  Params p;
  p.shape = x.segment(o.shape, d.n_shape);
  p.global_orient = x.segment<3>(o.global_orient);
  p.lhand_latent = x.segment(o.lhand, d.n_hand_latent);
  p.rhand_latent = x.segment(o.rhand, d.n_hand_latent);
  p.jaw = x.segment<3>(o.jaw);
  p.leye = x.segment<3>(o.leye);
  p.reye = x.segment<3>(o.reye);
  p.expression = x.segment(o.expression, d.n_expr);
  p.body_latent = x.segment(o.body, d.n_body_latent);
  p.translation = x.segment<3>(o.translation);
  return p;
}

// Joints used by the coarse global alignment; -1 when the model does not name them.
struct Landmarks {
  int pelvis = -1;
  int left_shoulder = -1;
  int right_shoulder = -1;

  bool valid() const { return pelvis >= 0 && left_shoulder >= 0 && right_shoulder >= 0; }
};

// Parametric body model. Immutable after finalize(); forward() is pure.
//
// Vertex-indexed blend-shape bases are stored flattened as (3 * n_vertices) x n_coeffs with
// row 3 * v + axis, matching the usual SMPL-family layout.
struct BodyModel {
  ModelDims dims;
  RowMatrixX3d v_template;
  Eigen::MatrixXd shape_basis;
  Eigen::MatrixXd expr_basis;
  Eigen::MatrixXd joint_regressor;   // n_joints x n_vertices
  std::vector<int> parent;           // -1 for the root
  Eigen::MatrixXd skin_weights;      // n_vertices x n_joints
  Eigen::MatrixXd body_pose_basis;   // (3 |body|) x n_body_latent
  Eigen::MatrixXd lhand_pose_basis;  // (3 |left_hand|) x n_hand_latent
  Eigen::MatrixXd rhand_pose_basis;
  Landmarks landmarks;

  // Derived by finalize().
  std::vector<int> order;            // parents precede children
  RowMatrixX3d joint_template;       // joint_regressor * v_template
  Eigen::MatrixXd joint_shape_basis; // (3 n_joints) x n_shape
  Eigen::MatrixXd joint_expr_basis;  // (3 n_joints) x n_expr

  void validate() const;
  void finalize();
};

namespace detail {

inline Eigen::MatrixXd regress_basis(const Eigen::MatrixXd& regressor, const Eigen::MatrixXd& basis) {
  const Eigen::Index nj = regressor.rows();
  const Eigen::Index nv = regressor.cols();
  Eigen::MatrixXd out(3 * nj, basis.cols());
  Eigen::MatrixXd axis_rows(nv, basis.cols());
  for (int axis = 0; axis < 3; ++axis) {
    for (Eigen::Index v = 0; v < nv; ++v) axis_rows.row(v) = basis.row(3 * v + axis);
    const Eigen::MatrixXd r = regressor * axis_rows;
    for (Eigen::Index j = 0; j < nj; ++j) out.row(3 * j + axis) = r.row(j);
  }
  return out;
}

// Topological order of the parent array; throws on cycles or bad indices.
inline std::vector<int> topological_order(const std::vector<int>& parent) {
  const int n = static_cast<int>(parent.size());
  std::vector<std::vector<int>> children(n);
  int root = -1;
  for (int j = 0; j < n; ++j) {
    const int p = parent[j];
    if (p < 0) {
      require(root < 0, ErrorCode::CyclicParent, "parent array has more than one root");
      root = j;
    } else {
      require(p < n && p != j, ErrorCode::CyclicParent,
              "joint " + std::to_string(j) + " has invalid parent " + std::to_string(p));
      children[p].push_back(j);
    }
  }
  require(root >= 0, ErrorCode::CyclicParent, "parent array has no root");
  std::vector<int> order;
  order.reserve(n);
  order.push_back(root);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c : children[order[i]]) order.push_back(c);
  require(static_cast<int>(order.size()) == n, ErrorCode::CyclicParent,
          "parent array contains a cycle");
  return order;
}

}  // namespace detail

inline void BodyModel::validate() const {
  const ModelDims& d = dims;
  require(d.n_vertices > 0 && d.n_joints > 0 && d.n_shape >= 0 && d.n_expr >= 0 &&
              d.n_body_latent >= 0 && d.n_hand_latent >= 0,
          ErrorCode::DimensionMismatch, "dims must be positive");

  auto expect = [](bool ok, const std::string& name) {
    require(ok, ErrorCode::DimensionMismatch, name + " has wrong dimensions");
  };
  const int nv = d.n_vertices;
  const int nj = d.n_joints;
  expect(v_template.rows() == nv, "v_template");
  expect(shape_basis.rows() == 3 * nv && shape_basis.cols() == d.n_shape, "shape_basis");
  expect(expr_basis.rows() == 3 * nv && expr_basis.cols() == d.n_expr, "expr_basis");
  expect(joint_regressor.rows() == nj && joint_regressor.cols() == nv, "joint_regressor");
  expect(static_cast<int>(parent.size()) == nj, "parent");
  expect(skin_weights.rows() == nv && skin_weights.cols() == nj, "skin_weights");

  // Partition: disjoint, covering, singleton root/jaw/eyes.
  std::vector<int> seen(nj, 0);
  for (std::size_t s = 0; s < JointPartition::kNames.size(); ++s) {
    for (int j : d.partition.set(s)) {
      require(j >= 0 && j < nj, ErrorCode::BadPartition,
              std::string("joint_partition.") + JointPartition::kNames[s] + " index out of range");
      require(seen[j]++ == 0, ErrorCode::BadPartition,
              "joint " + std::to_string(j) + " appears in more than one partition set");
    }
  }
  for (int j = 0; j < nj; ++j)
    require(seen[j] == 1, ErrorCode::BadPartition, "joint " + std::to_string(j) + " is in no partition set");
  require(d.partition.root.size() == 1, ErrorCode::BadPartition, "root set must have exactly one joint");
  require(d.partition.jaw.size() == 1, ErrorCode::BadPartition, "jaw set must have exactly one joint");
  require(d.partition.left_eye.size() == 1 && d.partition.right_eye.size() == 1, ErrorCode::BadPartition,
          "each eye set must have exactly one joint");

  expect(body_pose_basis.rows() == 3 * static_cast<int>(d.partition.body.size()) &&
             body_pose_basis.cols() == d.n_body_latent,
         "body_pose_basis");
  expect(lhand_pose_basis.rows() == 3 * static_cast<int>(d.partition.left_hand.size()) &&
             lhand_pose_basis.cols() == d.n_hand_latent,
         "lhand_pose_basis");
  expect(rhand_pose_basis.rows() == 3 * static_cast<int>(d.partition.right_hand.size()) &&
             rhand_pose_basis.cols() == d.n_hand_latent,
         "rhand_pose_basis");

  const auto order_checked = detail::topological_order(parent);
  require(order_checked.front() == d.partition.root.front(), ErrorCode::CyclicParent,
          "tree root is not the partition root joint");

  for (int v = 0; v < nv; ++v) {
    const double sum = skin_weights.row(v).sum();
    require(skin_weights.row(v).minCoeff() >= 0.0 && std::abs(sum - 1.0) <= 1e-9,
            ErrorCode::SkinWeightsNotNormalized,
            "skin_weights row " + std::to_string(v) + " sums to " + std::to_string(sum));
  }
  for (int j = 0; j < nj; ++j) {
    const double sum = joint_regressor.row(j).sum();
    require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::RegressorNotNormalized,
            "joint_regressor row " + std::to_string(j) + " sums to " + std::to_string(sum));
  }
  for (int lm : {landmarks.pelvis, landmarks.left_shoulder, landmarks.right_shoulder})
    require(lm < nj, ErrorCode::DimensionMismatch, "landmark joint index out of range");
}

inline void BodyModel::finalize() {
  validate();
  order = detail::topological_order(parent);
  joint_template = joint_regressor * v_template;
  joint_shape_basis = detail::regress_basis(joint_regressor, shape_basis);
  joint_expr_basis = detail::regress_basis(joint_regressor, expr_basis);
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

namespace detail {

// R = I + a [v]x + b [v]x^2 with a = sin(t)/t, b = (1 - cos t)/t^2, and the radial
// derivatives da = a'(t)/t, db = b'(t)/t. Series below 1e-4 rad.
struct RodriguesCoeffs {
  double a, b, da, db;
};

inline RodriguesCoeffs rodrigues_coeffs(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-4) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            -1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0};
  }
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  return {s / theta, (1.0 - c) / t2, (theta * c - s) / (t2 * theta),
          (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)};
}

}  // namespace detail

// Axis-angle exponential map.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& aa) {
  const auto k = detail::rodrigues_coeffs(aa.norm());
  const Eigen::Matrix3d s = skew(aa);
  return Eigen::Matrix3d::Identity() + k.a * s + k.b * s * s;
}

// Rotation plus its partial derivatives dR/daa_i.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& aa, std::array<Eigen::Matrix3d, 3>& d_rot) {
  const auto k = detail::rodrigues_coeffs(aa.norm());
  const Eigen::Matrix3d s = skew(aa);
  const Eigen::Matrix3d s2 = s * s;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Matrix3d ei = skew(Eigen::Vector3d::Unit(i));
    d_rot[i] = k.da * aa[i] * s + k.a * ei + k.db * aa[i] * s2 + k.b * (ei * s + s * ei);
  }
  return Eigen::Matrix3d::Identity() + k.a * s + k.b * s2;
}

struct RestShape {
  RowMatrixX3d vertices;
  RowMatrixX3d joints;
};

inline RestShape rest_shape(const BodyModel& model, const Eigen::Ref<const Eigen::VectorXd>& shape,
                            const Eigen::Ref<const Eigen::VectorXd>& expression) {
  require(shape.size() == model.dims.n_shape && expression.size() == model.dims.n_expr,
          ErrorCode::DimensionMismatch, "shape/expression length does not match model dims");
  const Eigen::VectorXd offsets = model.shape_basis * shape + model.expr_basis * expression;
  RestShape rest;
  rest.vertices = model.v_template +
                  Eigen::Map<const RowMatrixX3d>(offsets.data(), model.dims.n_vertices, 3);
  rest.joints = model.joint_regressor * rest.vertices;
  return rest;
}

// Rest joints via the pre-regressed joint bases (same result as rest_shape().joints).
inline RowMatrixX3d rest_joints(const BodyModel& model, const Eigen::Ref<const Eigen::VectorXd>& shape,
                                const Eigen::Ref<const Eigen::VectorXd>& expression) {
  const Eigen::VectorXd offsets = model.joint_shape_basis * shape + model.joint_expr_basis * expression;
  return model.joint_template + Eigen::Map<const RowMatrixX3d>(offsets.data(), model.dims.n_joints, 3);
}

// Per-joint axis-angles (n_joints x 3) from the packed latents.
inline RowMatrixX3d expand_pose(const BodyModel& model, const Params& params) {
  params.check(model.dims);
  const JointPartition& part = model.dims.partition;
  RowMatrixX3d pose = RowMatrixX3d::Zero(model.dims.n_joints, 3);
  auto scatter = [&pose](const std::vector<int>& joints, const Eigen::VectorXd& flat) {
    for (std::size_t k = 0; k < joints.size(); ++k) pose.row(joints[k]) = flat.segment<3>(3 * k).transpose();
  };
  pose.row(part.root.front()) = params.global_orient.transpose();
  scatter(part.body, model.body_pose_basis * params.body_latent);
  scatter(part.left_hand, model.lhand_pose_basis * params.lhand_latent);
  scatter(part.right_hand, model.rhand_pose_basis * params.rhand_latent);
  pose.row(part.jaw.front()) = params.jaw.transpose();
  pose.row(part.left_eye.front()) = params.leye.transpose();
  pose.row(part.right_eye.front()) = params.reye.transpose();
  return pose;
}

struct PosedBody {
  RowMatrixX3d vertices;
  RowMatrixX3d joints_rest;
  RowMatrixX3d joints_posed;
  std::vector<Eigen::Matrix3d> joint_rotations_world;
};

// World rotations and joint displacements from the rest pose. Displacements are tracked
// instead of absolute positions so the identity pose reproduces the rest joints exactly.
struct Kinematics {
  std::vector<Eigen::Matrix3d> local;
  std::vector<Eigen::Matrix3d> world;
  RowMatrixX3d displacement;  // posed joint minus rest joint, translation excluded
};

inline Kinematics forward_kinematics(const BodyModel& model, const RowMatrixX3d& joints_rest,
                                     const RowMatrixX3d& pose) {
  const int nj = model.dims.n_joints;
  Kinematics k;
  k.local.resize(nj);
  k.world.resize(nj);
  k.displacement.resize(nj, 3);
  for (int j : model.order) {
    k.local[j] = rodrigues(pose.row(j).transpose());
    const int p = model.parent[j];
    if (p < 0) {
      k.world[j] = k.local[j];
      k.displacement.row(j).setZero();
    } else {
      k.world[j] = k.world[p] * k.local[j];
      const Eigen::Vector3d bone = (joints_rest.row(j) - joints_rest.row(p)).transpose();
      k.displacement.row(j) =
          k.displacement.row(p) + ((k.world[p] - Eigen::Matrix3d::Identity()) * bone).transpose();
    }
  }
  return k;
}

// Linear blend skinning written as x + sum_j w_j ((R_j - I)(x - J_j) + d_j), which equals
// sum_j w_j (R_j (x - J_j) + J_j + d_j) for normalized weights.
inline PosedBody forward(const BodyModel& model, const Params& params) {
  const RowMatrixX3d pose = expand_pose(model, params);
  RestShape rest = rest_shape(model, params.shape, params.expression);
  Kinematics k = forward_kinematics(model, rest.joints, pose);

  const int nj = model.dims.n_joints;
  // Row j holds [R_j - I | d_j - (R_j - I) J_j] flattened row-major.
  Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor> transforms(nj, 12);
  for (int j = 0; j < nj; ++j) {
    const Eigen::Matrix3d a = k.world[j] - Eigen::Matrix3d::Identity();
    const Eigen::Vector3d b = k.displacement.row(j).transpose() - a * rest.joints.row(j).transpose();
    for (int r = 0; r < 3; ++r) {
      transforms.block<1, 3>(j, 4 * r) = a.row(r);
      transforms(j, 4 * r + 3) = b[r];
    }
  }
  const Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor> blended = model.skin_weights * transforms;

  PosedBody out;
  out.vertices.resize(model.dims.n_vertices, 3);
  for (int v = 0; v < model.dims.n_vertices; ++v) {
    const Eigen::Vector3d x = rest.vertices.row(v).transpose();
    for (int r = 0; r < 3; ++r)
      out.vertices(v, r) = x[r] + (blended.block<1, 3>(v, 4 * r).dot(x) + blended(v, 4 * r + 3));
  }
  out.vertices.rowwise() += params.translation.transpose();
  out.joints_posed = rest.joints + k.displacement;
  out.joints_posed.rowwise() += params.translation.transpose();
  out.joints_rest = std::move(rest.joints);
  out.joint_rotations_world = std::move(k.world);
  return out;
}

}  // namespace signkit
